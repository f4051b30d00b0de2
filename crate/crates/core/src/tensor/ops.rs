//! Elementwise arithmetic, reductions and layout ops.

use super::kernels::{axis_split, permute_copy};
use super::{dim_err, Result, Tensor};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        );
    }
    Ok(())
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        Tensor::from_op("add", data, self.shape().to_vec(), &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a - b)
            .collect();
        Tensor::from_op("sub", data, self.shape().to_vec(), &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
        })
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a * b)
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op("mul", data, self.shape().to_vec(), &[self, other], move |g, _| {
            let ga = g.iter().zip(b.data().iter()).map(|(g, b)| g * b).collect();
            let gb = g.iter().zip(a.data().iter()).map(|(g, a)| g * a).collect();
            vec![Some(ga), Some(gb)]
        })
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * s).collect();
        Tensor::from_op("scale", data, self.shape().to_vec(), &[self], move |g, _| {
            vec![Some(g.iter().map(|v| v * s).collect())]
        })
    }

    pub fn add_scalar(&self, s: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v + s).collect();
        Tensor::from_op("add_scalar", data, self.shape().to_vec(), &[self], |g, _| {
            vec![Some(g.to_vec())]
        })
    }

    pub fn square(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * v).collect();
        let x = self.clone();
        Tensor::from_op("square", data, self.shape().to_vec(), &[self], move |g, _| {
            vec![Some(
                g.iter()
                    .zip(x.data().iter())
                    .map(|(g, x)| 2.0 * g * x)
                    .collect(),
            )]
        })
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![s], vec![1], &[self], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        let s: f64 = self.data().iter().sum::<f64>() / n as f64;
        Tensor::from_op("mean", vec![s], vec![1], &[self], move |g, _| {
            vec![Some(vec![g[0] / n as f64; n])]
        })
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.ndim() {
            return dim_err("mean_axis", format!("axis {axis} out of range"));
        }
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let row = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        drop(x);
        Tensor::from_op(
            "mean_axis",
            out,
            reduced_shape(self.shape(), axis),
            &[self],
            move |g, _| {
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        let dst = &mut dx[(o * len + a) * inner..(o * len + a + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d = s * inv);
                    }
                }
                vec![Some(dx)]
            },
        )
    }

    /// Maximum over `axis` (removed). The gradient flows to the first
    /// maximal entry.
    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.ndim() {
            return dim_err("max_axis", format!("axis {axis} out of range"));
        }
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    let v = x[(o * len + a) * inner + i];
                    let slot = o * inner + i;
                    if v > out[slot] {
                        out[slot] = v;
                        arg[slot] = a;
                    }
                }
            }
        }
        drop(x);
        Tensor::from_op(
            "max_axis",
            out,
            reduced_shape(self.shape(), axis),
            &[self],
            move |g, _| {
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        dx[(o * len + arg[slot]) * inner + i] = g[slot];
                    }
                }
                vec![Some(dx)]
            },
        )
    }

    /// Gathers `indices` along `axis`; repeated indices are allowed and their
    /// gradients add.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        if axis >= self.ndim() {
            return dim_err("index_select", format!("axis {axis} out of range"));
        }
        if indices.is_empty() {
            return dim_err("index_select", "empty index list");
        }
        let (outer, len, inner) = axis_split(self.shape(), axis);
        if let Some(bad) = indices.iter().find(|&&i| i >= len) {
            return dim_err(
                "index_select",
                format!("index {bad} out of range for extent {len}"),
            );
        }
        let x = self.data();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let start = (o * len + i) * inner;
                out.extend_from_slice(&x[start..start + inner]);
            }
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape[axis] = indices.len();
        let idx = indices.to_vec();
        Tensor::from_op("index_select", out, shape, &[self], move |g, _| {
            let mut dx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for (j, &i) in idx.iter().enumerate() {
                    let src = &g[(o * idx.len() + j) * inner..(o * idx.len() + j + 1) * inner];
                    let dst = &mut dx[(o * len + i) * inner..(o * len + i + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
            vec![Some(dx)]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return dim_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            );
        }
        Tensor::from_op("reshape", self.to_vec(), shape.to_vec(), &[self], |g, _| {
            vec![Some(g.to_vec())]
        })
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return dim_err(
                "permute",
                format!("{axes:?} is not a permutation of {nd} axes"),
            );
        }
        let shape = self.shape().to_vec();
        let out = permute_copy(&self.data(), &shape, axes);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let mut inverse = vec![0; nd];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let grad_shape = out_shape.clone();
        Tensor::from_op("permute", out, out_shape, &[self], move |g, _| {
            vec![Some(permute_copy(g, &grad_shape, &inverse))]
        })
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last2(&self) -> Result<Tensor> {
        let nd = self.ndim();
        if nd < 2 {
            return dim_err("transpose_last2", "needs at least 2 axes");
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 1, nd - 2);
        self.permute(&axes)
    }
}
