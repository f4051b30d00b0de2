//! Pointwise nonlinearities, softmax and cross-entropy.

use super::kernels::axis_split;
use super::{dim_err, Result, Tensor, TensorError};

/// `sqrt(2/pi)` and the cubic coefficient of the tanh GELU approximation.
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// `(2 tanh x - 1) / (1 + tanh^2 x)`. Not the clamp usually called Hardtanh:
/// it is smooth, maps 0 to -1 and saturates at 0.5 and -1.5.
pub fn hardtanh_paper_scalar(x: f64) -> f64 {
    let t = x.tanh();
    (2.0 * t - 1.0) / (1.0 + t * t)
}

fn hardtanh_paper_grad(x: f64) -> f64 {
    let t = x.tanh();
    let d = 1.0 + t * t;
    (2.0 + 2.0 * t - 2.0 * t * t) / (d * d) * (1.0 - t * t)
}

impl Tensor {
    fn pointwise(
        &self,
        op: &'static str,
        f: fn(f64) -> f64,
        df: fn(f64) -> f64,
    ) -> Result<Tensor> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        let x = self.clone();
        Tensor::from_op(op, data, self.shape().to_vec(), &[self], move |g, _| {
            vec![Some(
                g.iter()
                    .zip(x.data().iter())
                    .map(|(g, &v)| g * df(v))
                    .collect(),
            )]
        })
    }

    pub fn gelu(&self) -> Result<Tensor> {
        self.pointwise("gelu", gelu_scalar, gelu_grad)
    }

    pub fn tanh_exact(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.tanh()).collect();
        Tensor::from_op("tanh", data, self.shape().to_vec(), &[self], |g, y| {
            vec![Some(g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect())]
        })
    }

    pub fn hardtanh_paper(&self) -> Result<Tensor> {
        self.pointwise("hardtanh_paper", hardtanh_paper_scalar, hardtanh_paper_grad)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.ndim() {
            return dim_err("softmax", format!("axis {axis} out of range for {:?}", self.shape()));
        }
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| out[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..len {
                    let e = (out[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    z += e;
                }
                for a in 0..len {
                    out[idx(a)] /= z;
                }
            }
        }
        Tensor::from_op("softmax", out, self.shape().to_vec(), &[self], move |g, y| {
            let mut dx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |a: usize| (o * len + a) * inner + i;
                    let dot: f64 = (0..len).map(|a| g[idx(a)] * y[idx(a)]).sum();
                    for a in 0..len {
                        dx[idx(a)] = y[idx(a)] * (g[idx(a)] - dot);
                    }
                }
            }
            vec![Some(dx)]
        })
    }

    /// Mean negative log-likelihood of `labels` under `softmax(self)` for
    /// logits shaped `B x N`.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let &[b, n] = self.shape() else {
            return dim_err("cross_entropy", format!("logits must be B x N, got {:?}", self.shape()));
        };
        if labels.len() != b {
            return dim_err(
                "cross_entropy",
                format!("{} labels for batch of {b}", labels.len()),
            );
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(TensorError::Contract(format!(
                "label {bad} out of range for {n} classes"
            )));
        }
        let x = self.data();
        let mut probs = vec![0.0; b * n];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &x[r * n..(r + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = z.ln() + max;
            loss += log_z - row[label];
            for (p, v) in probs[r * n..(r + 1) * n].iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
        }
        drop(x);
        let labels = labels.to_vec();
        Tensor::from_op(
            "cross_entropy",
            vec![loss / b as f64],
            vec![1],
            &[self],
            move |g, _| {
                let scale = g[0] / b as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    dx[r * n + l] -= scale;
                }
                vec![Some(dx)]
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::check_gradients;
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn gelu_reference(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    }

    #[test]
    fn gelu_and_tanh_at_zero() {
        let x = Tensor::new(vec![0.0], &[1]).unwrap();
        assert_eq!(x.gelu().unwrap().item(), 0.0);
        assert_eq!(x.tanh_exact().unwrap().item(), 0.0);
    }

    #[test]
    fn gelu_at_three() {
        let x = Tensor::new(vec![3.0], &[1]).unwrap();
        assert!((x.gelu().unwrap().item() - gelu_reference(3.0)).abs() < 1e-10);
    }

    #[test]
    fn hardtanh_paper_values() {
        assert_eq!(hardtanh_paper_scalar(0.0), -1.0);
        assert!((hardtanh_paper_scalar(20.0) - 0.5).abs() < 1e-9);
        assert!((hardtanh_paper_scalar(-20.0) + 1.5).abs() < 1e-9);
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let x = Tensor::new(vec![0.0, 0.0, 0.0], &[3]).unwrap();
        for v in x.softmax(0).unwrap().to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = Tensor::new(vec![1000.0, 0.0], &[2]).unwrap().softmax(0).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let y = Tensor::new(vec![1.0, 2.0, 3.0], &[3]).unwrap().softmax(0).unwrap();
        let z: f64 = (1..=3).map(|i| (i as f64).exp()).sum();
        for (i, v) in y.to_vec().iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_middle_axis() {
        let x = Tensor::new((0..24).map(|v| (v as f64).sin()).collect(), &[2, 3, 4]).unwrap();
        let y = x.softmax(1).unwrap().to_vec();
        for o in 0..2 {
            for i in 0..4 {
                let s: f64 = (0..3).map(|a| y[(o * 3 + a) * 4 + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert!(x.softmax(3).is_err());
    }

    #[test]
    fn cross_entropy_uniform_is_ln_n() {
        let logits = Tensor::zeros(&[4, 5]).unwrap();
        let l = logits.cross_entropy(&[0, 1, 2, 3]).unwrap().item();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn activation_gradchecks() {
        let x = Tensor::param(
            (0..12).map(|v| (v as f64 * 0.9).sin() * 2.0).collect(),
            &[3, 4],
        )
        .unwrap();
        for f in [Tensor::gelu, Tensor::tanh_exact, Tensor::hardtanh_paper] {
            let r = check_gradients(&[x.clone()], |t| f(&t[0])?.square()?.sum()).unwrap();
            assert!(r.max_rel_err < 1e-6, "{r:?}");
        }
        let w = Tensor::new((0..12).map(|v| v as f64 - 3.0).collect(), &[3, 4]).unwrap();
        for axis in 0..2 {
            let r = check_gradients(&[x.clone()], |t| t[0].softmax(axis)?.mul(&w)?.sum()).unwrap();
            assert!(r.max_rel_err < 1e-6, "{r:?}");
        }
        let r = check_gradients(&[x], |t| t[0].cross_entropy(&[1, 3, 0])).unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(
            v in proptest::collection::vec(-50.0f64..50.0, 2..12),
            shift in -100.0f64..100.0,
        ) {
            let n = v.len();
            let x = Tensor::new(v.clone(), &[n]).unwrap();
            let y = x.softmax(0).unwrap().to_vec();
            prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted = Tensor::new(v.iter().map(|a| a + shift).collect(), &[n]).unwrap();
            let ys = shifted.softmax(0).unwrap().to_vec();
            let argmax = |z: &[f64]| z.iter().enumerate().fold(0, |b, (i, &a)| if a > z[b] { i } else { b });
            prop_assert_eq!(argmax(&y), argmax(&ys));
        }

        #[test]
        fn hardtanh_paper_increasing_on_unit_interval(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!(a < b);
            let f1 = hardtanh_paper_scalar(1.0);
            let (fa, fb) = (hardtanh_paper_scalar(a), hardtanh_paper_scalar(b));
            prop_assert!(fa < fb);
            prop_assert!(fa >= -1.0 && fb <= f1);
        }
    }
}
