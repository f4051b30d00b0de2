use super::kernels::gemm;
use super::{dim_err, Result, Tensor};

impl Tensor {
    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return dim_err(
                "matmul",
                format!("expected 2-d operands, got {:?} and {:?}", self.shape(), other.shape()),
            );
        };
        if k != k2 {
            return dim_err("matmul", format!("inner extents {k} and {k2} differ"));
        }
        let mut out = vec![0.0; m * n];
        gemm(false, false, m, n, k, &self.data(), &other.data(), 0.0, &mut out);
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op("matmul", out, vec![m, n], &[self, other], move |g, _| {
            let ga = a.requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(false, true, m, k, n, g, &b.data(), 0.0, &mut ga);
                ga
            });
            let gb = b.requires_grad().then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(true, false, k, n, m, &a.data(), g, 0.0, &mut gb);
                gb
            });
            vec![ga, gb]
        })
    }

    /// Batched product `[G, M, K] x [G, K, N] -> [G, M, N]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        let (&[ga, m, k], &[gb, k2, n]) = (self.shape(), other.shape()) else {
            return dim_err(
                "bmm",
                format!("expected 3-d operands, got {:?} and {:?}", self.shape(), other.shape()),
            );
        };
        if ga != gb || k != k2 {
            return dim_err(
                "bmm",
                format!("incompatible {:?} x {:?}", self.shape(), other.shape()),
            );
        }
        let groups = ga;
        let mut out = vec![0.0; groups * m * n];
        {
            let (ad, bd) = (self.data(), other.data());
            for g in 0..groups {
                gemm(
                    false,
                    false,
                    m,
                    n,
                    k,
                    &ad[g * m * k..(g + 1) * m * k],
                    &bd[g * k * n..(g + 1) * k * n],
                    0.0,
                    &mut out[g * m * n..(g + 1) * m * n],
                );
            }
        }
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op("bmm", out, vec![groups, m, n], &[self, other], move |go, _| {
            let (ad, bd) = (a.data(), b.data());
            let ga = a.requires_grad().then(|| {
                let mut ga = vec![0.0; groups * m * k];
                for g in 0..groups {
                    gemm(
                        false,
                        true,
                        m,
                        k,
                        n,
                        &go[g * m * n..(g + 1) * m * n],
                        &bd[g * k * n..(g + 1) * k * n],
                        0.0,
                        &mut ga[g * m * k..(g + 1) * m * k],
                    );
                }
                ga
            });
            let gb = b.requires_grad().then(|| {
                let mut gb = vec![0.0; groups * k * n];
                for g in 0..groups {
                    gemm(
                        true,
                        false,
                        k,
                        n,
                        m,
                        &ad[g * m * k..(g + 1) * m * k],
                        &go[g * m * n..(g + 1) * m * n],
                        0.0,
                        &mut gb[g * k * n..(g + 1) * k * n],
                    );
                }
                gb
            });
            vec![ga, gb]
        })
    }

    /// Affine map over the trailing axis: `[..., K] x [K, N] + [N] -> [..., N]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let &[k, n] = weight.shape() else {
            return dim_err("linear", format!("weight must be 2-d, got {:?}", weight.shape()));
        };
        let Some(&last) = self.shape().last() else {
            return dim_err("linear", "input has no axes");
        };
        if last != k {
            return dim_err(
                "linear",
                format!("input features {last} do not match weight rows {k}"),
            );
        }
        if let Some(b) = bias {
            if b.shape() != [n] {
                return dim_err("linear", format!("bias shape {:?}, expected [{n}]", b.shape()));
            }
        }
        let rows = self.numel() / k;
        let mut out = vec![0.0; rows * n];
        if let Some(b) = bias {
            let bd = b.data();
            out.chunks_exact_mut(n).for_each(|r| r.copy_from_slice(&bd));
        }
        gemm(false, false, rows, n, k, &self.data(), &weight.data(), 1.0, &mut out);
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let (x, w) = (self.clone(), weight.clone());
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let has_bias = bias.is_some();
        Tensor::from_op("linear", out, shape, &parents, move |g, _| {
            let gx = x.requires_grad().then(|| {
                let mut gx = vec![0.0; rows * k];
                gemm(false, true, rows, k, n, g, &w.data(), 0.0, &mut gx);
                gx
            });
            let gw = w.requires_grad().then(|| {
                let mut gw = vec![0.0; k * n];
                gemm(true, false, k, n, rows, &x.data(), g, 0.0, &mut gw);
                gw
            });
            let mut grads = vec![gx, gw];
            if has_bias {
                let mut gb = vec![0.0; n];
                for r in g.chunks_exact(n) {
                    gb.iter_mut().zip(r).for_each(|(a, b)| *a += b);
                }
                grads.push(Some(gb));
            }
            grads
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::check_gradients;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::param((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn identity_product() {
        let i = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        assert_eq!(i.matmul(&x).unwrap().to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn orthogonal_rows() {
        let a = Tensor::new(vec![1.0, 0.0], &[1, 2]).unwrap();
        let b = Tensor::new(vec![0.0, 5.0], &[2, 1]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![0.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[4, 2]);
        let c = a.matmul(&b).unwrap().to_vec();
        let oracle = naive_matmul(&a.data(), &b.data(), 3, 4, 2);
        for (x, y) in c.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatch_is_error() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        assert!(a.matmul(&a).is_err());
        assert!(a.linear(&a, None).is_err());
    }

    #[test]
    fn bmm_matches_loop_and_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, &[2, 3, 4]);
        let b = random(&mut rng, &[2, 4, 5]);
        let c = a.bmm(&b).unwrap().to_vec();
        for g in 0..2 {
            let o = naive_matmul(&a.data()[g * 12..(g + 1) * 12], &b.data()[g * 20..(g + 1) * 20], 3, 4, 5);
            for (x, y) in c[g * 15..(g + 1) * 15].iter().zip(&o) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let r = check_gradients(&[a, b], |t| t[0].bmm(&t[1])?.square()?.sum()).unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn linear_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, &[2, 3, 4]);
        let w = random(&mut rng, &[4, 5]);
        let b = random(&mut rng, &[5]);
        let r = check_gradients(&[x, w, b], |t| {
            t[0].linear(&t[1], Some(&t[2]))?.square()?.sum()
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }
}
