//! 2-d cross-correlation (no kernel flip) over `B x C x H x W` inputs.

use super::kernels::{col2im, gemm, im2col, plane_correlate, plane_correlate_backward, ConvGeom};
use super::{dim_err, Result, Tensor};

fn geometry(
    op: &'static str,
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(usize, ConvGeom)> {
    let &[b, c, h, wd] = x.shape() else {
        return dim_err(op, format!("input must be B x C x H x W, got {:?}", x.shape()));
    };
    let &[_, _, kh, kw] = w.shape() else {
        return dim_err(op, format!("weight must be 4-d, got {:?}", w.shape()));
    };
    if kh != kw || kh % 2 == 0 {
        return dim_err(op, format!("kernel must be square and odd, got {kh}x{kw}"));
    }
    let Some(g) = ConvGeom::new(c, h, wd, kh, stride, pad) else {
        return dim_err(
            op,
            format!("no valid output for {h}x{wd} input, kernel {kh}, stride {stride}, pad {pad}"),
        );
    };
    Ok((b, g))
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, n: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [n] => {
            dim_err(op, format!("bias shape {:?}, expected [{n}]", b.shape()))
        }
        _ => Ok(()),
    }
}

impl Tensor {
    /// Dense convolution with weight `O x C x k x k`.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let (batch, g) = geometry("conv2d", self, weight, stride, pad)?;
        let (o, wc) = (weight.shape()[0], weight.shape()[1]);
        if wc != g.channels {
            return dim_err(
                "conv2d",
                format!("weight expects {wc} channels, input has {}", g.channels),
            );
        }
        check_bias("conv2d", bias, o)?;
        let ck = g.channels * g.kernel * g.kernel;
        let ol = g.out_len();
        let in_len = g.channels * g.height * g.width;
        let mut out = vec![0.0; batch * o * ol];
        {
            let x = self.data();
            let w = weight.data();
            let mut cols = vec![0.0; ck * ol];
            for bi in 0..batch {
                im2col(&x[bi * in_len..(bi + 1) * in_len], &g, &mut cols);
                let dst = &mut out[bi * o * ol..(bi + 1) * o * ol];
                if let Some(b) = bias {
                    let bd = b.data();
                    for (oc, row) in dst.chunks_exact_mut(ol).enumerate() {
                        row.fill(bd[oc]);
                    }
                }
                gemm(false, false, o, ol, ck, &w, &cols, 1.0, dst);
            }
        }
        let (x, w) = (self.clone(), weight.clone());
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let has_bias = bias.is_some();
        Tensor::from_op(
            "conv2d",
            out,
            vec![batch, o, g.out_h, g.out_w],
            &parents,
            move |go, _| {
                let xd = x.data();
                let wd = w.data();
                let mut gx = x.requires_grad().then(|| vec![0.0; batch * in_len]);
                let mut gw = w.requires_grad().then(|| vec![0.0; o * ck]);
                let mut cols = vec![0.0; ck * ol];
                let mut dcols = vec![0.0; ck * ol];
                for bi in 0..batch {
                    let gob = &go[bi * o * ol..(bi + 1) * o * ol];
                    if let Some(gw) = gw.as_mut() {
                        im2col(&xd[bi * in_len..(bi + 1) * in_len], &g, &mut cols);
                        gemm(false, true, o, ck, ol, gob, &cols, 1.0, gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(true, false, ck, ol, o, &wd, gob, 0.0, &mut dcols);
                        col2im(&dcols, &g, &mut gx[bi * in_len..(bi + 1) * in_len]);
                    }
                }
                let mut grads = vec![gx, gw];
                if has_bias {
                    let mut gb = vec![0.0; o];
                    for bi in 0..batch {
                        for (oc, gbc) in gb.iter_mut().enumerate() {
                            let s = (bi * o + oc) * ol;
                            *gbc += go[s..s + ol].iter().sum::<f64>();
                        }
                    }
                    grads.push(Some(gb));
                }
                grads
            },
        )
    }

    /// Per-channel convolution with weight `C x 1 x k x k`.
    pub fn depthwise_conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let (batch, g) = geometry("depthwise_conv2d", self, weight, stride, pad)?;
        let c = g.channels;
        if weight.shape()[0] != c || weight.shape()[1] != 1 {
            return dim_err(
                "depthwise_conv2d",
                format!("weight must be {c} x 1 x k x k, got {:?}", weight.shape()),
            );
        }
        check_bias("depthwise_conv2d", bias, c)?;
        let kk = g.kernel * g.kernel;
        let plane = g.height * g.width;
        let ol = g.out_len();
        let mut out = vec![0.0; batch * c * ol];
        {
            let x = self.data();
            let w = weight.data();
            let bd = bias.map(|b| b.data());
            for bi in 0..batch {
                for ci in 0..c {
                    let dst = &mut out[(bi * c + ci) * ol..(bi * c + ci + 1) * ol];
                    if let Some(bd) = &bd {
                        dst.fill(bd[ci]);
                    }
                    let src = &x[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                    plane_correlate(src, &w[ci * kk..(ci + 1) * kk], &g, dst);
                }
            }
        }
        let (x, w) = (self.clone(), weight.clone());
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let has_bias = bias.is_some();
        Tensor::from_op(
            "depthwise_conv2d",
            out,
            vec![batch, c, g.out_h, g.out_w],
            &parents,
            move |go, _| {
                let xd = x.data();
                let wd = w.data();
                let mut gx = vec![0.0; batch * c * plane];
                let mut gw = vec![0.0; c * kk];
                for bi in 0..batch {
                    for ci in 0..c {
                        let p = (bi * c + ci) * plane;
                        let q = (bi * c + ci) * ol;
                        plane_correlate_backward(
                            &xd[p..p + plane],
                            &wd[ci * kk..(ci + 1) * kk],
                            &g,
                            &go[q..q + ol],
                            &mut gx[p..p + plane],
                            &mut gw[ci * kk..(ci + 1) * kk],
                        );
                    }
                }
                let mut grads = vec![Some(gx), Some(gw)];
                if has_bias {
                    let mut gb = vec![0.0; c];
                    for bi in 0..batch {
                        for (ci, gbc) in gb.iter_mut().enumerate() {
                            let s = (bi * c + ci) * ol;
                            *gbc += go[s..s + ol].iter().sum::<f64>();
                        }
                    }
                    grads.push(Some(gb));
                }
                grads
            },
        )
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

    /// Six nested loops straight from the definition.
    fn direct_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let &[b, c, h, wd] = x.shape() else { unreachable!() };
        let &[o, _, k, _] = w.shape() else { unreachable!() };
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let (xd, wt) = (x.data(), w.data());
        let mut out = vec![0.0; b * o * oh * ow];
        for bi in 0..b {
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += xd[((bi * c + ci) * h + iy as usize) * wd + ix as usize]
                                        * wt[((oc * c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        out[((bi * o + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::new((1..=9).map(f64::from).collect(), &[1, 1, 3, 3]).unwrap();
        let w = Tensor::new(vec![1.0], &[1, 1, 1, 1]).unwrap();
        assert_eq!(x.conv2d(&w, None, 1, 0).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn all_ones_sums_to_nine() {
        let x = Tensor::new(vec![1.0; 9], &[1, 1, 3, 3]).unwrap();
        let w = Tensor::new(vec![1.0; 9], &[1, 1, 3, 3]).unwrap();
        let y = x.conv2d(&w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.to_vec(), vec![9.0]);
    }

    #[test]
    fn matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 1), (2, 0)] {
            let x = random(&mut rng, &[2, 3, 7, 6]);
            let w = random(&mut rng, &[4, 3, 3, 3]);
            let got = x.conv2d(&w, None, stride, pad).unwrap().to_vec();
            let want = direct_conv(&x, &w, stride, pad);
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_output_is_dimension_error() {
        let x = Tensor::zeros(&[1, 1, 2, 2]).unwrap();
        let w = Tensor::zeros(&[1, 1, 3, 3]).unwrap();
        assert!(x.conv2d(&w, None, 1, 0).is_err());
        let even = Tensor::zeros(&[1, 1, 2, 2]).unwrap();
        assert!(x.conv2d(&even, None, 1, 0).is_err());
    }

    #[test]
    fn depthwise_identity_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, &[1, 3, 5, 5]);
        let mut w = vec![0.0; 27];
        for c in 0..3 {
            w[c * 9 + 4] = 1.0;
        }
        let w = Tensor::new(w, &[3, 1, 3, 3]).unwrap();
        assert_eq!(x.depthwise_conv2d(&w, None, 1, 1).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn depthwise_equals_per_channel_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&mut rng, &[1, 2, 6, 6]);
        let w = random(&mut rng, &[2, 1, 3, 3]);
        let y = x.depthwise_conv2d(&w, None, 2, 1).unwrap().to_vec();
        let (xd, wd) = (x.to_vec(), w.to_vec());
        let mut expected = Vec::new();
        for c in 0..2 {
            let xc = Tensor::new(xd[c * 36..(c + 1) * 36].to_vec(), &[1, 1, 6, 6]).unwrap();
            let wc = Tensor::new(wd[c * 9..(c + 1) * 9].to_vec(), &[1, 1, 3, 3]).unwrap();
            expected.extend(xc.conv2d(&wc, None, 2, 1).unwrap().to_vec());
        }
        for (a, b) in y.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random(&mut rng, &[2, 2, 5, 5]);
        let w = random(&mut rng, &[3, 2, 3, 3]);
        let b = random(&mut rng, &[3]);
        let r = check_gradients(&[x, w, b], |t| {
            t[0].conv2d(&t[1], Some(&t[2]), 2, 1)?.square()?.sum()
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn depthwise_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random(&mut rng, &[2, 3, 5, 4]);
        let w = random(&mut rng, &[3, 1, 3, 3]);
        let b = random(&mut rng, &[3]);
        let r = check_gradients(&[x, w, b], |t| {
            t[0].depthwise_conv2d(&t[1], Some(&t[2]), 1, 1)?.square()?.sum()
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }
}
