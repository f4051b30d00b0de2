use super::{DataError, Result};
use crate::tensor::Tensor;

/// Source index pair and weight of the second for output coordinate `dst`
/// (half-pixel centers, edges clamped).
fn taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize of a `C x H x W` image to `C x R x R`.
pub fn resize_bilinear(x: &Tensor, r: usize) -> Result<Tensor> {
    let &[c, h, w] = x.shape() else {
        return Err(DataError::Contract(format!("expected C x H x W, got {:?}", x.shape())));
    };
    if r == 0 {
        return Err(DataError::Contract("target resolution must be positive".into()));
    }
    let src = x.data();
    let rows: Vec<_> = (0..r).map(|i| taps(i, h, r)).collect();
    let cols: Vec<_> = (0..r).map(|j| taps(j, w, r)).collect();
    let mut out = vec![0.0; c * r * r];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for (i, &(y0, y1, wy)) in rows.iter().enumerate() {
            for (j, &(x0, x1, wx)) in cols.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                let bottom = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                out[(ch * r + i) * r + j] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    Ok(Tensor::new(out, &[c, r, r])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::new(vec![0.37; 3 * 5 * 7], &[3, 5, 7]).unwrap();
        let y = resize_bilinear(&x, 11).unwrap();
        assert!(y.to_vec().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn identity_at_same_size() {
        let data: Vec<f64> = (0..48).map(|i| i as f64 / 47.0).collect();
        let x = Tensor::new(data.clone(), &[3, 4, 4]).unwrap();
        assert_eq!(resize_bilinear(&x, 4).unwrap().to_vec(), data);
    }

    #[test]
    fn two_to_four_weights() {
        // Output coordinates map to source 0, 0.25, 0.75, 1 (clamped at the edges).
        let (a, b, c, d) = (1.0, 2.0, 3.0, 5.0);
        let x = Tensor::new(vec![a, b, c, d], &[1, 2, 2]).unwrap();
        let y = resize_bilinear(&x, 4).unwrap().to_vec();
        let coord = [0.0, 0.25, 0.75, 1.0];
        for (i, &v) in coord.iter().enumerate() {
            for (j, &u) in coord.iter().enumerate() {
                let want = a * (1.0 - v) * (1.0 - u) + b * (1.0 - v) * u + c * v * (1.0 - u) + d * v * u;
                assert!((y[i * 4 + j] - want).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn downsample_averages_pairs() {
        // Rows map 1:1; columns land halfway between source pairs.
        let x = Tensor::new((0..8).map(f64::from).collect(), &[1, 2, 4]).unwrap();
        assert_eq!(resize_bilinear(&x, 2).unwrap().to_vec(), vec![0.5, 2.5, 4.5, 6.5]);
    }
}
