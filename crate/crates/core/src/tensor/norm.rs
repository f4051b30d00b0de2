use super::{dim_err, Result, Tensor};

/// Default epsilon for [`Tensor::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-6;

impl Tensor {
    /// Standardizes each position over the trailing axis, then applies
    /// `gamma * x_hat + beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let Some(&d) = self.shape().last() else {
            return dim_err("layer_norm", "input has no axes");
        };
        if gamma.shape() != [d] || beta.shape() != [d] {
            return dim_err(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} must both be [{d}]",
                    gamma.shape(),
                    beta.shape()
                ),
            );
        }
        let rows = self.numel() / d;
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        {
            let x = self.data();
            let (gd, bd) = (gamma.data(), beta.data());
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let s = 1.0 / (var + eps).sqrt();
                rstd[r] = s;
                for j in 0..d {
                    let h = (row[j] - mean) * s;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * gd[j] + bd[j];
                }
            }
        }
        let g_param = gamma.clone();
        Tensor::from_op(
            "layer_norm",
            out,
            self.shape().to_vec(),
            &[self, gamma, beta],
            move |g, _| {
                let gd = g_param.data();
                let mut dx = vec![0.0; rows * d];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        dxhat[j] = gr[j] * gd[j];
                        mean_dh += dxhat[j];
                        mean_dh_h += dxhat[j] * hr[j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for j in 0..d {
                        dx[r * d + j] = rstd[r] * (dxhat[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            },
        )
    }
}
