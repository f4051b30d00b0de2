//! Conv Block, Trans Block, attention and patch embedding.

use super::params::ParamBuilder;
use crate::tensor::{Result, Tensor, LAYER_NORM_EPS};

#[derive(Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: pb.ones(format!("{name}.gamma"), &[dim])?,
            beta: pb.zeros(format!("{name}.beta"), &[dim])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gamma, &self.beta, LAYER_NORM_EPS)
    }
}

/// Weight stored `in x out`, applied as `x W + b`.
#[derive(Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            weight: pb.weight(format!("{name}.weight"), &[fan_in, fan_out])?,
            bias: pb.zeros(format!("{name}.bias"), &[fan_out])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.linear(&self.weight, Some(&self.bias))
    }

    /// Sets weight and bias to zero.
    pub fn zero(&self) {
        self.weight.data_mut().fill(0.0);
        self.bias.data_mut().fill(0.0);
    }
}

/// 3x3 stride-2 convolution halving the grid.
#[derive(Clone)]
pub struct PatchEmbed {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl PatchEmbed {
    pub fn new(pb: &mut ParamBuilder, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            weight: pb.weight(format!("{name}.weight"), &[c_out, c_in, 3, 3])?,
            bias: pb.zeros(format!("{name}.bias"), &[c_out])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, Some(&self.bias), 2, 1)
    }
}

/// `x + pw2(gelu(pw1(norm(dw3x3(x)))))` on `B x C x H x W`. The pointwise
/// convolutions run as linear maps over the channel-last view.
#[derive(Clone)]
pub struct ConvBlock {
    pub dw_weight: Tensor,
    pub dw_bias: Tensor,
    pub norm: LayerNorm,
    pub pw1: Linear,
    pub pw2: Linear,
}

impl ConvBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            dw_weight: pb.weight(format!("{name}.dw.weight"), &[channels, 1, 3, 3])?,
            dw_bias: pb.zeros(format!("{name}.dw.bias"), &[channels])?,
            norm: LayerNorm::new(pb, &format!("{name}.norm"), channels)?,
            pw1: Linear::new(pb, &format!("{name}.pw1"), channels, hidden)?,
            pw2: Linear::new(pb, &format!("{name}.pw2"), hidden, channels)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.depthwise_conv2d(&self.dw_weight, Some(&self.dw_bias), 1, 1)?;
        let y = y.permute(&[0, 2, 3, 1])?;
        let y = self.norm.forward(&y)?;
        let y = self.pw2.forward(&self.pw1.forward(&y)?.gelu()?)?;
        x.add(&y.permute(&[0, 3, 1, 2])?)
    }
}

/// Multi-head scaled dot-product self-attention on `B x T x C`.
#[derive(Clone)]
pub struct Attention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl Attention {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            heads,
            q: Linear::new(pb, &format!("{name}.q"), channels, channels)?,
            k: Linear::new(pb, &format!("{name}.k"), channels, channels)?,
            v: Linear::new(pb, &format!("{name}.v"), channels, channels)?,
            out: Linear::new(pb, &format!("{name}.out"), channels, channels)?,
        })
    }

    /// `B x T x C` to `(B*H) x T x d`.
    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let &[b, t, c] = x.shape() else { unreachable!() };
        let d = c / self.heads;
        x.reshape(&[b, t, self.heads, d])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b * self.heads, t, d])
    }

    fn scores(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let c = x.shape()[2];
        let d = c / self.heads;
        let q = self.split_heads(&self.q.forward(x)?)?;
        let k = self.split_heads(&self.k.forward(x)?)?;
        let v = self.split_heads(&self.v.forward(x)?)?;
        let logits = q.bmm(&k.transpose_last2()?)?.scale(1.0 / (d as f64).sqrt())?;
        Ok((logits.softmax(2)?, v))
    }

    /// Attention weights, `(B*H) x T x T`.
    pub fn weights(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.scores(x)?.0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let &[b, t, c] = x.shape() else {
            return crate::tensor::dim_err("attention", format!("expected B x T x C, got {:?}", x.shape()));
        };
        let (attn, v) = self.scores(x)?;
        let ctx = attn
            .bmm(&v)?
            .reshape(&[b, self.heads, t, c / self.heads])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, t, c])?;
        self.out.forward(&ctx)
    }
}

/// Pre-norm residual pair: attention then MLP.
#[derive(Clone)]
pub struct TransBlock {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransBlock {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        channels: usize,
        heads: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(pb, &format!("{name}.norm1"), channels)?,
            attn: Attention::new(pb, &format!("{name}.attn"), channels, heads)?,
            norm2: LayerNorm::new(pb, &format!("{name}.norm2"), channels)?,
            fc1: Linear::new(pb, &format!("{name}.fc1"), channels, hidden)?,
            fc2: Linear::new(pb, &format!("{name}.fc2"), hidden, channels)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.add(&self.attn.forward(&self.norm1.forward(x)?)?)?;
        let h = self.fc1.forward(&self.norm2.forward(&x)?)?.gelu()?;
        x.add(&self.fc2.forward(&h)?)
    }
}
