use super::blocks::{ConvBlock, LayerNorm, Linear, PatchEmbed, TransBlock};
use super::config::ModelConfig;
use super::params::ParamBuilder;
use super::stack::BlockKind;
use super::ArchError;
use crate::fbm::StageClassifier;
use crate::tensor::{dim_err, Result, Tensor};

#[derive(Clone)]
pub enum Block {
    Conv(ConvBlock),
    Trans(TransBlock),
}

#[derive(Clone)]
pub struct Stage {
    pub embed: PatchEmbed,
    pub blocks: Vec<Block>,
}

/// Activation layouts inside a stage.
enum Act {
    Grid(Tensor),
    Tokens { x: Tensor, h: usize, w: usize },
}

impl Act {
    fn grid(self) -> Result<Tensor> {
        match self {
            Act::Grid(x) => Ok(x),
            Act::Tokens { x, h, w } => {
                let &[b, _, c] = x.shape() else { unreachable!() };
                x.permute(&[0, 2, 1])?.reshape(&[b, c, h, w])
            }
        }
    }

    fn tokens(self) -> Result<(Tensor, usize, usize)> {
        match self {
            Act::Tokens { x, h, w } => Ok((x, h, w)),
            Act::Grid(x) => {
                let &[b, c, h, w] = x.shape() else { unreachable!() };
                Ok((x.reshape(&[b, c, h * w])?.permute(&[0, 2, 1])?, h, w))
            }
        }
    }
}

impl Stage {
    /// Returns the stage output in both layouts: `B x C x H x W` and
    /// `B x (H*W) x C`.
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut act = Act::Grid(self.embed.forward(x)?);
        for block in &self.blocks {
            act = match block {
                Block::Conv(b) => Act::Grid(b.forward(&act.grid()?)?),
                Block::Trans(b) => {
                    let (x, h, w) = act.tokens()?;
                    Act::Tokens {
                        x: b.forward(&x)?,
                        h,
                        w,
                    }
                }
            };
        }
        match act {
            Act::Grid(grid) => {
                let (tokens, _, _) = Act::Grid(grid.clone()).tokens()?;
                Ok((grid, tokens))
            }
            Act::Tokens { x, h, w } => {
                let grid = Act::Tokens { x: x.clone(), h, w }.grid()?;
                Ok((grid, x))
            }
        }
    }
}

#[derive(Clone)]
pub struct Head {
    pub norm: LayerNorm,
    pub proj: Linear,
    pub classifier: Linear,
}

pub struct ForwardOutput {
    pub logits: Tensor,
    /// Stage outputs as `B x T_i x C_i` token maps.
    pub stage_features: Vec<Tensor>,
}

pub struct Model {
    config: ModelConfig,
    params: Vec<(String, Tensor)>,
    stem: PatchEmbed,
    stages: Vec<Stage>,
    head: Head,
    stage_classifiers: Vec<StageClassifier>,
}

impl Model {
    /// Builds with deterministic truncated-normal weights, zero biases and
    /// unit norm scales.
    pub fn build(config: &ModelConfig, seed: u64) -> std::result::Result<Self, ArchError> {
        config.validate()?;
        let mut pb = ParamBuilder::new(seed);
        let channels = config.channels();
        let stem_c = config.stem_channels();
        let stem = PatchEmbed::new(&mut pb, "stem.conv", 3, stem_c)?;
        let mut stages = Vec::with_capacity(4);
        let mut c_in = stem_c;
        for (i, spec) in config.stack.stages.iter().enumerate() {
            let c = spec.channels;
            let embed = PatchEmbed::new(&mut pb, &format!("stage{}.embed", i + 1), c_in, c)?;
            let hidden = config.hidden(c);
            let blocks = spec
                .expanded()
                .into_iter()
                .enumerate()
                .map(|(j, kind)| {
                    let name = format!("stage{}.block{}", i + 1, j);
                    Ok(match kind {
                        BlockKind::Conv => Block::Conv(ConvBlock::new(&mut pb, &name, c, hidden)?),
                        BlockKind::Trans => Block::Trans(TransBlock::new(
                            &mut pb,
                            &name,
                            c,
                            c / config.head_dim,
                            hidden,
                        )?),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage { embed, blocks });
            c_in = c;
        }
        let head = Head {
            norm: LayerNorm::new(&mut pb, "head.norm", channels[3])?,
            proj: Linear::new(&mut pb, "head.proj", channels[3], config.output_channel)?,
            classifier: Linear::new(&mut pb, "head.fc", config.output_channel, config.num_classes)?,
        };
        let stage_classifiers = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| StageClassifier::new(&mut pb, &format!("fbm.stage{}", i + 1), c, config.num_classes))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            params: pb.finish(),
            stem,
            stages,
            head,
            stage_classifiers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Every parameter, in creation order, each exactly once.
    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn stage_classifiers(&self) -> &[StageClassifier] {
        &self.stage_classifiers
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|(_, t)| t.zero_grad());
    }

    pub fn count_params(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Parameter totals grouped by the first name component (`stem`,
    /// `stage1`..`stage4`, `head`, `fbm`), in creation order.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for (name, t) in &self.params {
            let group = name.split('.').next().unwrap_or(name);
            match out.last_mut() {
                Some((g, n)) if g == group => *n += t.numel(),
                _ => out.push((group.to_string(), t.numel())),
            }
        }
        out
    }

    pub fn forward(&self, images: &Tensor) -> Result<ForwardOutput> {
        let r = self.config.input_resolution;
        match images.shape() {
            &[_, 3, h, w] if h == r && w == r => {}
            other => {
                return dim_err(
                    "model_forward",
                    format!("expected B x 3 x {r} x {r} images, got {other:?}"),
                )
            }
        }
        let mut x = self.stem.forward(images)?.gelu()?;
        let mut stage_features = Vec::with_capacity(4);
        for stage in &self.stages {
            let (grid, tokens) = stage.forward(&x)?;
            stage_features.push(tokens);
            x = grid;
        }
        let pooled = stage_features[3].mean_axis(1)?;
        let h = self.head.norm.forward(&pooled)?;
        let h = self.head.proj.forward(&h)?.gelu()?;
        let logits = self.head.classifier.forward(&h)?;
        Ok(ForwardOutput {
            logits,
            stage_features,
        })
    }
}
