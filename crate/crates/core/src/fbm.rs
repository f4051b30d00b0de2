//! Foreground-background module.
//!
//! After every stage a linear classifier scores each token
//! (`Y = softmax(z W + b)`), the per-token maximum class probability ranks
//! the tokens, and the top `K` are foreground. The remaining background
//! scores go through `(2 tanh s - 1) / (1 + tanh^2 s)` and are pulled toward
//! -1 with a squared error. The loss is auxiliary only: stage features flow
//! on to the next stage untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::params::ParamBuilder;
use crate::tensor::{Tensor, TensorError};

/// Per-stage foreground counts at 224x224 input.
pub const DEFAULT_K: [usize; 4] = [256, 128, 64, 32];
/// Token counts each stage has at 224x224 input.
pub const REFERENCE_TOKENS: [usize; 4] = [3136, 784, 196, 49];

#[derive(Debug, Error)]
pub enum FbmError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid FBM config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, FbmError>;

/// Token classifier for one stage: weight `C_i x num_classes`, bias
/// `num_classes`.
#[derive(Clone)]
pub struct StageClassifier {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl StageClassifier {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        channels: usize,
        num_classes: usize,
    ) -> std::result::Result<Self, TensorError> {
        Ok(Self {
            weight: pb.weight(format!("{name}.weight"), &[channels, num_classes])?,
            bias: pb.zeros(format!("{name}.bias"), &[num_classes])?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn zero(&self) {
        self.weight.data_mut().fill(0.0);
        self.bias.data_mut().fill(0.0);
    }
}

/// Classification map `softmax(z W + b)` over the trailing axis; `z` is
/// `[..., T, C_i]`.
pub fn stage_classify(z: &Tensor, clf: &StageClassifier) -> Result<Tensor> {
    let logits = z.linear(&clf.weight, Some(&clf.bias))?;
    Ok(logits.softmax(logits.ndim() - 1)?)
}

/// Per-token maximum over the class axis.
pub fn max_score_map(y: &Tensor) -> Result<Tensor> {
    Ok(y.max_axis(y.ndim() - 1)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Ascending token indices of the `K` highest scores.
    pub foreground: Vec<usize>,
    /// The complement, ascending.
    pub background: Vec<usize>,
}

/// Top-`k` split. Equal scores rank by lower token index first.
pub fn select_foreground(scores: &[f64], k: usize) -> Result<Selection> {
    let t = scores.len();
    if k == 0 || k >= t {
        return Err(FbmError::Contract(format!(
            "need 0 < K < T, got K = {k}, T = {t}"
        )));
    }
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut is_fg = vec![false; t];
    order[..k].iter().for_each(|&i| is_fg[i] = true);
    let (foreground, background): (Vec<usize>, Vec<usize>) = (0..t).partition(|&i| is_fg[i]);
    Ok(Selection {
        foreground,
        background,
    })
}

/// `P = hardtanh_paper(s)` elementwise.
pub fn background_map(bg_scores: &Tensor) -> Result<Tensor> {
    Ok(bg_scores.hardtanh_paper()?)
}

/// Mean of `(P + 1)^2` over the background scores.
pub fn fb_stage_loss(bg_scores: &Tensor) -> Result<Tensor> {
    Ok(background_map(bg_scores)?.add_scalar(1.0)?.square()?.mean()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbmConfig {
    /// Foreground count per stage; `None` leaves that stage out of the loss.
    pub k_schedule: [Option<usize>; 4],
    pub num_classes: usize,
    pub lambda: f64,
}

impl FbmConfig {
    pub fn new(k_schedule: [usize; 4], num_classes: usize, lambda: f64) -> Self {
        Self {
            k_schedule: k_schedule.map(Some),
            num_classes,
            lambda,
        }
    }

    /// The default schedule rescaled by each stage's token count,
    /// `max(1, round(K * T' / T))`. Stages with fewer than two tokens have
    /// no possible background and are disabled.
    pub fn scaled(tokens: [usize; 4], num_classes: usize, lambda: f64) -> Self {
        let mut k_schedule = [None; 4];
        for i in 0..4 {
            if tokens[i] >= 2 {
                let k = (DEFAULT_K[i] as f64 * tokens[i] as f64 / REFERENCE_TOKENS[i] as f64).round();
                k_schedule[i] = Some((k as usize).clamp(1, tokens[i] - 1));
            }
        }
        Self {
            k_schedule,
            num_classes,
            lambda,
        }
    }

    /// Every violated constraint against the given stage token counts.
    pub fn violations(&self, tokens: [usize; 4]) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            v.push(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if self.num_classes < 2 {
            v.push(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        let mut prev: Option<(usize, usize)> = None;
        for (i, k) in self.k_schedule.iter().enumerate() {
            let Some(k) = *k else { continue };
            if k == 0 || k >= tokens[i] {
                v.push(format!(
                    "K{} = {k} must satisfy 0 < K < {} (stage tokens)",
                    i + 1,
                    tokens[i]
                ));
            }
            if let Some((j, kp)) = prev {
                if kp <= k {
                    v.push(format!(
                        "K must strictly decrease with depth: K{} = {kp}, K{} = {k}",
                        j + 1,
                        i + 1
                    ));
                }
            }
            prev = Some((i, k));
        }
        v
    }

    pub fn validate(&self, tokens: [usize; 4]) -> Result<()> {
        let v = self.violations(tokens);
        if v.is_empty() {
            Ok(())
        } else {
            Err(FbmError::Config(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbmOutput {
    pub stage: usize,
    /// One selection per batch item.
    pub selections: Vec<Selection>,
    /// Unweighted stage loss.
    pub loss: f64,
}

pub struct FbmLoss {
    /// `lambda * sum of stage losses`.
    pub loss: Tensor,
    pub outputs: Vec<FbmOutput>,
}

/// Auxiliary loss over the stage token maps (`B x T_i x C_i` each).
pub fn fbm_total_loss(
    stage_features: &[Tensor],
    classifiers: &[StageClassifier],
    cfg: &FbmConfig,
) -> Result<FbmLoss> {
    if stage_features.len() != 4 || classifiers.len() != 4 {
        return Err(FbmError::Contract(format!(
            "expected 4 stages and 4 classifiers, got {} and {}",
            stage_features.len(),
            classifiers.len()
        )));
    }
    let mut tokens = [0; 4];
    for (i, z) in stage_features.iter().enumerate() {
        let &[_, t, _] = z.shape() else {
            return Err(FbmError::Contract(format!(
                "stage {} features must be B x T x C, got {:?}",
                i + 1,
                z.shape()
            )));
        };
        tokens[i] = t;
        if classifiers[i].num_classes() != cfg.num_classes {
            return Err(FbmError::Contract(format!(
                "stage {} classifier has {} classes, config says {}",
                i + 1,
                classifiers[i].num_classes(),
                cfg.num_classes
            )));
        }
    }
    cfg.validate(tokens)?;

    let mut total: Option<Tensor> = None;
    let mut outputs = Vec::new();
    for i in 0..4 {
        let Some(k) = cfg.k_schedule[i] else { continue };
        let z = &stage_features[i];
        let (b, t) = (z.shape()[0], tokens[i]);
        let scores = max_score_map(&stage_classify(z, &classifiers[i])?)?;
        let flat = scores.reshape(&[b * t])?;
        let values = flat.to_vec();
        let mut selections = Vec::with_capacity(b);
        let mut bg_flat = Vec::with_capacity(b * (t - k));
        for item in 0..b {
            let sel = select_foreground(&values[item * t..(item + 1) * t], k)?;
            bg_flat.extend(sel.background.iter().map(|&j| item * t + j));
            selections.push(sel);
        }
        let stage_loss = fb_stage_loss(&flat.index_select(0, &bg_flat)?)?;
        outputs.push(FbmOutput {
            stage: i + 1,
            selections,
            loss: stage_loss.item(),
        });
        total = Some(match total {
            Some(acc) => acc.add(&stage_loss)?,
            None => stage_loss,
        });
    }
    let loss = match total {
        Some(t) => t.scale(cfg.lambda)?,
        None => Tensor::scalar(0.0)?,
    };
    Ok(FbmLoss { loss, outputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_gradients;
    use crate::tensor::hardtanh_paper_scalar;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn classifier(rng: &mut ChaCha8Rng, c: usize, n: usize, scale: f64) -> StageClassifier {
        StageClassifier {
            weight: Tensor::param((0..c * n).map(|_| rng.gen_range(-scale..scale)).collect(), &[c, n]).unwrap(),
            bias: Tensor::param((0..n).map(|_| rng.gen_range(-scale..scale)).collect(), &[n]).unwrap(),
        }
    }

    fn features(rng: &mut ChaCha8Rng, b: usize, t: usize, c: usize) -> Tensor {
        Tensor::param((0..b * t * c).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[b, t, c]).unwrap()
    }

    #[test]
    fn zero_classifier_gives_uniform_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let clf = classifier(&mut rng, 4, 5, 1.0);
        clf.zero();
        let y = stage_classify(&features(&mut rng, 1, 3, 4), &clf).unwrap();
        assert!(y.to_vec().iter().all(|&p| (p - 0.2).abs() < 1e-15));
        let m = max_score_map(&y).unwrap();
        assert_eq!(m.shape(), &[1, 3]);
        assert!(m.to_vec().iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn single_token_matches_direct_softmax() {
        let clf = StageClassifier {
            weight: Tensor::new(vec![1.0, 2.0, 3.0], &[1, 3]).unwrap(),
            bias: Tensor::zeros(&[3]).unwrap(),
        };
        let z = Tensor::new(vec![1.0], &[1, 1]).unwrap();
        let y = stage_classify(&z, &clf).unwrap().to_vec();
        let s: f64 = (1..=3).map(|v| (v as f64).exp()).sum();
        for (i, p) in y.iter().enumerate() {
            assert!((p - ((i + 1) as f64).exp() / s).abs() < 1e-12);
        }
    }

    #[test]
    fn max_of_row() {
        let y = Tensor::new(vec![0.2, 0.5, 0.3], &[1, 3]).unwrap();
        assert_eq!(max_score_map(&y).unwrap().to_vec(), vec![0.5]);
    }

    #[test]
    fn selection_examples() {
        let s = select_foreground(&[0.9, 0.2, 0.5, 0.7], 2).unwrap();
        assert_eq!(s.foreground, vec![0, 3]);
        assert_eq!(s.background, vec![1, 2]);
        let s = select_foreground(&[0.4; 4], 2).unwrap();
        assert_eq!(s.foreground, vec![0, 1]);
        let s = select_foreground(&[0.3, 0.1, 0.6, 0.5], 3).unwrap();
        assert_eq!(s.background, vec![1]);
        assert!(select_foreground(&[0.1, 0.2], 2).is_err());
        assert!(select_foreground(&[0.1, 0.2], 0).is_err());
    }

    #[test]
    fn background_map_values() {
        let s = Tensor::new(vec![0.0, 1.0], &[2]).unwrap();
        let p = background_map(&s).unwrap().to_vec();
        assert_eq!(p[0], -1.0);
        let t1 = 1f64.tanh();
        assert!((p[1] - (2.0 * t1 - 1.0) / (1.0 + t1 * t1)).abs() < 1e-15);
    }

    #[test]
    fn stage_loss_values() {
        let zero = Tensor::new(vec![0.0], &[1]).unwrap();
        assert_eq!(fb_stage_loss(&zero).unwrap().item(), 0.0);
        let s = Tensor::new(vec![0.2], &[1]).unwrap();
        let want = (hardtanh_paper_scalar(0.2) + 1.0).powi(2);
        assert!((fb_stage_loss(&s).unwrap().item() - want).abs() < 1e-15);
    }

    #[test]
    fn scaled_schedule_for_micro_resolution() {
        let cfg = FbmConfig::scaled([64, 16, 4, 1], 5, 1.0);
        assert_eq!(cfg.k_schedule, [Some(5), Some(3), Some(1), None]);
        assert!(cfg.violations([64, 16, 4, 1]).is_empty());
        let full = FbmConfig::scaled(REFERENCE_TOKENS, 5, 1.0);
        assert_eq!(full.k_schedule, DEFAULT_K.map(Some));
    }

    #[test]
    fn config_violations_enumerated() {
        let cfg = FbmConfig::new([10, 20, 5, 5], 5, -1.0);
        let v = cfg.violations([64, 16, 4, 1]);
        // lambda, K2 >= T2, K1 <= K2, K3 >= T3, K4 >= T4, K3 <= K4
        assert_eq!(v.len(), 6, "{v:?}");
    }

    #[test]
    fn fbm_total_uniform_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = [(16, 4), (9, 8), (6, 8), (4, 16)];
        let feats: Vec<Tensor> = dims.iter().map(|&(t, c)| features(&mut rng, 2, t, c)).collect();
        let clfs: Vec<StageClassifier> = dims.iter().map(|&(_, c)| classifier(&mut rng, c, 5, 1.0)).collect();
        clfs.iter().for_each(StageClassifier::zero);
        let cfg = FbmConfig::new([8, 4, 2, 1], 5, 1.0);
        let out = fbm_total_loss(&feats, &clfs, &cfg).unwrap();
        let want = 4.0 * (hardtanh_paper_scalar(0.2) + 1.0).powi(2);
        assert!((out.loss.item() - want).abs() < 1e-12);
        assert_eq!(out.outputs.len(), 4);
        assert_eq!(out.outputs[0].selections[0].foreground, (0..8).collect::<Vec<_>>());

        let zero = FbmConfig { lambda: 0.0, ..cfg };
        let out = fbm_total_loss(&feats, &clfs, &zero).unwrap();
        assert_eq!(out.loss.item(), 0.0);
        out.loss.backward().unwrap();
        for f in &feats {
            assert!(f.grad().unwrap().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn infeasible_k_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let feats: Vec<Tensor> = (0..4).map(|_| features(&mut rng, 1, 4, 2)).collect();
        let clfs: Vec<StageClassifier> = (0..4).map(|_| classifier(&mut rng, 2, 3, 1.0)).collect();
        let cfg = FbmConfig::new([4, 3, 2, 1], 3, 1.0);
        assert!(matches!(fbm_total_loss(&feats, &clfs, &cfg), Err(FbmError::Config(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dims = [(9, 3), (6, 4), (4, 4), (3, 5)];
        let feats: Vec<Tensor> = dims.iter().map(|&(t, c)| features(&mut rng, 2, t, c)).collect();
        let clfs: Vec<StageClassifier> = dims.iter().map(|&(_, c)| classifier(&mut rng, c, 4, 1.0)).collect();
        let cfg = FbmConfig::new([5, 3, 2, 1], 4, 0.7);
        let mut inputs = feats.clone();
        for c in &clfs {
            inputs.push(c.weight.clone());
            inputs.push(c.bias.clone());
        }
        let r = check_gradients(&inputs, |t| {
            let clfs: Vec<StageClassifier> = (0..4)
                .map(|i| StageClassifier { weight: t[4 + 2 * i].clone(), bias: t[5 + 2 * i].clone() })
                .collect();
            fbm_total_loss(&t[..4], &clfs, &cfg)
                .map(|o| o.loss)
                .map_err(|e| TensorError::Contract(e.to_string()))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    proptest! {
        #[test]
        fn selection_partitions_tokens(
            scores in proptest::collection::vec(0.0f64..1.0, 2..40),
            k_frac in 0.0f64..1.0,
        ) {
            let t = scores.len();
            let k = 1 + ((t - 1) as f64 * k_frac) as usize % (t - 1);
            let s = select_foreground(&scores, k).unwrap();
            prop_assert_eq!(s.foreground.len(), k);
            let mut all: Vec<usize> = s.foreground.iter().chain(&s.background).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..t).collect::<Vec<_>>());
            let min_fg = s.foreground.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
            let max_bg = s.background.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_fg >= max_bg);
        }

        #[test]
        fn permuting_tokens_permutes_selection(
            scores in proptest::collection::hash_set(0u32..100_000, 3..30),
            seed in 0u64..1000,
        ) {
            let scores: Vec<f64> = scores.into_iter().map(|v| v as f64 / 100_000.0).collect();
            let t = scores.len();
            let k = t / 2;
            let mut perm: Vec<usize> = (0..t).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..t).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let permuted: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
            let a = select_foreground(&scores, k).unwrap();
            let b = select_foreground(&permuted, k).unwrap();
            let mut mapped: Vec<usize> = b.foreground.iter().map(|&j| perm[j]).collect();
            mapped.sort();
            prop_assert_eq!(mapped, a.foreground);
            let la = fb_stage_loss(&Tensor::new(a.background.iter().map(|&i| scores[i]).collect(), &[t - k]).unwrap()).unwrap().item();
            let lb = fb_stage_loss(&Tensor::new(b.background.iter().map(|&j| permuted[j]).collect(), &[t - k]).unwrap()).unwrap().item();
            prop_assert!((la - lb).abs() < 1e-15);
        }
    }
}
