//! Run configuration: a flat JSON object with dotted keys, overlaid by
//! command-line flags.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use roadformer::arch::{parse_stack_spec_for, ModelConfig, Variant};
use roadformer::data::Normalization;
use roadformer::optim::AdamWConfig;
use roadformer::train::{TrainConfig, REFERENCE_LR};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub variant: String,
    pub spec: Option<String>,
    pub resolution: Option<usize>,
    pub channels: Option<[usize; 4]>,
    pub head_dim: Option<usize>,
    pub mlp_ratio: Option<f64>,
    pub output_channel: Option<usize>,
    pub init_seed: u64,
    pub fbm_lambda: f64,
    pub fbm_k: Option<[Option<usize>; 4]>,
    pub epochs: usize,
    pub batch: usize,
    pub lr_ref: f64,
    pub min_lr: f64,
    pub warmup_steps: Option<u64>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub train_frac: f64,
    pub split_seed: u64,
    pub data_dir: Option<String>,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adamw = AdamWConfig::default();
        Self {
            variant: "micro".into(),
            spec: None,
            resolution: None,
            channels: None,
            head_dim: None,
            mlp_ratio: None,
            output_channel: None,
            init_seed: 0,
            fbm_lambda: 1.0,
            fbm_k: None,
            epochs: 40,
            batch: 32,
            lr_ref: REFERENCE_LR,
            min_lr: 0.0,
            warmup_steps: None,
            weight_decay: adamw.weight_decay,
            beta1: adamw.beta1,
            beta2: adamw.beta2,
            eps: adamw.eps,
            seed: 0,
            train_frac: 0.8,
            split_seed: 0,
            data_dir: None,
            norm_mean: 0.5,
            norm_std: 0.5,
            out_dir: "run".into(),
        }
    }
}

fn as_usize(v: &Value) -> Result<usize, String> {
    v.as_u64().map(|n| n as usize).ok_or_else(|| format!("expected a non-negative integer, got {v}"))
}

fn as_f64(v: &Value) -> Result<f64, String> {
    v.as_f64().ok_or_else(|| format!("expected a number, got {v}"))
}

fn as_string(v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        other => Ok(other.to_string()),
    }
}

fn opt<T>(v: &Value, f: impl Fn(&Value) -> Result<T, String>) -> Result<Option<T>, String> {
    if v.is_null() {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

/// A list of four entries, as a JSON array or a comma-separated string.
/// `null` or `-` marks an empty entry.
fn four<T: Copy + Default>(v: &Value, f: impl Fn(&Value) -> Result<Option<T>, String>) -> Result<[Option<T>; 4], String> {
    let items: Vec<Value> = match v {
        Value::Array(a) => a.clone(),
        Value::String(s) => s
            .split(',')
            .map(|t| match t.trim() {
                "-" | "" | "null" => Value::Null,
                t => serde_json::from_str(t).unwrap_or(Value::String(t.into())),
            })
            .collect(),
        other => return Err(format!("expected a list of 4 entries, got {other}")),
    };
    if items.len() != 4 {
        return Err(format!("expected 4 entries, got {}", items.len()));
    }
    let mut out = [None; 4];
    for (dst, item) in out.iter_mut().zip(&items) {
        *dst = if item.is_null() { None } else { f(item)? };
    }
    Ok(out)
}

/// Parses a flag value: JSON if it parses, otherwise a plain string.
pub fn flag_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.into()))
}

impl RunConfig {
    pub const KEYS: [&'static str; 26] = [
        "model.variant",
        "model.spec",
        "model.resolution",
        "model.channels",
        "model.head_dim",
        "model.mlp_ratio",
        "model.output_channel",
        "model.seed",
        "fbm.lambda",
        "fbm.k",
        "train.epochs",
        "train.batch",
        "train.lr_ref",
        "train.min_lr",
        "train.warmup_steps",
        "train.weight_decay",
        "train.beta1",
        "train.beta2",
        "train.eps",
        "train.seed",
        "train.train_frac",
        "train.split_seed",
        "data.dir",
        "data.norm_mean",
        "data.norm_std",
        "out.dir",
    ];

    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), String> {
        match key {
            "model.variant" => self.variant = as_string(v)?,
            "model.spec" => self.spec = opt(v, as_string)?,
            "model.resolution" => self.resolution = opt(v, as_usize)?,
            "model.channels" => {
                self.channels = if v.is_null() {
                    None
                } else {
                    let c = four(v, |x| as_usize(x).map(Some))?;
                    if c.iter().any(Option::is_none) {
                        return Err("all four widths are required".into());
                    }
                    Some(c.map(|x| x.unwrap_or_default()))
                }
            }
            "model.head_dim" => self.head_dim = opt(v, as_usize)?,
            "model.mlp_ratio" => self.mlp_ratio = opt(v, as_f64)?,
            "model.output_channel" => self.output_channel = opt(v, as_usize)?,
            "model.seed" => self.init_seed = as_usize(v)? as u64,
            "fbm.lambda" => self.fbm_lambda = as_f64(v)?,
            "fbm.k" => self.fbm_k = if v.is_null() { None } else { Some(four(v, |x| as_usize(x).map(Some))?) },
            "train.epochs" => self.epochs = as_usize(v)?,
            "train.batch" => self.batch = as_usize(v)?,
            "train.lr_ref" => self.lr_ref = as_f64(v)?,
            "train.min_lr" => self.min_lr = as_f64(v)?,
            "train.warmup_steps" => self.warmup_steps = opt(v, as_usize)?.map(|n| n as u64),
            "train.weight_decay" => self.weight_decay = as_f64(v)?,
            "train.beta1" => self.beta1 = as_f64(v)?,
            "train.beta2" => self.beta2 = as_f64(v)?,
            "train.eps" => self.eps = as_f64(v)?,
            "train.seed" => self.seed = as_usize(v)? as u64,
            "train.train_frac" => self.train_frac = as_f64(v)?,
            "train.split_seed" => self.split_seed = as_usize(v)? as u64,
            "data.dir" => self.data_dir = opt(v, as_string)?,
            "data.norm_mean" => self.norm_mean = as_f64(v)?,
            "data.norm_std" => self.norm_std = as_f64(v)?,
            "out.dir" => self.out_dir = as_string(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Applies every entry, collecting all failures.
    pub fn apply<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, Value)>, errors: &mut Vec<String>) {
        for (k, v) in entries {
            if let Err(e) = self.set(k, &v) {
                errors.push(format!("{k}: {e}"));
            }
        }
    }

    pub fn load_file(&mut self, path: &Path, errors: &mut Vec<String>) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let Value::Object(map) = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? else {
            bail!("{}: expected a JSON object of dotted keys", path.display());
        };
        self.apply(map.iter().map(|(k, v)| (k.as_str(), v.clone())), errors);
        Ok(())
    }

    pub fn effective(&self) -> BTreeMap<&'static str, Value> {
        let keys = Self::KEYS;
        let values = [
            json!(self.variant),
            json!(self.spec),
            json!(self.resolution),
            json!(self.channels),
            json!(self.head_dim),
            json!(self.mlp_ratio),
            json!(self.output_channel),
            json!(self.init_seed),
            json!(self.fbm_lambda),
            json!(self.fbm_k),
            json!(self.epochs),
            json!(self.batch),
            json!(self.lr_ref),
            json!(self.min_lr),
            json!(self.warmup_steps),
            json!(self.weight_decay),
            json!(self.beta1),
            json!(self.beta2),
            json!(self.eps),
            json!(self.seed),
            json!(self.train_frac),
            json!(self.split_seed),
            json!(self.data_dir),
            json!(self.norm_mean),
            json!(self.norm_std),
            json!(self.out_dir),
        ];
        keys.into_iter().zip(values).collect()
    }

    /// The architecture named by the config, for `num_classes` outputs.
    pub fn model_config(&self, num_classes: usize) -> Result<ModelConfig, Vec<String>> {
        let (base, defaults) = if self.variant.eq_ignore_ascii_case("micro") {
            (ModelConfig::micro(num_classes), Variant::T)
        } else {
            let v = Variant::parse(&self.variant)
                .ok_or_else(|| vec![format!("model.variant: unknown variant {:?} (T, S, B, L or micro)", self.variant)])?;
            (ModelConfig::preset(v, num_classes), v)
        };
        let mut cfg = base;
        if let Some(spec) = &self.spec {
            cfg.stack = parse_stack_spec_for(spec, defaults)
                .map_err(|e| vec![format!("model.spec: {e}")])?
                .with_channels(cfg.channels());
        }
        if let Some(c) = self.channels {
            cfg.stack = cfg.stack.with_channels(c);
        }
        if let Some(r) = self.resolution {
            cfg.input_resolution = r;
        }
        if let Some(h) = self.head_dim {
            cfg.head_dim = h;
        }
        if let Some(m) = self.mlp_ratio {
            cfg.mlp_ratio = m;
        }
        if let Some(o) = self.output_channel {
            cfg.output_channel = o;
        }
        let v = cfg.violations();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(v)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr_ref: self.lr_ref,
            min_lr: self.min_lr,
            warmup_steps: self.warmup_steps,
            adamw: AdamWConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
            },
            fbm_lambda: self.fbm_lambda,
            k_schedule: self.fbm_k,
            seed: self.seed,
            normalization: Normalization {
                mean: [self.norm_mean; 3],
                std: [self.norm_std; 3],
            },
        }
    }

    /// Constraints that do not depend on the dataset.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.train_frac > 0.0 && self.train_frac <= 1.0) {
            v.push(format!("train.train_frac must lie in (0, 1], got {}", self.train_frac));
        }
        if !(self.norm_std > 0.0) {
            v.push(format!("data.norm_std must be positive, got {}", self.norm_std));
        }
        if self.data_dir.is_none() {
            v.push("data.dir is required".into());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_lists_every_key() {
        let c = RunConfig::default();
        assert_eq!(c.effective().len(), RunConfig::KEYS.len());
        let mut d = RunConfig::default();
        let mut errors = Vec::new();
        d.apply(c.effective().into_iter().map(|(k, v)| (k, v)), &mut errors);
        assert!(errors.is_empty(), "{errors:?}");
    }

    #[test]
    fn errors_are_collected() {
        let mut c = RunConfig::default();
        let mut errors = Vec::new();
        c.apply(
            [
                ("train.batch", json!("x")),
                ("nope", json!(1)),
                ("fbm.k", flag_value("5,3,1,-")),
            ],
            &mut errors,
        );
        assert_eq!(errors.len(), 2, "{errors:?}");
        assert_eq!(c.fbm_k, Some([Some(5), Some(3), Some(1), None]));
    }

    #[test]
    fn spec_and_width_overrides() {
        let mut c = RunConfig {
            variant: "B".into(),
            spec: Some("LMGG".into()),
            ..RunConfig::default()
        };
        let m = c.model_config(27).unwrap();
        assert_eq!(m.stack.letters(), "LMGG");
        assert_eq!(m.channels(), Variant::B.channels());
        c.channels = Some([96, 192, 384, 768]);
        assert_eq!(c.model_config(27).unwrap().channels(), [96, 192, 384, 768]);
        c.spec = Some("LM".into());
        assert!(c.model_config(27).unwrap_err()[0].contains("expected 4 stages"));
    }
}
