use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use roadformer::arch::{Model, ModelConfig, Variant};
use roadformer::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use roadformer::data::{
    class_dirs, load_dataset, load_dataset_with, remap_to_simple, stratified_split, synth_class_name, synth_generate,
    write_dataset, ClassMap, LabeledImage, Normalization, SIMPLE_CLASSES,
};
use roadformer::metrics::MetricsReport;
use roadformer::train::{evaluate, train as run_training, LogRecord, TrainError};
use serde_json::{json, Value};

use crate::config::{flag_value, RunConfig};
use crate::{BuildArgs, EvalArgs, SynthArgs, TrainArgs};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type Result<T> = std::result::Result<T, Failure>;

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

fn config_failure(problems: Vec<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error: anyhow!("invalid configuration:\n  {}", problems.join("\n  ")),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(fail(EXIT_DATA))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(fail(EXIT_DATA))
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn stage_report(model: &Model) -> Vec<Value> {
    let cfg = model.config();
    let breakdown = model.param_breakdown();
    let params_of = |group: &str| breakdown.iter().find(|(g, _)| g == group).map_or(0, |(_, n)| *n);
    cfg.stack
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let g = cfg.stage_grid(i);
            json!({
                "stage": i + 1,
                "blocks": s.to_string(),
                "grid": [g, g],
                "tokens": g * g,
                "width": s.channels,
                "params": params_of(&format!("stage{}", i + 1)),
            })
        })
        .collect()
}

pub fn build(a: BuildArgs) -> Result<()> {
    let mut cfg = RunConfig {
        variant: a.variant.clone().unwrap_or_else(|| "B".into()),
        ..RunConfig::default()
    };
    let mut errors = Vec::new();
    cfg.apply(
        [
            ("model.spec", a.spec.clone().map_or(Value::Null, Value::String)),
            ("model.resolution", json!(a.resolution)),
            ("model.channels", a.channels.as_deref().map_or(Value::Null, flag_value)),
        ],
        &mut errors,
    );
    if !errors.is_empty() {
        return Err(config_failure(errors));
    }
    let mc = cfg.model_config(a.classes).map_err(config_failure)?;
    let model = Model::build(&mc, 0).map_err(|e| fail(EXIT_CONFIG)(e.into()))?;
    let total = model.count_params();
    // A width override is still compared against the variant's published count.
    let preset = match (&a.spec, a.resolution) {
        (None, None) => Variant::parse(&cfg.variant),
        _ => None,
    };
    let target = preset.map(|v| {
        let t = v.reported_params();
        let dev = (total as f64 - t as f64) / t as f64;
        json!({"variant": v.name(), "published": t, "deviation": dev, "within_20pct": dev.abs() <= 0.2})
    });
    let breakdown = model.param_breakdown();
    let report = json!({
        "layout": mc.stack.letters(),
        "stack": mc.stack.to_string(),
        "resolution": mc.input_resolution,
        "classes": mc.num_classes,
        "head_dim": mc.head_dim,
        "mlp_ratio": mc.mlp_ratio,
        "output_channel": mc.output_channel,
        "stages": stage_report(&model),
        "groups": breakdown.iter().map(|(g, n)| json!({"group": g, "params": n})).collect::<Vec<_>>(),
        "total_params": total,
        "target": target,
    });
    if a.json {
        print!("{}", pretty(&report));
        return Ok(());
    }
    println!(
        "layout {}  resolution {}  classes {}  head_dim {}  mlp_ratio {}  output_channel {}",
        mc.stack.letters(),
        mc.input_resolution,
        mc.num_classes,
        mc.head_dim,
        mc.mlp_ratio,
        mc.output_channel
    );
    for s in report["stages"].as_array().expect("array") {
        println!(
            "stage{} {:<22} grid {:>3}x{:<3} tokens {:>5}  width {:>5}  params {:>11}",
            s["stage"],
            s["blocks"].as_str().unwrap_or(""),
            s["grid"][0].as_u64().unwrap_or(0),
            s["grid"][1].as_u64().unwrap_or(0),
            s["tokens"].as_u64().unwrap_or(0),
            s["width"].as_u64().unwrap_or(0),
            s["params"].as_u64().unwrap_or(0)
        );
    }
    for (g, n) in &breakdown {
        if !g.starts_with("stage") {
            println!("{g:<50} params {n:>11}");
        }
    }
    println!("total params {total} ({:.2}M)", total as f64 / 1e6);
    if let Some(t) = &report["target"].as_object() {
        let dev = t["deviation"].as_f64().unwrap_or(0.0);
        let flag = if dev.abs() <= 0.2 { "within +-20%" } else { "OUTSIDE +-20%" };
        println!(
            "published {} params {:.0}M: deviation {:+.2}% ({flag})",
            t["variant"].as_str().unwrap_or(""),
            t["published"].as_f64().unwrap_or(0.0) / 1e6,
            dev * 100.0
        );
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let images = synth_generate(a.classes, a.per_class, a.resolution, a.seed).map_err(|e| fail(EXIT_CONFIG)(e.into()))?;
    let cm = ClassMap::new((0..a.classes).map(synth_class_name).collect()).map_err(|e| fail(EXIT_CONFIG)(e.into()))?;
    create_dir(&a.out)?;
    write_dataset(&a.out, &images, &cm).map_err(|e| fail(EXIT_DATA)(e.into()))?;
    println!("wrote {} images in {} classes to {}", images.len(), a.classes, a.out.display());
    Ok(())
}

fn class_map_for(dir: &Path) -> Result<ClassMap> {
    let json = dir.join("classes.json");
    let cm = if json.exists() {
        let text = std::fs::read_to_string(&json)
            .with_context(|| format!("reading {}", json.display()))
            .map_err(fail(EXIT_DATA))?;
        ClassMap::from_json(&text)
    } else {
        class_dirs(dir).and_then(ClassMap::new)
    };
    cm.with_context(|| format!("class map of {}", dir.display())).map_err(fail(EXIT_DATA))
}

fn select(data: &[LabeledImage], idx: &[usize]) -> Vec<LabeledImage> {
    idx.iter().map(|&i| data[i].clone()).collect()
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    let mut errors = Vec::new();
    if let Some(path) = &a.config {
        cfg.load_file(path, &mut errors).map_err(fail(EXIT_CONFIG))?;
    }
    let named = [
        ("data.dir", a.data.clone().map(Value::String)),
        ("out.dir", a.out.clone().map(Value::String)),
        ("model.variant", a.variant.clone().map(Value::String)),
        ("model.spec", a.spec.clone().map(Value::String)),
        ("train.epochs", a.epochs.map(|v| json!(v))),
        ("train.batch", a.batch.map(|v| json!(v))),
        ("train.lr_ref", a.lr_ref.map(|v| json!(v))),
        ("fbm.lambda", a.fbm_lambda.map(|v| json!(v))),
        ("train.seed", a.seed.map(|v| json!(v))),
    ];
    cfg.apply(named.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))), &mut errors);
    let mut sets = Vec::new();
    for s in &a.set {
        match s.split_once('=') {
            Some((k, v)) => sets.push((k.to_string(), flag_value(v))),
            None => errors.push(format!("--set {s:?}: expected KEY=VALUE")),
        }
    }
    cfg.apply(sets.iter().map(|(k, v)| (k.as_str(), v.clone())), &mut errors);
    errors.extend(cfg.violations());
    if !errors.is_empty() {
        return Err(config_failure(errors));
    }

    let data_dir = Path::new(cfg.data_dir.as_deref().expect("validated")).to_path_buf();
    let class_map = class_map_for(&data_dir)?;
    let mc = cfg.model_config(class_map.len()).map_err(config_failure)?;
    let dataset = load_dataset(&data_dir, &class_map, mc.input_resolution).map_err(|e| fail(EXIT_DATA)(e.into()))?;
    if dataset.skipped > 0 {
        eprintln!("skipped {} undecodable files", dataset.skipped);
    }
    let labels: Vec<usize> = dataset.images.iter().map(|i| i.label).collect();
    let (train_idx, held_idx) =
        stratified_split(&labels, cfg.train_frac, cfg.split_seed).map_err(|e| fail(EXIT_CONFIG)(e.into()))?;
    let train_set = select(&dataset.images, &train_idx);
    let held_set = select(&dataset.images, &held_idx);
    let tc = cfg.train_config();
    let v = tc.violations(train_set.len(), &mc);
    if !v.is_empty() {
        return Err(config_failure(v));
    }

    let out = Path::new(&cfg.out_dir).to_path_buf();
    create_dir(&out)?;
    let mut effective = serde_json::to_value(cfg.effective()).expect("serializable");
    let derived = json!({
        "derived.base_lr": tc.base_lr(),
        "derived.warmup_steps": tc.effective_warmup(train_set.len()),
        "derived.total_steps": tc.total_steps(train_set.len()),
        "derived.fbm_k": tc.fbm_config(&mc).k_schedule,
        "derived.classes": class_map.classes,
        "derived.train_samples": train_set.len(),
        "derived.held_out_samples": held_set.len(),
    });
    effective.as_object_mut().expect("object").extend(derived.as_object().expect("object").clone());
    print!("effective config\n{}", pretty(&effective));
    write_file(&out.join("config.json"), &pretty(&effective))?;
    println!("base lr {:e}", tc.base_lr());

    let model = Model::build(&mc, cfg.init_seed).map_err(|e| fail(EXIT_CONFIG)(e.into()))?;
    let log_path = out.join("log.jsonl");
    let mut log = BufWriter::new(
        File::create(&log_path)
            .with_context(|| format!("creating {}", log_path.display()))
            .map_err(fail(EXIT_DATA))?,
    );
    let mut log_error = None;
    let outcome = run_training(&model, &train_set, &tc, |r| {
        if let Err(e) = writeln!(log, "{}", serde_json::to_string(r).expect("serializable")) {
            log_error.get_or_insert(e);
        }
        if let LogRecord::Epoch {
            epoch,
            mean_loss,
            train_top1,
        } = r
        {
            println!("epoch {epoch:>4}  loss {mean_loss:.5}  running train top1 {train_top1:.4}");
        }
    });
    log.flush().ok();
    if let Some(e) = log_error {
        return Err(fail(EXIT_DATA)(anyhow!(e).context(format!("writing {}", log_path.display()))));
    }
    let outcome = outcome.map_err(|e| match e {
        TrainError::NonFinite { .. } => fail(EXIT_NUMERIC)(e.into()),
        TrainError::Config(v) => config_failure(v),
        other => fail(EXIT_DATA)(other.into()),
    })?;

    let eval_err = |e: TrainError| fail(EXIT_DATA)(e.into());
    let train_report = evaluate(&model, &train_set, tc.batch, &tc.normalization).map_err(eval_err)?;
    println!("train top1 {:.4}", train_report.top1);
    write_file(&out.join("train_metrics.json"), &pretty(&train_report))?;
    let held_report = if held_set.is_empty() {
        println!("held-out split is empty; no held-out metrics");
        None
    } else {
        let r = evaluate(&model, &held_set, tc.batch, &tc.normalization).map_err(eval_err)?;
        println!(
            "held-out top1 {:.4}  macro P {:.4}  R {:.4}  F1 {:.4}",
            r.top1, r.macro_precision, r.macro_recall, r.macro_f1
        );
        write_file(&out.join("metrics.json"), &pretty(&r))?;
        write_file(&out.join("confusion.csv"), &r.confusion_csv(&class_map.classes))?;
        Some(r)
    };
    let meta = CheckpointMeta {
        class_map,
        step: outcome.steps,
        metrics: held_report.or(Some(train_report)),
        train: Some(tc),
    };
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&ckpt, &model, Some(&outcome.optimizer), &meta).map_err(|e| fail(EXIT_DATA)(e.into()))?;
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let loaded = load_checkpoint(&a.checkpoint).map_err(|e| fail(EXIT_DATA)(e.into()))?;
    let model = loaded.model;
    let mc: ModelConfig = model.config().clone();
    let class_map = loaded.meta.class_map;
    let norm = loaded.meta.train.map_or_else(Normalization::default, |t| t.normalization);
    let dirs = class_dirs(&a.data).map_err(|e| fail(EXIT_DATA)(e.into()))?;
    let mismatch = |data_classes: usize| {
        fail(EXIT_DATA)(anyhow!(
            "class-count mismatch: data has {data_classes} classes, checkpoint has {}",
            mc.num_classes
        ))
    };
    let dataset = if a.simple {
        if mc.num_classes != SIMPLE_CLASSES.len() {
            return Err(mismatch(SIMPLE_CLASSES.len()));
        }
        let mut problems = Vec::new();
        for d in &dirs {
            match remap_to_simple(d) {
                Ok(c) if class_map.index(&c).is_none() => problems.push(format!("{d}: {c:?} is not a checkpoint class")),
                Ok(_) => {}
                Err(e) => problems.push(e.to_string()),
            }
        }
        if !problems.is_empty() {
            return Err(fail(EXIT_DATA)(anyhow!("{}", problems.join("; "))));
        }
        load_dataset_with(&a.data, mc.input_resolution, |d| {
            remap_to_simple(d).ok().and_then(|c| class_map.index(&c))
        })
    } else {
        if dirs.len() != mc.num_classes {
            return Err(mismatch(dirs.len()));
        }
        load_dataset(&a.data, &class_map, mc.input_resolution)
    }
    .map_err(|e| fail(EXIT_DATA)(e.into()))?;
    if dataset.images.is_empty() {
        return Err(fail(EXIT_DATA)(anyhow!("no decodable images under {}", a.data.display())));
    }
    let report: MetricsReport =
        evaluate(&model, &dataset.images, a.batch, &norm).map_err(|e| fail(EXIT_DATA)(e.into()))?;
    create_dir(&a.out)?;
    write_file(&a.out.join("metrics.json"), &pretty(&report))?;
    write_file(&a.out.join("confusion.csv"), &report.confusion_csv(&class_map.classes))?;
    println!(
        "samples {}  top1 {:.4}  macro P {:.4}  R {:.4}  F1 {:.4}",
        report.total(),
        report.top1,
        report.macro_precision,
        report.macro_recall,
        report.macro_f1
    );
    Ok(())
}
