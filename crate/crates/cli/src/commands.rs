use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use coilscope_core::dataset::{
    generate_dataset, load_dataset, load_image, resize_to_64, write_dataset, DatasetManifest, Sample,
};
use coilscope_core::metrics::{evaluate_with, relative_error};
use coilscope_core::model::{self, Architecture, CoilNet, IMAGE_SIDE};
use coilscope_core::train::{split_by_coil, train_with, TrainConfig};
use serde_json::json;

use crate::record::RunRecord;
use crate::units::engineering;
use crate::{threads, EvalArgs, GenerateArgs, PredictArgs, Split, TrainArgs};

pub const MODEL_FILE: &str = "model.cnet";
pub const LOSS_FILE: &str = "loss.csv";
pub const RUN_FILE: &str = "run.json";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    create_dir(&a.out)?;
    let (samples, manifest) = generate_dataset(a.coils, &a.freqs, a.seed)?;
    let manifest_path = write_dataset(&a.out, &samples, &manifest)?;

    let mut record = RunRecord::new("generate", a.seed);
    record.set("config", json!({ "coils": a.coils, "freqs_hz": a.freqs }));
    record.output(&manifest_path)?;
    record.write(&a.out.join(RUN_FILE))?;

    let (l_lo, l_hi) = range(samples.iter().map(|s| s.inductance_h));
    let (q_lo, q_hi) = range(samples.iter().map(|s| s.quality));
    println!("coils:    {}", a.coils);
    println!("samples:  {}", samples.len());
    println!("L range:  {} H .. {} H", engineering(l_lo), engineering(l_hi));
    println!("Q range:  {} .. {}", engineering(q_lo), engineering(q_hi));
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

/// Manifest plus every distinct image it references, for run records.
fn dataset_inputs(record: &mut RunRecord, manifest_path: &Path) -> Result<()> {
    record.input(manifest_path)?;
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let images: BTreeSet<&str> = manifest.records.iter().map(|r| r.image.as_str()).collect();
    for image in images {
        record.input(&base.join(image))?;
    }
    Ok(())
}

fn coil_ids(samples: &[Sample]) -> Vec<String> {
    samples
        .iter()
        .map(|s| s.coil_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let threads = threads()?;
    let channels: [usize; 3] = a.channels[..]
        .try_into()
        .context("--channels takes exactly three values")?;
    if channels.contains(&0) {
        bail!("--channels must be positive");
    }
    if a.checkpoint_every == Some(0) {
        bail!("--checkpoint-every must be positive");
    }
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        shuffle: !a.no_shuffle,
        threads,
        early_stop_patience: a.early_stop,
    };
    cfg.validate()?;
    let samples = load_dataset(&a.manifest)?;
    let (train_set, test_set) = split_by_coil(&samples, a.train_coils, a.seed)?;
    create_dir(&a.out)?;
    let checkpoint_dir = a.out.join("checkpoints");
    if a.checkpoint_every.is_some() {
        create_dir(&checkpoint_dir)?;
    }

    let net = CoilNet::init_with(Architecture { channels }, a.seed);
    eprintln!(
        "training on {} samples ({} coils), validating on {} samples ({} coils), {} parameters",
        train_set.len(),
        a.train_coils,
        test_set.len(),
        coil_ids(&test_set).len(),
        net.num_parameters()
    );
    let progress_every = (a.epochs / 20).max(1);
    let start = Instant::now();
    let (net, report) = train_with(net, &train_set, &test_set, &cfg, |e, net| {
        if !a.quiet && (e.epoch % progress_every == 0 || e.epoch == 1) {
            let val = e.val_loss.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
            eprintln!(
                "epoch {:>5}/{}  train {:.6}  val {}  {:.1}s",
                e.epoch,
                a.epochs,
                e.train_loss,
                val,
                start.elapsed().as_secs_f64()
            );
        }
        if let Some(k) = a.checkpoint_every {
            if e.epoch % k == 0 {
                model::save(net, checkpoint_dir.join(format!("epoch_{:04}.cnet", e.epoch)))?;
            }
        }
        Ok(())
    })
    .context("training failed")?;

    let model_path = a.out.join(MODEL_FILE);
    model::save(&net, &model_path)?;
    let loss_path = a.out.join(LOSS_FILE);
    let file = File::create(&loss_path).with_context(|| format!("writing {}", loss_path.display()))?;
    report
        .write_csv(BufWriter::new(file))
        .with_context(|| format!("writing {}", loss_path.display()))?;

    let mut record = RunRecord::new("train", a.seed);
    record
        .set("config", serde_json::to_value(&report.config)?)
        .set("train_coils", a.train_coils.into())
        .set("channels", json!(channels))
        .set("split", json!({ "train": coil_ids(&train_set), "test": coil_ids(&test_set) }))
        .set("norm_stats", serde_json::to_value(report.norm_stats)?)
        .set("epochs_completed", report.epochs.len().into())
        .set("stopped_early", report.stopped_early.into());
    dataset_inputs(&mut record, &a.manifest)?;
    record.output(&model_path)?.output(&loss_path)?;
    record.write(&a.out.join(RUN_FILE))?;

    let first = report.epochs.first().map(|e| e.train_loss).unwrap_or(f64::NAN);
    let last = report.epochs.last().expect("at least one epoch");
    println!("epochs:           {}", report.epochs.len());
    println!("train loss:       {first:.6} -> {:.6}", last.train_loss);
    if let Some(v) = last.val_loss {
        println!("validation loss:  {v:.6}");
    }
    println!("seconds:          {:.1}", start.elapsed().as_secs_f64());
    println!("checkpoint:       {}", model_path.display());
    Ok(())
}

fn split_filter(run: &Path, split: Split) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(run).with_context(|| format!("reading {}", run.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", run.display()))?;
    let key = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let ids = v["split"][key]
        .as_array()
        .with_context(|| format!("{} has no split.{key} list", run.display()))?;
    ids.iter()
        .map(|id| id.as_str().map(str::to_owned).context("coil ids must be strings"))
        .collect()
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let threads = threads()?;
    let net = model::load(&a.checkpoint)?;
    let mut samples = load_dataset(&a.manifest)?;
    if let (Some(run), Some(split)) = (&a.run, a.split) {
        let keep = split_filter(run, split)?;
        samples.retain(|s| keep.contains(&s.coil_id));
        if samples.is_empty() {
            bail!("no manifest rows belong to the selected split");
        }
    }
    let report = evaluate_with(&net, &samples, threads)?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        a.checkpoint
            .parent()
            .unwrap_or(Path::new(""))
            .join("eval_report.json")
    });
    if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(&report_path, report.to_json()).with_context(|| format!("writing {}", report_path.display()))?;

    let mut record = RunRecord::new("eval", 0);
    record.set(
        "split",
        json!(a.split.map(|s| match s {
            Split::Train => "train",
            Split::Test => "test",
        })),
    );
    record.input(&a.checkpoint)?;
    if let Some(run) = &a.run {
        record.input(run)?;
    }
    dataset_inputs(&mut record, &a.manifest)?;
    record.output(&report_path)?;
    record.write(&sibling(&report_path, "run.json"))?;

    print!("{}", report.render_table());
    Ok(())
}

/// `dir/name.json` -> `dir/name.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let net = model::load(&a.checkpoint)?;
    let image = load_image(&a.image)?;
    let image = if image.shape() == [1, IMAGE_SIDE, IMAGE_SIDE] {
        image
    } else {
        resize_to_64(&image).with_context(|| format!("image {}", a.image.display()))?
    };
    let p = net.predict(&image, a.freq)?;
    println!("L = {} H, Q = {}", engineering(p.inductance_h), engineering(p.quality));
    let mut errors = None;
    if let Some((l, q)) = a.label {
        let sample = Sample::new(image, a.freq, l, q, "label")?;
        let (el, eq) = relative_error(&p, &sample)?;
        println!("relative error: L {:.2}%, Q {:.2}%", 100.0 * el, 100.0 * eq);
        errors = Some((el, eq));
    }
    if let Some(path) = &a.record {
        let mut record = RunRecord::new("predict", 0);
        record
            .set("freq_hz", a.freq.into())
            .set("prediction", json!({ "L_h": p.inductance_h, "Q": p.quality }))
            .set("label", json!(a.label.map(|(l, q)| json!({ "L_h": l, "Q": q }))))
            .set("relative_error", json!(errors.map(|(l, q)| json!({ "L": l, "Q": q }))));
        record.input(&a.checkpoint)?.input(&a.image)?;
        record.write(path)?;
    }
    Ok(())
}
