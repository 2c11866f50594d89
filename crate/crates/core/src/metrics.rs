//! Evaluation metrics. Squared errors are taken in the network's
//! standardized log space, relative errors in physical units.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::{CoilNet, NormStats, Prediction};
use crate::tensor::Tensor;
use crate::train::pair_loss;

const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    /// Mean over samples of the summed squared residual of `[L, Q]`.
    pub mse: f64,
    /// Mean over samples of half the summed squared residual.
    pub paper_error: f64,
    /// `mse` of a predictor that always outputs the training-label means.
    pub baseline_mse: f64,
    #[serde(rename = "mean_rel_err_L")]
    pub mean_rel_err_l: f64,
    #[serde(rename = "mean_rel_err_Q")]
    pub mean_rel_err_q: f64,
    /// Median over the pooled L and Q relative errors.
    pub median_rel_err: f64,
    #[serde(rename = "median_rel_err_L")]
    pub median_rel_err_l: f64,
    #[serde(rename = "median_rel_err_Q")]
    pub median_rel_err_q: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields always serialize") + "\n"
    }

    pub fn render_table(&self) -> String {
        let rows = [
            ("samples", self.n_samples.to_string()),
            ("mse (normalized)", format!("{:.6}", self.mse)),
            ("paper error (normalized)", format!("{:.6}", self.paper_error)),
            ("baseline mse (mean predictor)", format!("{:.6}", self.baseline_mse)),
            ("mean relative error L", percent(self.mean_rel_err_l)),
            ("mean relative error Q", percent(self.mean_rel_err_q)),
            ("median relative error L", percent(self.median_rel_err_l)),
            ("median relative error Q", percent(self.median_rel_err_q)),
            ("median relative error (L and Q)", percent(self.median_rel_err)),
        ];
        let key_width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
        let value_width = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<key_width$}  {v:>value_width$}");
        }
        out
    }
}

fn percent(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn check_pairs(op: &'static str, preds: &[Tensor], labels: &[Tensor]) -> Result<Vec<([f64; 2], [f64; 2])>> {
    if preds.len() != labels.len() {
        return Err(Error::invalid(
            op,
            format!("{} predictions but {} labels", preds.len(), labels.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::invalid(op, "no samples"));
    }
    preds
        .iter()
        .zip(labels)
        .map(|(p, y)| {
            p.expect_shape(op, &[2])?;
            y.expect_shape(op, &[2])?;
            Ok(([p.data()[0], p.data()[1]], [y.data()[0], y.data()[1]]))
        })
        .collect()
}

/// `(1/n)·Σ‖ŷᵢ − yᵢ‖²`.
pub fn mse_metric(preds: &[Tensor], labels: &[Tensor]) -> Result<f64> {
    let pairs = check_pairs("mse_metric", preds, labels)?;
    Ok(pairs.iter().map(|&(p, y)| 2.0 * pair_loss(p, y)).sum::<f64>() / pairs.len() as f64)
}

/// `(1/n)·Σ ½[(L̂ᵢ−Lᵢ)² + (Q̂ᵢ−Qᵢ)²]`, the mean per-sample training loss.
pub fn paper_error(preds: &[Tensor], labels: &[Tensor]) -> Result<f64> {
    let pairs = check_pairs("paper_error", preds, labels)?;
    Ok(pairs.iter().map(|&(p, y)| pair_loss(p, y)).sum::<f64>() / pairs.len() as f64)
}

/// `(|L̂−L*|/L*, |Q̂−Q*|/Q*)`.
pub fn relative_error(p: &Prediction, s: &Sample) -> Result<(f64, f64)> {
    for (name, v) in [("inductance", s.inductance_h), ("quality", s.quality)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(
                "relative_error",
                format!("{name} label must be positive, got {v}"),
            ));
        }
    }
    Ok((
        (p.inductance_h - s.inductance_h).abs() / s.inductance_h,
        (p.quality - s.quality).abs() / s.quality,
    ))
}

/// Runs the net over `test_set` and fills every report field.
pub fn evaluate(net: &CoilNet, test_set: &[Sample]) -> Result<EvalReport> {
    evaluate_with(net, test_set, 1)
}

pub fn evaluate_with(net: &CoilNet, test_set: &[Sample], threads: usize) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::invalid("evaluate", "test set is empty"));
    }
    let mut outputs = Vec::with_capacity(test_set.len());
    for chunk in test_set.chunks(EVAL_CHUNK) {
        let inputs: Vec<(&Tensor, f64)> = chunk.iter().map(|s| (&s.image, s.freq_hz)).collect();
        outputs.extend_from_slice(net.forward_batch(&inputs, threads)?.outputs());
    }
    let raw: Vec<Prediction> = outputs
        .iter()
        .map(|&o| {
            let (inductance_h, quality) = net.norm_stats.denormalize(o);
            Prediction { inductance_h, quality }
        })
        .collect();
    report(&outputs, &raw, test_set, &net.norm_stats)
}

/// Report for externally produced predictions, normalized with `stats`.
pub fn evaluate_predictions(preds: &[Prediction], samples: &[Sample], stats: &NormStats) -> Result<EvalReport> {
    if preds.len() != samples.len() || preds.is_empty() {
        return Err(Error::invalid(
            "evaluate_predictions",
            format!("{} predictions for {} samples", preds.len(), samples.len()),
        ));
    }
    for p in preds {
        if !(p.inductance_h > 0.0 && p.quality > 0.0) {
            return Err(Error::invalid("evaluate_predictions", "predictions must be positive"));
        }
    }
    let outputs: Vec<[f64; 2]> = preds
        .iter()
        .map(|p| stats.normalize_targets(p.inductance_h, p.quality))
        .collect();
    report(&outputs, preds, samples, stats)
}

/// `outputs` are the normalized predictions, `raw` the same in physical units.
fn report(outputs: &[[f64; 2]], raw: &[Prediction], samples: &[Sample], stats: &NormStats) -> Result<EvalReport> {
    let n = samples.len() as f64;
    let mut loss = 0.0;
    let mut baseline = 0.0;
    let mut rel_l = Vec::with_capacity(samples.len());
    let mut rel_q = Vec::with_capacity(samples.len());
    for ((&out, p), s) in outputs.iter().zip(raw).zip(samples) {
        let label = stats.normalize_targets(s.inductance_h, s.quality);
        loss += pair_loss(out, label);
        baseline += 2.0 * pair_loss([0.0, 0.0], label);
        let (el, eq) = relative_error(p, s)?;
        rel_l.push(el);
        rel_q.push(eq);
    }
    let paper_error = loss / n;
    let pooled: Vec<f64> = rel_l.iter().chain(&rel_q).copied().collect();
    let report = EvalReport {
        n_samples: samples.len(),
        mse: 2.0 * paper_error,
        paper_error,
        baseline_mse: baseline / n,
        mean_rel_err_l: rel_l.iter().sum::<f64>() / n,
        mean_rel_err_q: rel_q.iter().sum::<f64>() / n,
        median_rel_err: median(pooled),
        median_rel_err_l: median(rel_l),
        median_rel_err_q: median(rel_q),
    };
    let fields = [
        report.mse,
        report.baseline_mse,
        report.mean_rel_err_l,
        report.mean_rel_err_q,
        report.median_rel_err,
    ];
    if fields.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("evaluation produced a non-finite metric".into()));
    }
    Ok(report)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}
