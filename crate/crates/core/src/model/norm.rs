use serde::{Deserialize, Serialize};

/// Log10-space standardization of the targets and the frequency input.
///
/// Statistics are fitted on the training split only. Predictions are mapped
/// back through `10^(z·std + mean)`, which keeps them strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean_log_l: f64,
    pub std_log_l: f64,
    pub mean_log_q: f64,
    pub std_log_q: f64,
    pub mean_log_f: f64,
    pub std_log_f: f64,
}

/// Spreads below this are treated as degenerate (e.g. a single training
/// frequency) and replaced by 1.
const MIN_STD: f64 = 1e-12;

impl Default for NormStats {
    fn default() -> Self {
        Self {
            mean_log_l: 0.0,
            std_log_l: 1.0,
            mean_log_q: 0.0,
            std_log_q: 1.0,
            mean_log_f: 0.0,
            std_log_f: 1.0,
        }
    }
}

impl NormStats {
    /// Fits means and population standard deviations of `log10` of each
    /// `(inductance, quality, frequency)` triple.
    ///
    /// # Panics
    /// If `records` is empty.
    pub fn fit(records: impl IntoIterator<Item = (f64, f64, f64)>) -> Self {
        let logs: Vec<[f64; 3]> = records
            .into_iter()
            .map(|(l, q, f)| [l.log10(), q.log10(), f.log10()])
            .collect();
        assert!(!logs.is_empty(), "cannot fit normalization on an empty set");
        let n = logs.len() as f64;
        let mut mean = [0.0; 3];
        for row in &logs {
            for k in 0..3 {
                mean[k] += row[k];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; 3];
        for row in &logs {
            for k in 0..3 {
                var[k] += (row[k] - mean[k]).powi(2);
            }
        }
        let std = var.map(|v| {
            let s = (v / n).sqrt();
            if s > MIN_STD {
                s
            } else {
                1.0
            }
        });
        Self {
            mean_log_l: mean[0],
            std_log_l: std[0],
            mean_log_q: mean[1],
            std_log_q: std[1],
            mean_log_f: mean[2],
            std_log_f: std[2],
        }
    }

    /// Raw `(L, Q)` to the network's `[L_norm, Q_norm]` target space.
    pub fn normalize_targets(&self, inductance_h: f64, quality: f64) -> [f64; 2] {
        [
            (inductance_h.log10() - self.mean_log_l) / self.std_log_l,
            (quality.log10() - self.mean_log_q) / self.std_log_q,
        ]
    }

    pub fn denormalize(&self, out: [f64; 2]) -> (f64, f64) {
        (
            10f64.powf(out[0] * self.std_log_l + self.mean_log_l),
            10f64.powf(out[1] * self.std_log_q + self.mean_log_q),
        )
    }

    pub fn normalize_frequency(&self, freq_hz: f64) -> f64 {
        (freq_hz.log10() - self.mean_log_f) / self.std_log_f
    }

    pub(crate) fn to_array(self) -> [f64; 6] {
        [
            self.mean_log_l,
            self.std_log_l,
            self.mean_log_q,
            self.std_log_q,
            self.mean_log_f,
            self.std_log_f,
        ]
    }

    pub(crate) fn from_array(a: [f64; 6]) -> Self {
        Self {
            mean_log_l: a[0],
            std_log_l: a[1],
            mean_log_q: a[2],
            std_log_q: a[3],
            mean_log_f: a[4],
            std_log_f: a[5],
        }
    }
}
