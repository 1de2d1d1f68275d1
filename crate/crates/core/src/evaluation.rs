//! Error metrics and report tables: pointwise absolute errors against the
//! reported data, max-error tables by training configuration, training-cost
//! comparison, and peak capture metrics for long-term forecasts.

use serde::{Deserialize, Serialize};

use crate::calibration::ModelVariant;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Nar,
    Pinn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainDataKind {
    Synthetic,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLabel {
    pub variant: ModelVariant,
    pub network: NetworkKind,
    pub data: TrainDataKind,
}

impl RunLabel {
    pub fn name(&self) -> String {
        let net = match self.network {
            NetworkKind::Nar => "NAR",
            NetworkKind::Pinn => "PINN",
        };
        let data = match self.data {
            TrainDataKind::Synthetic => "synthetic",
            TrainDataKind::Real => "real",
        };
        format!("{}-{} ({})", self.variant, net, data)
    }
}

/// Absolute error per time for one age class (or the aggregate).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub age_label: String,
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub max_error: f64,
}

/// Everything the tables need about one trained configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub label: RunLabel,
    pub curves: Vec<ErrorCurve>,
    pub train_seconds: f64,
    pub per_epoch_seconds: f64,
    pub epochs: usize,
}

impl ErrorReport {
    pub fn max_error(&self) -> f64 {
        self.curves
            .iter()
            .fold(0.0_f64, |m, c| m.max(c.max_error))
    }
}

/// Absolute difference between aligned series.
pub fn pointwise_error(
    pred: &[(f64, f64)],
    data: &[(f64, f64)],
    age_label: &str,
) -> Result<ErrorCurve> {
    if pred.len() != data.len() {
        return Err(Error::Evaluation(format!(
            "misaligned series: {} prediction points vs {} data points",
            pred.len(),
            data.len()
        )));
    }
    let mut times = Vec::with_capacity(pred.len());
    let mut errors = Vec::with_capacity(pred.len());
    for (p, d) in pred.iter().zip(data.iter()) {
        if (p.0 - d.0).abs() > 1e-6 {
            return Err(Error::Evaluation(format!(
                "misaligned times {} vs {}",
                p.0, d.0
            )));
        }
        times.push(d.0);
        errors.push((p.1 - d.1).abs());
    }
    let max_error = errors.iter().fold(0.0_f64, |m, &e| m.max(e));
    Ok(ErrorCurve {
        age_label: age_label.to_string(),
        times,
        errors,
        max_error,
    })
}

/// Linear interpolation of a prediction series onto the data days.
pub fn subsample_to_days(series: &[(f64, f64)], days: &[f64]) -> Result<Vec<(f64, f64)>> {
    if series.is_empty() {
        return Err(Error::Evaluation("empty prediction series".into()));
    }
    let mut out = Vec::with_capacity(days.len());
    for &d in days {
        let lo = series.first().unwrap().0;
        let hi = series.last().unwrap().0;
        if d < lo - 1e-6 || d > hi + 1e-6 {
            return Err(Error::Evaluation(format!(
                "day {d} outside prediction span [{lo}, {hi}]"
            )));
        }
        let d = d.clamp(lo, hi);
        let pos = series.partition_point(|&(t, _)| t <= d).min(series.len() - 1);
        let v = if pos == 0 {
            series[0].1
        } else {
            let (ta, va) = series[pos - 1];
            let (tb, vb) = series[pos];
            if tb > ta {
                va + (vb - va) * (d - ta) / (tb - ta)
            } else {
                va
            }
        };
        out.push((d, v));
    }
    Ok(out)
}

const TABLE2_COLUMNS: [(NetworkKind, TrainDataKind); 4] = [
    (NetworkKind::Nar, TrainDataKind::Synthetic),
    (NetworkKind::Nar, TrainDataKind::Real),
    (NetworkKind::Pinn, TrainDataKind::Synthetic),
    (NetworkKind::Pinn, TrainDataKind::Real),
];

/// Max-error table: one row per (variant, age class), the four training
/// configurations as columns. Missing cells are emitted empty and reported
/// as warnings.
pub fn table2(reports: &[ErrorReport]) -> (String, Vec<String>) {
    let mut warnings = Vec::new();
    // Row keys in first-seen order, ignoring the order of the reports map.
    let mut rows: Vec<(ModelVariant, String)> = Vec::new();
    for variant in [ModelVariant::Siar, ModelVariant::SiarAged] {
        let mut labels: Vec<String> = Vec::new();
        for r in reports.iter().filter(|r| r.label.variant == variant) {
            for c in &r.curves {
                if !labels.contains(&c.age_label) {
                    labels.push(c.age_label.clone());
                }
            }
        }
        labels.sort();
        for l in labels {
            rows.push((variant, l));
        }
    }

    let mut csv = String::from("row,NAR (synthetic),NAR (real),PINN (synthetic),PINN (real)\n");
    for (variant, label) in &rows {
        let row_name = match variant {
            ModelVariant::Siar => "Non-aged model".to_string(),
            ModelVariant::SiarAged => format!("Age {label}"),
        };
        csv.push_str(&row_name);
        for (net, data) in TABLE2_COLUMNS {
            let cell = reports
                .iter()
                .find(|r| {
                    r.label.variant == *variant
                        && r.label.network == net
                        && r.label.data == data
                })
                .and_then(|r| r.curves.iter().find(|c| &c.age_label == label));
            match cell {
                Some(c) => csv.push_str(&format!(",{:e}", c.max_error)),
                None => {
                    warnings.push(format!(
                        "missing cell: {row_name} / {:?} {:?}",
                        net, data
                    ));
                    csv.push(',');
                }
            }
        }
        csv.push('\n');
    }
    (csv, warnings)
}

/// One measured training run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimingEntry {
    pub label: RunLabel,
    pub seconds: f64,
    pub epochs: usize,
    pub per_epoch_seconds: f64,
}

/// Training-cost table plus the PINN/NAR per-epoch cost ratio per variant.
pub fn cost_report(timings: &[TimingEntry]) -> Result<String> {
    if timings.is_empty() || timings.iter().any(|t| t.epochs == 0) {
        return Err(Error::Evaluation("no timing measurements".into()));
    }
    let mut csv = String::from(
        "variant,NAR (synthetic) s,NAR (real) s,PINN (synthetic) s,PINN (real) s,PINN/NAR per-epoch ratio\n",
    );
    for variant in [ModelVariant::Siar, ModelVariant::SiarAged] {
        let find = |net: NetworkKind, data: TrainDataKind| -> Option<&TimingEntry> {
            timings.iter().find(|t| {
                t.label.variant == variant && t.label.network == net && t.label.data == data
            })
        };
        let cells = [
            find(NetworkKind::Nar, TrainDataKind::Synthetic),
            find(NetworkKind::Nar, TrainDataKind::Real),
            find(NetworkKind::Pinn, TrainDataKind::Synthetic),
            find(NetworkKind::Pinn, TrainDataKind::Real),
        ];
        if cells.iter().all(|c| c.is_none()) {
            continue;
        }
        csv.push_str(&variant.to_string());
        for c in cells {
            match c {
                Some(t) => csv.push_str(&format!(",{:.3}", t.seconds)),
                None => csv.push(','),
            }
        }
        let ratio = match (cells[2], cells[0]) {
            (Some(pinn), Some(nar)) if nar.per_epoch_seconds > 0.0 => {
                format!("{:.2}", pinn.per_epoch_seconds / nar.per_epoch_seconds)
            }
            _ => String::new(),
        };
        csv.push_str(&format!(",{ratio}\n"));
    }
    Ok(csv)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeakMetrics {
    pub peak_time_pred: f64,
    pub peak_time_data: f64,
    pub peak_height_pred: f64,
    pub peak_height_data: f64,
    pub time_delta: f64,
    pub height_delta: f64,
    /// Set when either series has no interior unique maximum.
    pub degenerate: bool,
}

/// Argmax of a series; earliest maximizer, with a degeneracy flag for flat
/// or boundary maxima.
fn peak_of(series: &[(f64, f64)]) -> Result<(f64, f64, bool)> {
    if series.is_empty() {
        return Err(Error::Evaluation("empty series".into()));
    }
    let mut best = series[0];
    let mut best_idx = 0;
    for (j, &(t, v)) in series.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (t, v);
            best_idx = j;
        }
    }
    let ties = series
        .iter()
        .enumerate()
        .filter(|(j, &(_, v))| *j != best_idx && (v - best.1).abs() <= 1e-15 * best.1.abs())
        .count();
    let boundary = best_idx == 0 || best_idx == series.len() - 1;
    Ok((best.0, best.1, ties > 0 || boundary))
}

/// Peak timing and height comparison of the infected curves.
pub fn peak_metrics(pred_mean: &[(f64, f64)], data: &[(f64, f64)]) -> Result<PeakMetrics> {
    let (tp, hp, dp) = peak_of(pred_mean)?;
    let (td, hd, dd) = peak_of(data)?;
    Ok(PeakMetrics {
        peak_time_pred: tp,
        peak_time_data: td,
        peak_height_pred: hp,
        peak_height_data: hd,
        time_delta: tp - td,
        height_delta: hp - hd,
        degenerate: dp || dd,
    })
}
