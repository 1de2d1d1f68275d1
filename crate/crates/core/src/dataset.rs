//! Observed and synthetic epidemic datasets: CSV ingestion of reported
//! counts, population normalization, train/test splits, and generation of
//! augmented synthetic series from a calibrated model.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationResult;
use crate::error::{Error, Result};
use crate::integrator::{grid_len, integrate};
use crate::models::{rhs_siar, AgeGrid};

/// Day zero of the time axis: 2020-10-06, making October 8th t = 2 and
/// October 21st t = 15.
pub fn calendar_epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 10, 6).expect("valid epoch")
}

pub fn date_to_day(date: NaiveDate) -> f64 {
    (date - calendar_epoch()).num_days() as f64
}

pub fn day_to_date(t: f64) -> NaiveDate {
    calendar_epoch() + chrono::Duration::days(t.round() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Observed,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
    Unsplit,
}

/// Short-term or long-term train/test partition of the second-phase window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ShortTerm,
    LongTerm,
}

impl SplitMode {
    /// (window start, train end, window end) in days.
    pub fn bounds(&self) -> (f64, f64, f64) {
        match self {
            SplitMode::ShortTerm => (15.0, 94.0, 104.0),
            SplitMode::LongTerm => (15.0, 44.0, 89.0),
        }
    }
}

/// One per-day, per-age-class observation or synthetic sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpiRecord {
    pub t: f64,
    pub age: usize,
    pub node: Option<usize>,
    pub i: f64,
    pub r: f64,
    pub s: Option<f64>,
    pub a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpiDataset {
    pub records: Vec<EpiRecord>,
    pub kind: DataKind,
    pub split: SplitTag,
    /// Sample spacing in days: 1.0 for observed, the augmentation step for synthetic.
    pub resolution: f64,
    pub labels: Vec<String>,
    pub population: Option<u64>,
    /// Number of uncertainty nodes; None for observed data.
    pub n_nodes: Option<usize>,
}

impl EpiDataset {
    pub fn n_ages(&self) -> usize {
        self.labels.len()
    }

    /// Sorted distinct sample times.
    pub fn times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.records.iter().map(|r| r.t).collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        ts
    }

    pub fn time_span(&self) -> (f64, f64) {
        let ts = self.times();
        (*ts.first().unwrap_or(&f64::NAN), *ts.last().unwrap_or(&f64::NAN))
    }

    /// Time-ordered infected series for one (age, node) channel.
    pub fn series_i(&self, age: usize, node: Option<usize>) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self
            .records
            .iter()
            .filter(|r| r.age == age && r.node == node)
            .map(|r| (r.t, r.i))
            .collect();
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        out
    }

    /// (i, r) at an exact sample time, or an error naming the missing day.
    pub fn at(&self, t: f64, age: usize, node: Option<usize>) -> Result<(f64, f64)> {
        self.records
            .iter()
            .find(|r| r.age == age && r.node == node && (r.t - t).abs() < 1e-9)
            .map(|r| (r.i, r.r))
            .ok_or_else(|| Error::Dataset(format!("no record at t={t} for age index {age}")))
    }

    /// Keeps records with t in [ta, tb].
    pub fn window(&self, ta: f64, tb: f64) -> EpiDataset {
        let mut out = self.clone();
        out.records
            .retain(|r| r.t >= ta - 1e-9 && r.t <= tb + 1e-9);
        out
    }

    /// Collapses the age dimension by summing fractions into one "all" class.
    pub fn aggregate_classes(&self) -> EpiDataset {
        use std::collections::BTreeMap;
        let mut acc: BTreeMap<(i64, i64), EpiRecord> = BTreeMap::new();
        for r in &self.records {
            let key = ((r.t * 1e6).round() as i64, r.node.map_or(-1, |n| n as i64));
            let entry = acc.entry(key).or_insert(EpiRecord {
                t: r.t,
                age: 0,
                node: r.node,
                i: 0.0,
                r: 0.0,
                s: r.s.map(|_| 0.0),
                a: r.a.map(|_| 0.0),
            });
            entry.i += r.i;
            entry.r += r.r;
            if let (Some(es), Some(rs)) = (entry.s.as_mut(), r.s) {
                *es += rs;
            }
            if let (Some(ea), Some(ra)) = (entry.a.as_mut(), r.a) {
                *ea += ra;
            }
        }
        EpiDataset {
            records: acc.into_values().collect(),
            kind: self.kind,
            split: self.split,
            resolution: self.resolution,
            labels: vec!["all".to_string()],
            population: self.population,
            n_nodes: self.n_nodes,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ObservedRow {
    date: String,
    age_class: String,
    infected: i64,
    recovered: i64,
    population: i64,
}

/// Reads the observed-data CSV (date,age_class,infected,recovered,population)
/// and normalizes counts to fractions of the total regional population.
pub fn ingest(path: &Path) -> Result<EpiDataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::csv(path.display().to_string(), e))?;
    let known = AgeGrid::default_six().labels();

    let mut rows: Vec<(NaiveDate, String, i64, i64, i64)> = Vec::new();
    for row in reader.deserialize::<ObservedRow>() {
        let row = row.map_err(|e| Error::csv(path.display().to_string(), e))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| Error::Dataset(format!("bad date '{}': {e}", row.date)))?;
        if row.infected < 0 || row.recovered < 0 {
            return Err(Error::Dataset(format!(
                "negative count on {} / {}",
                row.date, row.age_class
            )));
        }
        if row.population <= 0 {
            return Err(Error::Dataset(format!(
                "non-positive population on {}",
                row.date
            )));
        }
        rows.push((date, row.age_class, row.infected, row.recovered, row.population));
    }
    if rows.is_empty() {
        return Err(Error::Dataset(format!(
            "no records in {}",
            path.display()
        )));
    }

    // The population column is the total regional population and must not
    // change between rows.
    let population = rows[0].4;
    if let Some(bad) = rows.iter().find(|r| r.4 != population) {
        return Err(Error::Dataset(format!(
            "population changes on {} / {}: {} vs {}",
            bad.0, bad.1, bad.4, population
        )));
    }

    // Label set: either the six reporting classes or a single aggregate.
    let seen: Vec<String> = {
        let mut s: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
        s.sort();
        s.dedup();
        s
    };
    let labels: Vec<String> = if seen.len() == 1 && seen[0] == "all" {
        vec!["all".to_string()]
    } else {
        for l in &seen {
            if !known.contains(l) {
                return Err(Error::Dataset(format!("unknown age label '{l}'")));
            }
        }
        known.iter().filter(|l| seen.contains(l)).cloned().collect()
    };

    let mut records = Vec::with_capacity(rows.len());
    let mut keys: Vec<(i64, usize)> = Vec::with_capacity(rows.len());
    for (date, label, inf, rec, _) in &rows {
        let age = labels
            .iter()
            .position(|l| l == label)
            .expect("label validated above");
        let day = (*date - calendar_epoch()).num_days();
        if keys.contains(&(day, age)) {
            return Err(Error::Dataset(format!(
                "duplicate row for {date} / {label}"
            )));
        }
        keys.push((day, age));
        records.push(EpiRecord {
            t: day as f64,
            age,
            node: None,
            i: *inf as f64 / population as f64,
            r: *rec as f64 / population as f64,
            s: None,
            a: None,
        });
    }

    // Every class must report every day of a contiguous range; gaps are
    // rejected rather than imputed.
    let mut days: Vec<i64> = keys.iter().map(|k| k.0).collect();
    days.sort_unstable();
    days.dedup();
    for pair in days.windows(2) {
        if pair[1] - pair[0] != 1 {
            return Err(Error::Dataset(format!(
                "missing day between {} and {}",
                day_to_date(pair[0] as f64),
                day_to_date(pair[1] as f64)
            )));
        }
    }
    for &d in &days {
        for age in 0..labels.len() {
            if !keys.contains(&(d, age)) {
                return Err(Error::Dataset(format!(
                    "missing class {} on {}",
                    labels[age],
                    day_to_date(d as f64)
                )));
            }
        }
    }

    records.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .unwrap()
            .then(a.age.cmp(&b.age))
    });

    Ok(EpiDataset {
        records,
        kind: DataKind::Observed,
        split: SplitTag::Unsplit,
        resolution: 1.0,
        labels,
        population: Some(population as u64),
        n_nodes: None,
    })
}

/// Writes an observed dataset back to the count-based CSV schema.
pub fn write_observed(data: &EpiDataset, path: &Path) -> Result<()> {
    let population = data
        .population
        .ok_or_else(|| Error::Dataset("observed dataset lacks population".into()))? as f64;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let werr = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(out, "date,age_class,infected,recovered,population").map_err(werr)?;
    for r in &data.records {
        writeln!(
            out,
            "{},{},{},{},{}",
            day_to_date(r.t),
            data.labels[r.age],
            (r.i * population).round() as u64,
            (r.r * population).round() as u64,
            population as u64
        )
        .map_err(werr)?;
    }
    Ok(())
}

/// Writes a synthetic dataset: t,age_class,node,S,I,A,R at full precision.
pub fn write_synthetic(data: &EpiDataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let werr = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(out, "t,age_class,node,S,I,A,R").map_err(werr)?;
    for r in &data.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            data.labels[r.age],
            r.node.map_or(-1i64, |n| n as i64),
            r.s.unwrap_or(f64::NAN),
            r.i,
            r.a.unwrap_or(f64::NAN),
            r.r
        )
        .map_err(werr)?;
    }
    Ok(())
}

/// Reads a synthetic CSV written by [`write_synthetic`].
pub fn read_synthetic(path: &Path, resolution: f64) -> Result<EpiDataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::csv(path.display().to_string(), e))?;
    let mut labels: Vec<String> = Vec::new();
    let mut records = Vec::new();
    let mut max_node = 0usize;
    for row in reader.records() {
        let row = row.map_err(|e| Error::csv(path.display().to_string(), e))?;
        let parse = |j: usize| -> Result<f64> {
            row.get(j)
                .ok_or_else(|| Error::Dataset("short row".into()))?
                .parse::<f64>()
                .map_err(|e| Error::Dataset(format!("bad float: {e}")))
        };
        let label = row.get(1).unwrap_or("").to_string();
        let age = match labels.iter().position(|l| *l == label) {
            Some(j) => j,
            None => {
                labels.push(label);
                labels.len() - 1
            }
        };
        let node_raw = row
            .get(2)
            .unwrap_or("")
            .parse::<i64>()
            .map_err(|e| Error::Dataset(format!("bad node: {e}")))?;
        let node = if node_raw < 0 { None } else { Some(node_raw as usize) };
        if let Some(n) = node {
            max_node = max_node.max(n);
        }
        records.push(EpiRecord {
            t: parse(0)?,
            age,
            node,
            s: Some(parse(3)?),
            i: parse(4)?,
            a: Some(parse(5)?),
            r: parse(6)?,
        });
    }
    if records.is_empty() {
        return Err(Error::Dataset(format!("no records in {}", path.display())));
    }
    records.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .unwrap()
            .then(a.age.cmp(&b.age))
            .then(a.node.cmp(&b.node))
    });
    Ok(EpiDataset {
        records,
        kind: DataKind::Synthetic,
        split: SplitTag::Unsplit,
        resolution,
        labels,
        population: None,
        n_nodes: Some(max_node + 1),
    })
}

/// Splits a dataset into train/test along the mode's day boundary.
pub fn split(data: &EpiDataset, mode: SplitMode) -> Result<(EpiDataset, EpiDataset)> {
    let (start, train_end, end) = mode.bounds();
    let (lo, hi) = data.time_span();
    if lo > start + 1e-9 || hi < end - 1e-9 {
        return Err(Error::Dataset(format!(
            "data span [{lo}, {hi}] does not cover the requested window [{start}, {end}]"
        )));
    }
    let mut train = data.clone();
    train
        .records
        .retain(|r| r.t >= start - 1e-9 && r.t <= train_end + 1e-9);
    train.split = SplitTag::Train;
    let mut test = data.clone();
    test.records
        .retain(|r| r.t > train_end + 1e-9 && r.t <= end + 1e-9);
    test.split = SplitTag::Test;
    Ok((train, test))
}

/// Simulates the calibrated model per node over [ta, tb] at step h and emits
/// synthetic records for all four compartments.
pub fn augment(calib: &CalibrationResult, window: (f64, f64), h: f64) -> Result<EpiDataset> {
    let (ta, tb) = window;
    let fit = &calib.fit;
    if ta < fit.t0 - 1e-9 || tb > fit.t_end + 1e-9 || tb < ta {
        return Err(Error::Dataset(format!(
            "augment window [{ta}, {tb}] outside calibrated span [{}, {}]",
            fit.t0, fit.t_end
        )));
    }

    // Anchor the simulation at the nearest stored state at or before ta.
    let (anchor_t, anchor_state) = if ta >= fit.t_lockdown - 1e-9 {
        (fit.t_lockdown, &calib.state_at_tl)
    } else {
        (fit.t0, &calib.initial_state)
    };

    let n_samples = grid_len(ta, tb, h);
    let sample_times: Vec<f64> = (0..n_samples)
        .map(|k| (ta + k as f64 * h).min(tb))
        .collect();

    let traj = if tb > anchor_t + 1e-12 {
        Some(integrate(
            |s, t| rhs_siar(s, &calib.params, t),
            anchor_state,
            anchor_t,
            tb,
            h,
        )?)
    } else {
        None
    };

    let n_ages = calib.ages.len();
    let n_nodes = calib.params.n_nodes;
    let mut records = Vec::with_capacity(n_samples * n_ages * n_nodes);
    for &t in &sample_times {
        let state = match &traj {
            Some(tr) => tr.sample(t)?,
            None => anchor_state.clone(),
        };
        for age in 0..n_ages {
            for node in 0..n_nodes {
                let j = state.idx(age, node);
                records.push(EpiRecord {
                    t,
                    age,
                    node: Some(node),
                    s: Some(state.s[j]),
                    i: state.i[j],
                    a: Some(state.a[j]),
                    r: state.r[j],
                });
            }
        }
    }

    Ok(EpiDataset {
        records,
        kind: DataKind::Synthetic,
        split: SplitTag::Unsplit,
        resolution: h,
        labels: calib.ages.labels(),
        population: None,
        n_nodes: Some(n_nodes),
    })
}
