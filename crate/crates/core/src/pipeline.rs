//! Stage orchestration: every CLI subcommand reads its inputs from disk,
//! runs one module, and writes its declared artifacts, so any stage can be
//! re-run in isolation.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{
    fit_phase1, fit_phase2, CalibrationResult, CalibrationSetup, ModelVariant,
};
use crate::config::RunConfig;
use crate::dataset::{self, EpiDataset, SplitMode};
use crate::error::{Error, Result};
use crate::evaluation::{
    cost_report, peak_metrics, pointwise_error, subsample_to_days, table2, ErrorReport,
    NetworkKind, PeakMetrics, RunLabel, TimingEntry, TrainDataKind,
};
use crate::integrator::integrate;
use crate::models::{rhs_siar, AgeGrid};
use crate::nar::{self, NarModel};
use crate::pinn::{self, PinnModel};
use crate::quadrature::{build_grid, UncertaintyPairing};

/// Artifact paths under the configured output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub out: PathBuf,
}

impl Artifacts {
    pub fn new(out: &Path) -> Artifacts {
        Artifacts { out: out.to_path_buf() }
    }

    pub fn calibration(&self) -> PathBuf {
        self.out.join("calibration.json")
    }
    pub fn fit_vs_data(&self) -> PathBuf {
        self.out.join("fit_vs_data.csv")
    }
    pub fn synthetic(&self) -> PathBuf {
        self.out.join("synthetic.csv")
    }
    pub fn pinn_model(&self, data: TrainDataKind) -> PathBuf {
        self.out.join(format!("pinn_{}.json", kind_tag(data)))
    }
    pub fn pinn_loss(&self, data: TrainDataKind) -> PathBuf {
        self.out.join(format!("pinn_{}_loss.csv", kind_tag(data)))
    }
    pub fn nar_model(&self, data: TrainDataKind) -> PathBuf {
        self.out.join(format!("nar_{}.json", kind_tag(data)))
    }
    pub fn nar_loss(&self, data: TrainDataKind) -> PathBuf {
        self.out.join(format!("nar_{}_loss.csv", kind_tag(data)))
    }
    pub fn forecast(&self, net: NetworkKind, data: TrainDataKind) -> PathBuf {
        let n = match net {
            NetworkKind::Nar => "nar",
            NetworkKind::Pinn => "pinn",
        };
        self.out.join(format!("forecast_{}_{}.csv", n, kind_tag(data)))
    }
    /// Wall-clock records; excluded from byte-level determinism checks.
    pub fn timings(&self, net: NetworkKind) -> PathBuf {
        match net {
            NetworkKind::Nar => self.out.join("timings_nar.csv"),
            NetworkKind::Pinn => self.out.join("timings_pinn.csv"),
        }
    }
    pub fn table1(&self) -> PathBuf {
        self.out.join("table1.csv")
    }
    pub fn table2(&self) -> PathBuf {
        self.out.join("table2.csv")
    }
    pub fn peak_metrics(&self) -> PathBuf {
        self.out.join("peak_metrics.json")
    }
    pub fn summary(&self) -> PathBuf {
        self.out.join("summary.json")
    }
}

fn kind_tag(data: TrainDataKind) -> &'static str {
    match data {
        TrainDataKind::Synthetic => "synth",
        TrainDataKind::Real => "real",
    }
}

/// Observed data in the shape the configured variant consumes.
fn load_observed(cfg: &RunConfig) -> Result<EpiDataset> {
    let data = dataset::ingest(&cfg.data_csv)?;
    Ok(match cfg.variant {
        ModelVariant::Siar => data.aggregate_classes(),
        ModelVariant::SiarAged => data,
    })
}

fn build_setup(cfg: &RunConfig) -> Result<CalibrationSetup> {
    let g1 = build_grid(cfg.beta1, cfg.quadrature_m)?;
    let g2 = build_grid(cfg.beta2, cfg.quadrature_m)?;
    let pairing = if cfg.tensor_grid {
        UncertaintyPairing::tensor(&g1, &g2)?
    } else {
        UncertaintyPairing::comonotone(&g1, &g2)?
    };
    let (ages, shares) = match cfg.variant {
        ModelVariant::Siar => (AgeGrid::single(), vec![1.0]),
        ModelVariant::SiarAged => (AgeGrid::default_six(), cfg.population_shares.clone()),
    };
    Ok(CalibrationSetup {
        variant: cfg.variant,
        ages,
        pairing,
        k: cfg.k_contact,
        shares,
    })
}

fn ensure_out(cfg: &RunConfig) -> Result<Artifacts> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;
    Ok(Artifacts::new(&cfg.out_dir))
}

/// Weighted quantile over node values (weights sum to one).
fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut acc = 0.0;
    for (v, w) in &pairs {
        acc += w;
        if acc >= q {
            return *v;
        }
    }
    pairs.last().map(|p| p.0).unwrap_or(f64::NAN)
}

/// Runs both calibration phases and writes the calibration JSON plus the
/// fit-vs-data series (mean and 95% band over nodes).
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<()> {
    let art = ensure_out(cfg)?;
    let data = load_observed(cfg)?;
    let setup = build_setup(cfg)?;
    let phase1 = fit_phase1(&data, &setup, &cfg.fit)?;
    let calib = fit_phase2(&data, &phase1, &cfg.fit)?;
    calib.write_json(&art.calibration())?;

    // Full-span re-simulation for the fit curves.
    let traj = integrate(
        |s, t| rhs_siar(s, &calib.params, t),
        &calib.initial_state,
        cfg.fit.t0,
        cfg.fit.t_end,
        cfg.augment_h,
    )?;
    let weights = calib.pairing.weights();
    let path = art.fit_vs_data();
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let werr = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(
        out,
        "t,age_class,i_data,r_data,i_mean,i_lo,i_hi,r_mean,r_lo,r_hi"
    )
    .map_err(werr)?;
    for &t in &data.times() {
        let st = traj.sample(t)?;
        for (x, label) in calib.ages.labels().iter().enumerate() {
            let (di, dr) = data.at(t, x, None)?;
            let iv: Vec<f64> = (0..st.n_nodes).map(|m| st.i[st.idx(x, m)]).collect();
            let rv: Vec<f64> = (0..st.n_nodes).map(|m| st.r[st.idx(x, m)]).collect();
            let mean = |v: &[f64]| -> f64 {
                v.iter().zip(weights.iter()).map(|(a, w)| a * w).sum()
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                t,
                label,
                di,
                dr,
                mean(&iv),
                weighted_quantile(&iv, &weights, 0.025),
                weighted_quantile(&iv, &weights, 0.975),
                mean(&rv),
                weighted_quantile(&rv, &weights, 0.025),
                weighted_quantile(&rv, &weights, 0.975),
            )
            .map_err(werr)?;
        }
    }
    Ok(())
}

/// Simulates the calibrated model over the second-phase window and writes
/// the synthetic per-node dataset.
pub fn cmd_augment(cfg: &RunConfig) -> Result<()> {
    let art = ensure_out(cfg)?;
    let calib = CalibrationResult::read_json(&art.calibration())?;
    let synth = dataset::augment(&calib, (cfg.fit.t_lockdown, cfg.fit.t_end), cfg.augment_h)?;
    dataset::write_synthetic(&synth, &art.synthetic())
}

fn pinn_config_resolved(cfg: &RunConfig) -> pinn::PinnConfig {
    let mut pc = cfg.pinn.clone();
    if cfg.pinn_collocation_full && pc.collocation.is_none() {
        pc.collocation = Some((cfg.fit.t_lockdown, cfg.fit.t_end, cfg.augment_h));
    }
    pc
}

fn write_loss_csv(path: &Path, rows: &[(usize, f64, f64, f64)]) -> Result<()> {
    let mut body = String::from("epoch,total,data,physics\n");
    for (e, t, d, p) in rows {
        body.push_str(&format!("{e},{t},{d},{p}\n"));
    }
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_timings(path: &Path, entries: &[TimingEntry]) -> Result<()> {
    let mut body = String::from("variant,network,data,seconds,epochs,per_epoch_seconds\n");
    for t in entries {
        body.push_str(&format!(
            "{},{:?},{:?},{},{},{}\n",
            t.label.variant, t.label.network, t.label.data, t.seconds, t.epochs, t.per_epoch_seconds
        ));
    }
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_timings(path: &Path, cfg: &RunConfig) -> Vec<TimingEntry> {
    let Ok(body) = std::fs::read_to_string(path) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            continue;
        }
        let network = if f[1] == "Nar" {
            NetworkKind::Nar
        } else {
            NetworkKind::Pinn
        };
        let data = if f[2] == "Synthetic" {
            TrainDataKind::Synthetic
        } else {
            TrainDataKind::Real
        };
        out.push(TimingEntry {
            label: RunLabel {
                variant: cfg.variant,
                network,
                data,
            },
            seconds: f[3].parse().unwrap_or(0.0),
            epochs: f[4].parse().unwrap_or(0),
            per_epoch_seconds: f[5].parse().unwrap_or(0.0),
        });
    }
    out
}

/// Trains the physics-informed networks (synthetic and/or real) on the
/// configured split and writes checkpoints, loss histories, and timings.
pub fn cmd_train_pinn(cfg: &RunConfig) -> Result<()> {
    let art = ensure_out(cfg)?;
    let calib = CalibrationResult::read_json(&art.calibration())?;
    let pc = pinn_config_resolved(cfg);
    let mut timings = Vec::new();

    if cfg.train_synthetic {
        let synth = dataset::read_synthetic(&art.synthetic(), cfg.augment_h)?;
        let (train_set, _) = dataset::split(&synth, cfg.split_mode)?;
        let z: Vec<f64> = calib.pairing.nodes.iter().map(|n| n.z1).collect();
        let problem = pinn::problem_from_synthetic(
            &train_set,
            &calib.params,
            &calib.pairing.weights(),
            &z,
            &calib.ages.midpoints(),
            &pc,
        )?;
        let trained = pinn::train(&pc, &problem, cfg.seed)?;
        write_pinn_outputs(&art, TrainDataKind::Synthetic, &trained)?;
        timings.push(TimingEntry {
            label: RunLabel {
                variant: cfg.variant,
                network: NetworkKind::Pinn,
                data: TrainDataKind::Synthetic,
            },
            seconds: trained.train_seconds,
            epochs: pc.epochs,
            per_epoch_seconds: trained.per_epoch_seconds,
        });
    }
    if cfg.train_real {
        let observed = load_observed(cfg)?;
        let (train_set, _) = dataset::split(&observed, cfg.split_mode)?;
        let problem = pinn::problem_from_real(&train_set, &calib, &pc)?;
        let trained = pinn::train(&pc, &problem, cfg.seed)?;
        write_pinn_outputs(&art, TrainDataKind::Real, &trained)?;
        timings.push(TimingEntry {
            label: RunLabel {
                variant: cfg.variant,
                network: NetworkKind::Pinn,
                data: TrainDataKind::Real,
            },
            seconds: trained.train_seconds,
            epochs: pc.epochs,
            per_epoch_seconds: trained.per_epoch_seconds,
        });
    }
    write_timings(&art.timings(NetworkKind::Pinn), &timings)
}

fn write_pinn_outputs(
    art: &Artifacts,
    data: TrainDataKind,
    trained: &pinn::TrainedPinn,
) -> Result<()> {
    let path = art.pinn_model(data);
    let body = serde_json::to_string_pretty(&trained.model)?;
    std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
    let rows: Vec<(usize, f64, f64, f64)> = trained
        .history
        .iter()
        .map(|r| (r.epoch, r.total, r.data, r.physics))
        .collect();
    write_loss_csv(&art.pinn_loss(data), &rows)
}

/// Trains the autoregressive networks and writes checkpoints, loss
/// histories, and timings.
pub fn cmd_train_nar(cfg: &RunConfig) -> Result<()> {
    let art = ensure_out(cfg)?;
    let mut timings = Vec::new();

    if cfg.train_synthetic {
        let synth = dataset::read_synthetic(&art.synthetic(), cfg.augment_h)?;
        let (train_set, _) = dataset::split(&synth, cfg.split_mode)?;
        let (windows, shape) = nar::make_windows(&train_set, cfg.nar.delay)?;
        let trained = nar::train(&cfg.nar, &windows, &shape, cfg.seed)?;
        write_nar_outputs(&art, TrainDataKind::Synthetic, &trained)?;
        timings.push(TimingEntry {
            label: RunLabel {
                variant: cfg.variant,
                network: NetworkKind::Nar,
                data: TrainDataKind::Synthetic,
            },
            seconds: trained.train_seconds,
            epochs: cfg.nar.epochs,
            per_epoch_seconds: trained.per_epoch_seconds,
        });
    }
    if cfg.train_real {
        let observed = load_observed(cfg)?;
        let (train_set, _) = dataset::split(&observed, cfg.split_mode)?;
        let (windows, shape) = nar::make_windows(&train_set, cfg.nar.delay)?;
        let trained = nar::train(&cfg.nar, &windows, &shape, cfg.seed)?;
        write_nar_outputs(&art, TrainDataKind::Real, &trained)?;
        timings.push(TimingEntry {
            label: RunLabel {
                variant: cfg.variant,
                network: NetworkKind::Nar,
                data: TrainDataKind::Real,
            },
            seconds: trained.train_seconds,
            epochs: cfg.nar.epochs,
            per_epoch_seconds: trained.per_epoch_seconds,
        });
    }
    write_timings(&art.timings(NetworkKind::Nar), &timings)
}

fn write_nar_outputs(art: &Artifacts, data: TrainDataKind, trained: &nar::TrainedNar) -> Result<()> {
    let path = art.nar_model(data);
    let body = serde_json::to_string_pretty(&trained.model)?;
    std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
    let rows: Vec<(usize, f64, f64, f64)> = trained
        .history
        .iter()
        .map(|&(e, v)| (e, v, v, 0.0))
        .collect();
    write_loss_csv(&art.nar_loss(data), &rows)
}

/// One forecast row set: per-node infected predictions plus the node mean.
fn write_forecast_csv(
    path: &Path,
    labels: &[String],
    times: &[f64],
    n_nodes: usize,
    value: impl Fn(usize, usize, usize) -> f64, // (ti, age, node)
    mean: impl Fn(usize, usize) -> f64,         // (ti, age)
) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let werr = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(out, "t,age_class,node,i_pred,i_mean").map_err(werr)?;
    for (ti, &t) in times.iter().enumerate() {
        for (x, label) in labels.iter().enumerate() {
            for m in 0..n_nodes {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    t,
                    label,
                    m,
                    value(ti, x, m),
                    mean(ti, x)
                )
                .map_err(werr)?;
            }
        }
    }
    Ok(())
}

fn read_pinn_model(path: &Path) -> Result<PinnModel> {
    let body =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&body)?)
}

fn read_nar_model(path: &Path) -> Result<NarModel> {
    let body =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&body)?)
}

/// NAR seed history: the last `delay` frames of a series dataset.
fn nar_seed_frames(data: &EpiDataset, model: &NarModel) -> Result<(Vec<Vec<f64>>, f64)> {
    let times = data.times();
    if times.len() < model.delay {
        return Err(Error::Dataset("series too short to seed the forecast".into()));
    }
    let tail = &times[times.len() - model.delay..];
    let mut frames = Vec::with_capacity(model.delay);
    for &t in tail {
        let mut frame = Vec::with_capacity(model.n_ages * model.n_nodes);
        for age in 0..model.n_ages {
            for m in 0..model.n_nodes {
                let node = if data.n_nodes.is_some() { Some(m) } else { None };
                frame.push(data.at(t, age, node)?.0);
            }
        }
        frames.push(frame);
    }
    Ok((frames, *times.last().unwrap()))
}

/// Produces closed-loop NAR forecasts and PINN surface curves over the test
/// window for every checkpoint present.
pub fn cmd_forecast(cfg: &RunConfig) -> Result<()> {
    let art = ensure_out(cfg)?;
    let (_, _, window_end) = cfg.split_mode.bounds();
    let labels = match cfg.variant {
        ModelVariant::Siar => vec!["all".to_string()],
        ModelVariant::SiarAged => AgeGrid::default_six().labels(),
    };

    for data_kind in [TrainDataKind::Synthetic, TrainDataKind::Real] {
        // NAR closed loop from the tail of its training series.
        let model_path = art.nar_model(data_kind);
        if model_path.exists() {
            let model = read_nar_model(&model_path)?;
            let series = match data_kind {
                TrainDataKind::Synthetic => {
                    let synth = dataset::read_synthetic(&art.synthetic(), cfg.augment_h)?;
                    dataset::split(&synth, cfg.split_mode)?.0
                }
                TrainDataKind::Real => dataset::split(&load_observed(cfg)?, cfg.split_mode)?.0,
            };
            let (frames, t_last) = nar_seed_frames(&series, &model)?;
            let steps =
                ((window_end - t_last) / model.resolution + 1e-9).floor() as usize;
            let (preds, truncated) = nar::forecast_closed_loop(&model, &frames, steps)?;
            if truncated {
                eprintln!(
                    "warning: NAR ({}) forecast truncated at {} of {} steps",
                    kind_tag(data_kind),
                    preds.len(),
                    steps
                );
            }
            let times: Vec<f64> = (1..=preds.len())
                .map(|s| t_last + s as f64 * model.resolution)
                .collect();
            let weights = nar_node_weights(cfg, &art, model.n_nodes)?;
            write_forecast_csv(
                &art.forecast(NetworkKind::Nar, data_kind),
                &labels,
                &times,
                model.n_nodes,
                |ti, x, m| preds[ti][x * model.n_nodes + m],
                |ti, x| {
                    (0..model.n_nodes)
                        .map(|m| preds[ti][x * model.n_nodes + m] * weights[m])
                        .sum()
                },
            )?;
        }

        // PINN surfaces at daily resolution over the whole mode window.
        let model_path = art.pinn_model(data_kind);
        if model_path.exists() {
            let model = read_pinn_model(&model_path)?;
            let (start, _, end) = cfg.split_mode.bounds();
            let days: Vec<f64> = (start as i64..=end as i64).map(|d| d as f64).collect();
            let surface = pinn::predict(&model, &days)?;
            write_forecast_csv(
                &art.forecast(NetworkKind::Pinn, data_kind),
                &labels,
                &days,
                surface.n_nodes,
                |ti, x, m| surface.values[(ti * surface.n_ages + x) * surface.n_nodes + m][1],
                |ti, x| surface.mean[ti * surface.n_ages + x][1],
            )?;
        }
    }
    Ok(())
}

/// Node weights for averaging NAR per-node forecasts.
fn nar_node_weights(cfg: &RunConfig, art: &Artifacts, n_nodes: usize) -> Result<Vec<f64>> {
    if n_nodes == 1 {
        return Ok(vec![1.0]);
    }
    let calib = CalibrationResult::read_json(&art.calibration())?;
    let w = calib.pairing.weights();
    if w.len() != n_nodes {
        return Err(Error::Shape(format!(
            "{} calibration nodes vs {} forecast channels",
            w.len(),
            n_nodes
        )));
    }
    let _ = cfg;
    Ok(w)
}

#[derive(Debug, Serialize, Deserialize)]
struct Summary {
    split_mode: SplitMode,
    variant: ModelVariant,
    max_errors: Vec<(String, f64)>,
    table2_warnings: Vec<String>,
    peak: Option<PeakMetrics>,
}

/// Reads one forecast CSV back as mean infected series per age class.
fn read_forecast_means(path: &Path, labels: &[String]) -> Result<Vec<Vec<(f64, f64)>>> {
    let body =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); labels.len()];
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            continue;
        }
        let t: f64 = f[0].parse().map_err(|_| Error::Dataset("bad forecast t".into()))?;
        let age = labels
            .iter()
            .position(|l| l == f[1])
            .ok_or_else(|| Error::Dataset(format!("unknown class {} in forecast", f[1])))?;
        let mean: f64 = f[4]
            .parse()
            .map_err(|_| Error::Dataset("bad forecast mean".into()))?;
        if series[age].last().map(|&(lt, _)| (lt - t).abs() > 1e-9).unwrap_or(true) {
            series[age].push((t, mean));
        }
    }
    Ok(series)
}

/// Computes test-window error tables, the cost table, and peak metrics from
/// the artifacts on disk.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let art = ensure_out(cfg)?;
    let observed = load_observed(cfg)?;
    let (_, test) = dataset::split(&observed, cfg.split_mode)?;
    let test_days = test.times();
    let labels = match cfg.variant {
        ModelVariant::Siar => vec!["all".to_string()],
        ModelVariant::SiarAged => AgeGrid::default_six().labels(),
    };

    let timings: Vec<TimingEntry> = read_timings(&art.timings(NetworkKind::Nar), cfg)
        .into_iter()
        .chain(read_timings(&art.timings(NetworkKind::Pinn), cfg))
        .collect();

    let mut reports: Vec<ErrorReport> = Vec::new();
    for net in [NetworkKind::Nar, NetworkKind::Pinn] {
        for data_kind in [TrainDataKind::Synthetic, TrainDataKind::Real] {
            let path = art.forecast(net, data_kind);
            if !path.exists() {
                continue;
            }
            let means = read_forecast_means(&path, &labels)?;
            let mut curves = Vec::new();
            for (x, label) in labels.iter().enumerate() {
                let pred_days = subsample_to_days(&means[x], &test_days)?;
                let data_series: Vec<(f64, f64)> = test_days
                    .iter()
                    .map(|&t| Ok((t, test.at(t, x, None)?.0)))
                    .collect::<Result<Vec<_>>>()?;
                curves.push(pointwise_error(&pred_days, &data_series, label)?);
            }
            let timing = timings
                .iter()
                .find(|t| t.label.network == net && t.label.data == data_kind);
            reports.push(ErrorReport {
                label: RunLabel {
                    variant: cfg.variant,
                    network: net,
                    data: data_kind,
                },
                curves,
                train_seconds: timing.map_or(0.0, |t| t.seconds),
                per_epoch_seconds: timing.map_or(0.0, |t| t.per_epoch_seconds),
                epochs: timing.map_or(0, |t| t.epochs),
            });
        }
    }
    if reports.is_empty() {
        return Err(Error::Evaluation(
            "no forecasts found; run the training and forecast stages first".into(),
        ));
    }

    let (table2_csv, warnings) = table2(&reports);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    std::fs::write(art.table2(), &table2_csv)
        .map_err(|e| Error::io(art.table2().display().to_string(), e))?;

    if !timings.is_empty() {
        let table1_csv = cost_report(&timings)?;
        std::fs::write(art.table1(), &table1_csv)
            .map_err(|e| Error::io(art.table1().display().to_string(), e))?;
    }

    // Peak metrics on the aggregate infected curve (long-term runs).
    let peak = if cfg.split_mode == SplitMode::LongTerm {
        let pinn_path = art.forecast(NetworkKind::Pinn, TrainDataKind::Synthetic);
        if pinn_path.exists() {
            let means = read_forecast_means(&pinn_path, &labels)?;
            let agg_pred = aggregate_mean_series(&means, &test_days)?;
            let agg_data: Vec<(f64, f64)> = test_days
                .iter()
                .map(|&t| {
                    let mut total = 0.0;
                    for x in 0..labels.len() {
                        total += test.at(t, x, None).map(|v| v.0).unwrap_or(0.0);
                    }
                    (t, total)
                })
                .collect();
            let pm = peak_metrics(&agg_pred, &agg_data)?;
            let body = serde_json::to_string_pretty(&pm)?;
            std::fs::write(art.peak_metrics(), body)
                .map_err(|e| Error::io(art.peak_metrics().display().to_string(), e))?;
            Some(pm)
        } else {
            None
        }
    } else {
        None
    };

    let summary = Summary {
        split_mode: cfg.split_mode,
        variant: cfg.variant,
        max_errors: reports
            .iter()
            .map(|r| (r.label.name(), r.max_error()))
            .collect(),
        table2_warnings: warnings,
        peak,
    };
    let body = serde_json::to_string_pretty(&summary)?;
    std::fs::write(art.summary(), body)
        .map_err(|e| Error::io(art.summary().display().to_string(), e))
}

/// Sums per-class mean series into an aggregate, at the given days.
fn aggregate_mean_series(
    means: &[Vec<(f64, f64)>],
    days: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let mut agg: Vec<(f64, f64)> = days.iter().map(|&d| (d, 0.0)).collect();
    for series in means {
        let sub = subsample_to_days(series, days)?;
        for (a, s) in agg.iter_mut().zip(sub.iter()) {
            a.1 += s.1;
        }
    }
    Ok(agg)
}

/// The whole pipeline in order.
pub fn cmd_run_all(cfg: &RunConfig) -> Result<()> {
    cmd_calibrate(cfg)?;
    cmd_augment(cfg)?;
    cmd_train_pinn(cfg)?;
    cmd_train_nar(cfg)?;
    cmd_forecast(cfg)?;
    cmd_evaluate(cfg)
}
