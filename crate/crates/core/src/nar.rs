//! Nonlinear autoregressive forecasting: a feed-forward network maps the
//! previous d infected values per (age class, node) channel to the next
//! value, and forecasts recursively in closed loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::EpiDataset;
use crate::error::{Error, Result};
use crate::neural::{
    adam_step, loss_gradient, AdamState, Activation, Checkpoint, NetworkParams,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NarConfig {
    pub delay: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub record_every: usize,
}

impl Default for NarConfig {
    fn default() -> Self {
        NarConfig {
            delay: 5,
            epochs: 20_000,
            learning_rate: 1e-2,
            hidden: vec![16, 16],
            activation: Activation::Relu,
            record_every: 100,
        }
    }
}

/// One training sample: d consecutive infected vectors and the next one.
/// Inputs are flattened in fixed (lag, age, node) order, oldest lag first.
#[derive(Debug, Clone, PartialEq)]
pub struct LagWindow {
    pub inputs: Vec<f64>,
    pub target: Vec<f64>,
}

/// Channel layout shared by the windows and the forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesShape {
    pub n_ages: usize,
    /// 1 for observed series (no node dimension).
    pub n_nodes: usize,
    pub resolution: f64,
    /// Time stamps of the underlying uniform series.
    pub times: Vec<f64>,
}

impl SeriesShape {
    pub fn channels(&self) -> usize {
        self.n_ages * self.n_nodes
    }
}

/// Extracts the infected series of every (age, node) channel on the shared
/// uniform time grid and slides the lag window over it.
pub fn make_windows(series: &EpiDataset, d: usize) -> Result<(Vec<LagWindow>, SeriesShape)> {
    if d == 0 {
        return Err(Error::Config("delay must be at least 1".into()));
    }
    let n_ages = series.n_ages();
    let n_nodes = series.n_nodes.unwrap_or(1);
    let times = series.times();
    if times.len() < d + 1 {
        return Err(Error::Dataset(format!(
            "series has {} samples, need at least {}",
            times.len(),
            d + 1
        )));
    }
    let dt = series.resolution;
    for pair in times.windows(2) {
        if ((pair[1] - pair[0]) - dt).abs() > 1e-6 {
            return Err(Error::Dataset(format!(
                "non-uniform sampling: gap {} vs resolution {}",
                pair[1] - pair[0],
                dt
            )));
        }
    }

    // channel-major grid: grid[ti][age * n_nodes + node]
    let node_of = |m: usize| -> Option<usize> {
        if series.n_nodes.is_some() {
            Some(m)
        } else {
            None
        }
    };
    let mut grid = vec![vec![f64::NAN; n_ages * n_nodes]; times.len()];
    for (ti, &t) in times.iter().enumerate() {
        for age in 0..n_ages {
            for m in 0..n_nodes {
                let (i, _) = series.at(t, age, node_of(m))?;
                grid[ti][age * n_nodes + m] = i;
            }
        }
    }

    let channels = n_ages * n_nodes;
    let mut windows = Vec::with_capacity(times.len() - d);
    for k in 0..times.len() - d {
        let mut inputs = Vec::with_capacity(d * channels);
        for lag in 0..d {
            inputs.extend_from_slice(&grid[k + lag]);
        }
        windows.push(LagWindow {
            inputs,
            target: grid[k + d].clone(),
        });
    }
    Ok((
        windows,
        SeriesShape {
            n_ages,
            n_nodes,
            resolution: dt,
            times,
        },
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NarModel {
    #[serde(flatten)]
    pub core: Checkpoint,
    pub delay: usize,
    pub n_ages: usize,
    pub n_nodes: usize,
    pub resolution: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedNar {
    pub model: NarModel,
    pub history: Vec<(usize, f64)>,
    pub train_seconds: f64,
    pub per_epoch_seconds: f64,
}

/// Full-batch Adam on the mean squared one-step error summed over channels.
pub fn train(
    cfg: &NarConfig,
    windows: &[LagWindow],
    shape: &SeriesShape,
    seed: u64,
) -> Result<TrainedNar> {
    if windows.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    let channels = shape.channels();
    let mut sizes = vec![cfg.delay * channels];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(channels);
    let mut net = NetworkParams::init(&sizes, cfg.activation, seed)?;
    let mut adam = AdamState::new(&net, cfg.learning_rate);
    let inputs: Vec<Vec<f64>> = windows.iter().map(|w| w.inputs.clone()).collect();
    let inv_n = 1.0 / windows.len() as f64;

    let mut history: Vec<(usize, f64)> = Vec::new();
    let every = cfg.record_every.max(1);
    let started = Instant::now();
    for epoch in 0..cfg.epochs {
        let loss = |outs: &[Vec<f64>]| -> (f64, Vec<Vec<f64>>) {
            let mut total = 0.0;
            let mut bars = Vec::with_capacity(outs.len());
            for (o, w) in outs.iter().zip(windows.iter()) {
                let mut bar = vec![0.0; o.len()];
                for c in 0..o.len() {
                    let gap = o[c] - w.target[c];
                    total += gap * gap * inv_n;
                    bar[c] = 2.0 * gap * inv_n;
                }
                bars.push(bar);
            }
            (total, bars)
        };
        let (value, grad) = match loss_gradient(&net, &inputs, loss) {
            Ok(v) => v,
            Err(_) => {
                return Err(Error::Divergence {
                    epoch,
                    history: history.clone(),
                })
            }
        };
        if !value.is_finite() || !grad.is_finite() {
            return Err(Error::Divergence {
                epoch,
                history: history.clone(),
            });
        }
        if epoch % every == 0 {
            history.push((epoch, value));
        }
        adam_step(&mut net, &grad, &mut adam);
    }
    let train_seconds = started.elapsed().as_secs_f64();

    // Closing record.
    let final_loss: f64 = windows
        .iter()
        .map(|w| {
            let o = net.forward(&w.inputs).unwrap();
            o.iter()
                .zip(w.target.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                * inv_n
        })
        .sum();
    history.push((cfg.epochs, final_loss));

    Ok(TrainedNar {
        model: NarModel {
            core: Checkpoint {
                net,
                seed,
                epochs: cfg.epochs,
                learning_rate: cfg.learning_rate,
                input_offset: vec![0.0; cfg.delay * channels],
                input_scale: vec![1.0; cfg.delay * channels],
                metadata: serde_json::Map::new(),
            },
            delay: cfg.delay,
            n_ages: shape.n_ages,
            n_nodes: shape.n_nodes,
            resolution: shape.resolution,
        },
        history,
        train_seconds,
        per_epoch_seconds: if cfg.epochs > 0 {
            train_seconds / cfg.epochs as f64
        } else {
            0.0
        },
    })
}

/// Recursive multi-step forecast. Returns the predicted vectors and whether
/// the loop was truncated by a non-finite prediction.
pub fn forecast_closed_loop(
    model: &NarModel,
    seed_history: &[Vec<f64>],
    steps: usize,
) -> Result<(Vec<Vec<f64>>, bool)> {
    let channels = model.n_ages * model.n_nodes;
    if seed_history.len() != model.delay {
        return Err(Error::Shape(format!(
            "seed history has {} entries, delay is {}",
            seed_history.len(),
            model.delay
        )));
    }
    if seed_history.iter().any(|v| v.len() != channels) {
        return Err(Error::Shape("seed history channel mismatch".into()));
    }
    let mut buffer: Vec<Vec<f64>> = seed_history.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut input = Vec::with_capacity(model.delay * channels);
        for lag in buffer.iter() {
            input.extend_from_slice(lag);
        }
        let pred = model.core.net.forward(&input)?;
        if pred.iter().any(|v| !v.is_finite()) {
            return Ok((out, true));
        }
        buffer.remove(0);
        buffer.push(pred.clone());
        out.push(pred);
    }
    Ok((out, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DataKind, EpiRecord, SplitTag};

    fn scalar_series(values: &[f64], resolution: f64) -> EpiDataset {
        EpiDataset {
            records: values
                .iter()
                .enumerate()
                .map(|(j, &v)| EpiRecord {
                    t: j as f64 * resolution,
                    age: 0,
                    node: None,
                    i: v,
                    r: 0.0,
                    s: None,
                    a: None,
                })
                .collect(),
            kind: DataKind::Observed,
            split: SplitTag::Unsplit,
            resolution,
            labels: vec!["all".into()],
            population: Some(1000),
            n_nodes: None,
        }
    }

    #[test]
    fn window_indexing_matches_spec() {
        let vals: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let series = scalar_series(&vals, 1.0);
        let (windows, shape) = make_windows(&series, 5).unwrap();
        assert_eq!(windows.len(), 5);
        assert_eq!(shape.channels(), 1);
        assert_eq!(windows[0].inputs, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(windows[0].target, vec![6.0]);

        let six = scalar_series(&vals[..6], 1.0);
        let (w6, _) = make_windows(&six, 5).unwrap();
        assert_eq!(w6.len(), 1);

        let five = scalar_series(&vals[..5], 1.0);
        assert!(make_windows(&five, 5).is_err());
    }

    #[test]
    fn window_targets_reconstruct_series() {
        let vals: Vec<f64> = (0..40).map(|v| (v as f64 * 0.3).sin()).collect();
        let series = scalar_series(&vals, 0.2);
        let d = 4;
        let (windows, _) = make_windows(&series, d).unwrap();
        let rebuilt: Vec<f64> = windows.iter().map(|w| w.target[0]).collect();
        assert_eq!(rebuilt, vals[d..].to_vec());
    }

    #[test]
    fn non_uniform_sampling_is_rejected() {
        let mut series = scalar_series(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 1.0);
        series.records[3].t = 3.5;
        assert!(make_windows(&series, 2).is_err());
    }

    #[test]
    fn multichannel_flattening_is_lag_age_node() {
        // 2 ages x 2 nodes synthetic series with recognizable values.
        let mut records = Vec::new();
        for ti in 0..4 {
            for age in 0..2 {
                for node in 0..2 {
                    records.push(EpiRecord {
                        t: ti as f64,
                        age,
                        node: Some(node),
                        i: (ti * 100 + age * 10 + node) as f64,
                        r: 0.0,
                        s: Some(0.0),
                        a: Some(0.0),
                    });
                }
            }
        }
        let series = EpiDataset {
            records,
            kind: DataKind::Synthetic,
            split: SplitTag::Unsplit,
            resolution: 1.0,
            labels: vec!["a".into(), "b".into()],
            population: None,
            n_nodes: Some(2),
        };
        let (windows, shape) = make_windows(&series, 2).unwrap();
        assert_eq!(shape.channels(), 4);
        assert_eq!(
            windows[0].inputs,
            vec![0.0, 1.0, 10.0, 11.0, 100.0, 101.0, 110.0, 111.0]
        );
        assert_eq!(windows[0].target, vec![200.0, 201.0, 210.0, 211.0]);
    }

    #[test]
    fn constant_series_is_learned_to_high_accuracy() {
        let series = scalar_series(&vec![0.37; 30], 1.0);
        let (windows, shape) = make_windows(&series, 5).unwrap();
        let cfg = NarConfig {
            epochs: 2000,
            ..Default::default()
        };
        let trained = train(&cfg, &windows, &shape, 42).unwrap();
        let final_loss = trained.history.last().unwrap().1;
        assert!(final_loss <= 1e-8, "constant-map loss {final_loss}");
    }

    #[test]
    fn linear_series_one_step_accuracy() {
        let vals: Vec<f64> = (0..30).map(|v| 0.01 + 0.003 * v as f64).collect();
        let series = scalar_series(&vals, 1.0);
        let (windows, shape) = make_windows(&series, 2).unwrap();
        let cfg = NarConfig {
            delay: 2,
            epochs: 4000,
            hidden: vec![8, 8],
            ..Default::default()
        };
        let trained = train(&cfg, &windows, &shape, 7).unwrap();
        for w in &windows {
            let pred = trained.model.core.net.forward(&w.inputs).unwrap();
            let rel = (pred[0] - w.target[0]).abs() / w.target[0];
            assert!(rel <= 1e-3, "one-step relative error {rel}");
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let series = scalar_series(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], 1.0);
        let (windows, shape) = make_windows(&series, 5).unwrap();
        let cfg = NarConfig {
            epochs: 0,
            ..Default::default()
        };
        let trained = train(&cfg, &windows, &shape, 3).unwrap();
        let fresh = NetworkParams::init(&[5, 16, 16, 1], Activation::Relu, 3).unwrap();
        assert_eq!(trained.model.core.net, fresh);
    }

    /// Hand-built network that copies one lag channel to the output.
    fn copy_lag_net(delay: usize, which_lag: usize) -> NarModel {
        let mut net = NetworkParams::init(&[delay, 1], Activation::Relu, 0).unwrap();
        net.weights[0] = (0..delay)
            .map(|j| if j == which_lag { 1.0 } else { 0.0 })
            .collect();
        net.biases[0] = vec![0.0];
        NarModel {
            core: Checkpoint {
                net,
                seed: 0,
                epochs: 0,
                learning_rate: 0.0,
                input_offset: vec![0.0; delay],
                input_scale: vec![1.0; delay],
                metadata: serde_json::Map::new(),
            },
            delay,
            n_ages: 1,
            n_nodes: 1,
            resolution: 1.0,
        }
    }

    #[test]
    fn copy_last_lag_forecasts_constant() {
        let model = copy_lag_net(5, 4);
        let seed: Vec<Vec<f64>> = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0], vec![5.0]];
        let (preds, truncated) = forecast_closed_loop(&model, &seed, 8).unwrap();
        assert!(!truncated);
        assert!(preds.iter().all(|p| p == &vec![5.0]));
    }

    #[test]
    fn closed_loop_buffer_shifts_correctly() {
        // A network that copies the OLDEST lag turns the forecast into a
        // period-d cycle of the seed history, which pins down the shift.
        let model = copy_lag_net(4, 0);
        let seed: Vec<Vec<f64>> = vec![vec![10.0], vec![20.0], vec![30.0], vec![40.0]];
        let (preds, _) = forecast_closed_loop(&model, &seed, 10).unwrap();
        let got: Vec<f64> = preds.iter().map(|p| p[0]).collect();
        assert_eq!(
            got,
            vec![10.0, 20.0, 30.0, 40.0, 10.0, 20.0, 30.0, 40.0, 10.0, 20.0]
        );
    }

    #[test]
    fn zero_steps_gives_empty_forecast() {
        let model = copy_lag_net(3, 2);
        let seed = vec![vec![1.0], vec![2.0], vec![3.0]];
        let (preds, truncated) = forecast_closed_loop(&model, &seed, 0).unwrap();
        assert!(preds.is_empty());
        assert!(!truncated);
    }

    #[test]
    fn damped_series_closed_loop_stays_near_open_loop() {
        let vals: Vec<f64> = (0..60).map(|v| 0.5 * (-0.05 * v as f64).exp()).collect();
        let series = scalar_series(&vals, 1.0);
        let (windows, shape) = make_windows(&series, 5).unwrap();
        let cfg = NarConfig {
            epochs: 6000,
            hidden: vec![12, 12],
            ..Default::default()
        };
        let trained = train(&cfg, &windows, &shape, 13).unwrap();

        // Open-loop one-step error over the tail.
        let tail = &windows[40..];
        let open_err = tail
            .iter()
            .map(|w| {
                let p = trained.model.core.net.forward(&w.inputs).unwrap();
                (p[0] - w.target[0]).abs()
            })
            .fold(0.0_f64, f64::max);

        // Closed loop from index 40.
        let seed: Vec<Vec<f64>> = (40..45).map(|j| vec![vals[j]]).collect();
        let (preds, truncated) = forecast_closed_loop(&trained.model, &seed, 10).unwrap();
        assert!(!truncated);
        let closed_err = preds
            .iter()
            .enumerate()
            .map(|(s, p)| (p[0] - vals[45 + s]).abs())
            .fold(0.0_f64, f64::max);
        assert!(
            closed_err < 10.0 * open_err.max(1e-9),
            "closed {closed_err} vs open {open_err}"
        );
    }

    #[test]
    fn truncates_on_non_finite_prediction() {
        let mut model = copy_lag_net(2, 1);
        // Exploding affine map.
        model.core.net.weights[0] = vec![0.0, 1e308];
        let seed = vec![vec![1.0], vec![1e10]];
        let (preds, truncated) = forecast_closed_loop(&model, &seed, 5).unwrap();
        assert!(truncated);
        assert!(preds.len() < 5);
    }
}
