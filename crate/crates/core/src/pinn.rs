//! Physics-informed training: a feed-forward network maps (age, time,
//! uncertainty) to the four compartment fractions and is fitted to both the
//! data and the model residuals.
//!
//! The data loss compares node-averaged outputs to node-averaged data; the
//! physics loss squares the node-averaged residuals of the social-SIAR
//! equations, with time derivatives taken exactly through the tangent pass.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationResult;
use crate::dataset::{DataKind, EpiDataset};
use crate::error::{Error, Result};
use crate::integrator::grid_len;
use crate::models::EpiParams;
use crate::neural::{
    adam_step, backprop_point, AdamState, Activation, Checkpoint, ForwardTrace, Gradient,
    NetworkParams, TangentTrace,
};

/// What the network reads at each collocation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Time only (real data, non-aged).
    TOnly,
    /// Time and uncertainty (synthetic, non-aged).
    TZ,
    /// Age and time (real data, age-structured).
    XT,
    /// Age, time, uncertainty (synthetic, age-structured).
    XTZ,
}

impl InputMode {
    pub fn dims(&self) -> usize {
        match self {
            InputMode::TOnly => 1,
            InputMode::TZ => 2,
            InputMode::XT => 2,
            InputMode::XTZ => 3,
        }
    }

    /// Position of the time coordinate in the input vector.
    pub fn t_index(&self) -> usize {
        match self {
            InputMode::TOnly | InputMode::TZ => 0,
            InputMode::XT | InputMode::XTZ => 1,
        }
    }

    pub fn uses_age(&self) -> bool {
        matches!(self, InputMode::XT | InputMode::XTZ)
    }

    pub fn uses_z(&self) -> bool {
        matches!(self, InputMode::TZ | InputMode::XTZ)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PinnConfig {
    pub omega_d: f64,
    pub omega_p: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Extra physics collocation grid (ta, tb, h); the dataset's own sample
    /// times always collocate both losses.
    pub collocation: Option<(f64, f64, f64)>,
    pub record_every: usize,
}

impl Default for PinnConfig {
    fn default() -> Self {
        PinnConfig {
            omega_d: 1.0,
            omega_p: 1.0,
            epochs: 50_000,
            learning_rate: 1e-2,
            hidden: vec![32, 32, 32, 32],
            activation: Activation::Tanh,
            collocation: None,
            record_every: 100,
        }
    }
}

impl PinnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.omega_d < 0.0 || self.omega_p < 0.0 || (self.omega_d == 0.0 && self.omega_p == 0.0)
        {
            return Err(Error::Config(
                "omega_d and omega_p must be nonnegative and not both zero".into(),
            ));
        }
        Ok(())
    }
}

/// A fully assembled training problem: scaled inputs at every collocation
/// point, node-mean data targets, and the calibrated coefficients the
/// residuals read.
#[derive(Debug, Clone)]
pub struct PinnProblem {
    pub mode: InputMode,
    pub times: Vec<f64>,
    pub n_ages: usize,
    pub n_nodes: usize,
    /// Scaled network inputs, point-major: ((ti * n_ages + x) * n_nodes + m).
    pub inputs: Vec<Vec<f64>>,
    /// Per time index: whether the data loss reads it.
    pub data_mask: Vec<bool>,
    /// Node-mean targets per (ti * n_ages + x): [S, I, A, R].
    pub data_targets: Vec<[f64; 4]>,
    pub params: EpiParams,
    pub node_weights: Vec<f64>,
    /// d(scaled t)/d(raw t), the chain factor for time derivatives.
    pub tscale: f64,
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub age_midpoints: Vec<f64>,
    pub z_nodes: Vec<f64>,
}

/// Builds the training problem for a synthetic (per-node) dataset.
pub fn problem_from_synthetic(
    data: &EpiDataset,
    params: &EpiParams,
    node_weights: &[f64],
    z_nodes: &[f64],
    age_midpoints: &[f64],
    cfg: &PinnConfig,
) -> Result<PinnProblem> {
    if data.kind != DataKind::Synthetic {
        return Err(Error::Config("expected a synthetic dataset".into()));
    }
    let n_nodes = data
        .n_nodes
        .ok_or_else(|| Error::Dataset("synthetic dataset lacks node count".into()))?;
    if n_nodes != node_weights.len() || n_nodes != z_nodes.len() {
        return Err(Error::Shape("node weight/z count mismatch".into()));
    }
    let n_ages = data.n_ages();
    let mode = match (n_ages > 1, n_nodes > 1) {
        (true, _) => InputMode::XTZ,
        (false, true) => InputMode::TZ,
        (false, false) => InputMode::TZ,
    };

    // Node-mean targets at every data time.
    let data_times = data.times();
    let mut lookup = std::collections::BTreeMap::new();
    for r in &data.records {
        let key = (
            (r.t * 1e7).round() as i64,
            r.age,
            r.node.unwrap_or(usize::MAX),
        );
        lookup.insert(key, r);
    }
    let mut targets = Vec::with_capacity(data_times.len() * n_ages);
    for &t in &data_times {
        for x in 0..n_ages {
            let mut mean = [0.0_f64; 4];
            for (m, &w) in node_weights.iter().enumerate() {
                let key = ((t * 1e7).round() as i64, x, m);
                let r = lookup
                    .get(&key)
                    .ok_or_else(|| Error::Dataset(format!("missing sample at t={t}, age {x}, node {m}")))?;
                let s = r
                    .s
                    .ok_or_else(|| Error::Dataset("synthetic record lacks S series".into()))?;
                let a = r
                    .a
                    .ok_or_else(|| Error::Dataset("synthetic record lacks A series".into()))?;
                mean[0] += s * w;
                mean[1] += r.i * w;
                mean[2] += a * w;
                mean[3] += r.r * w;
            }
            targets.push(mean);
        }
    }

    assemble_problem(
        mode,
        data_times,
        targets,
        n_ages,
        n_nodes,
        params,
        node_weights,
        z_nodes,
        age_midpoints,
        cfg,
    )
}

/// Rebuilds an observed dataset into the four-compartment form the data loss
/// needs: A from the calibrated mean symptomatic fraction, S as the class
/// share minus everything else.
pub fn reconstruct_real(data: &EpiDataset, calib: &CalibrationResult) -> Result<EpiDataset> {
    let mut out = data.clone();
    for r in out.records.iter_mut() {
        let xi = calib.mean_xi_at(r.t)?[r.age].clamp(1e-6, 1.0);
        let a = (1.0 - xi) / xi * r.i;
        let s = calib.shares[r.age] - r.i - r.r - a;
        r.a = Some(a);
        r.s = Some(s);
    }
    Ok(out)
}

/// Builds the training problem for an observed dataset (single fictitious
/// node at the calibrated means).
pub fn problem_from_real(
    data: &EpiDataset,
    calib: &CalibrationResult,
    cfg: &PinnConfig,
) -> Result<PinnProblem> {
    let filled = if data.records.iter().any(|r| r.s.is_none() || r.a.is_none()) {
        reconstruct_real(data, calib)?
    } else {
        data.clone()
    };
    let n_ages = filled.n_ages();
    let mode = if n_ages > 1 {
        InputMode::XT
    } else {
        InputMode::TOnly
    };
    let params = calib.mean_params();
    let data_times = filled.times();
    let mut targets = Vec::with_capacity(data_times.len() * n_ages);
    for &t in &data_times {
        for x in 0..n_ages {
            let r = filled
                .records
                .iter()
                .find(|r| (r.t - t).abs() < 1e-9 && r.age == x)
                .ok_or_else(|| Error::Dataset(format!("missing day t={t} for age {x}")))?;
            targets.push([r.s.unwrap(), r.i, r.a.unwrap(), r.r]);
        }
    }
    assemble_problem(
        mode,
        data_times,
        targets,
        n_ages,
        1,
        &params,
        &[1.0],
        &[0.5],
        &calib.ages.midpoints(),
        cfg,
    )
}

#[allow(clippy::too_many_arguments)]
fn assemble_problem(
    mode: InputMode,
    data_times: Vec<f64>,
    data_targets: Vec<[f64; 4]>,
    n_ages: usize,
    n_nodes: usize,
    params: &EpiParams,
    node_weights: &[f64],
    z_nodes: &[f64],
    age_midpoints: &[f64],
    cfg: &PinnConfig,
) -> Result<PinnProblem> {
    // Union of data times and the optional physics grid, data first.
    let mut times = data_times.clone();
    let mut data_mask = vec![true; times.len()];
    if let Some((ta, tb, h)) = cfg.collocation {
        for k in 0..grid_len(ta, tb, h) {
            let t = (ta + k as f64 * h).min(tb);
            if !times.iter().any(|&u| (u - t).abs() < 1e-9) {
                times.push(t);
                data_mask.push(false);
            }
        }
    }
    // Targets correspond to the leading data times; pad the physics tail.
    let mut targets = data_targets;
    targets.resize(times.len() * n_ages, [f64::NAN; 4]);

    let (t_lo, t_hi) = times
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
            (lo.min(t), hi.max(t))
        });
    let t_span = (t_hi - t_lo).max(1e-9);

    let dims = mode.dims();
    let mut offset = vec![0.0; dims];
    let mut scale = vec![1.0; dims];
    let ti = mode.t_index();
    offset[ti] = 0.5 * (t_lo + t_hi);
    scale[ti] = 2.0 / t_span;
    if mode.uses_age() {
        offset[0] = 50.0;
        scale[0] = 2.0 / 100.0;
    }
    if mode.uses_z() {
        let zi = dims - 1;
        offset[zi] = 0.5;
        scale[zi] = 2.0;
    }

    let mut inputs = Vec::with_capacity(times.len() * n_ages * n_nodes);
    for &t in &times {
        for x in 0..n_ages {
            for m in 0..n_nodes {
                let mut v = Vec::with_capacity(dims);
                if mode.uses_age() {
                    v.push((age_midpoints[x] - offset[0]) * scale[0]);
                }
                v.push((t - offset[ti]) * scale[ti]);
                if mode.uses_z() {
                    let zi = dims - 1;
                    v.push((z_nodes[m] - offset[zi]) * scale[zi]);
                }
                inputs.push(v);
            }
        }
    }

    Ok(PinnProblem {
        mode,
        times,
        n_ages,
        n_nodes,
        inputs,
        data_mask,
        data_targets: targets,
        params: params.clone(),
        node_weights: node_weights.to_vec(),
        tscale: scale[ti],
        input_offset: offset,
        input_scale: scale,
        age_midpoints: age_midpoints.to_vec(),
        z_nodes: z_nodes.to_vec(),
    })
}

/// Per-point adjoint seeds for the combined loss.
struct Seeds {
    out: Vec<Vec<f64>>,
    tan: Vec<Vec<f64>>,
}

impl PinnProblem {
    #[inline]
    fn pid(&self, ti: usize, x: usize, m: usize) -> usize {
        (ti * self.n_ages + x) * self.n_nodes + m
    }

    /// Sum over compartments, data times, and classes of the squared gap
    /// between node-averaged outputs and node-averaged data.
    fn data_loss_terms(
        &self,
        outputs: &[Vec<f64>],
        mut seeds: Option<&mut Seeds>,
    ) -> f64 {
        let mut total = 0.0;
        for (ti, &is_data) in self.data_mask.iter().enumerate() {
            if !is_data {
                continue;
            }
            for x in 0..self.n_ages {
                let target = self.data_targets[ti * self.n_ages + x];
                for c in 0..4 {
                    let mut mean = 0.0;
                    for m in 0..self.n_nodes {
                        mean += outputs[self.pid(ti, x, m)][c] * self.node_weights[m];
                    }
                    let gap = mean - target[c];
                    total += gap * gap;
                    if let Some(s) = seeds.as_deref_mut() {
                        for m in 0..self.n_nodes {
                            s.out[self.pid(ti, x, m)][c] += 2.0 * gap * self.node_weights[m];
                        }
                    }
                }
            }
        }
        total
    }

    /// Sum over compartments, collocation times, and classes of the squared
    /// node-averaged model residuals.
    fn physics_loss_terms(
        &self,
        outputs: &[Vec<f64>],
        derivs: &[Vec<f64>],
        mut seeds: Option<&mut Seeds>,
    ) -> Result<f64> {
        let p = &self.params;
        let k = p.k;
        let mut total = 0.0;

        // Scratch per (x, m): residuals and the force of infection pieces.
        let n_xm = self.n_ages * self.n_nodes;
        let mut res = vec![[0.0_f64; 4]; n_xm];
        let mut lam = vec![0.0_f64; n_xm];
        let mut pool = vec![0.0_f64; self.n_nodes];

        for (ti, &t) in self.times.iter().enumerate() {
            let w = p.windows.find(t)?;
            // Residuals per node and class.
            for m in 0..self.n_nodes {
                let mut pl = 0.0;
                for y in 0..self.n_ages {
                    let o = &outputs[self.pid(ti, y, m)];
                    pl += p.h[p.awn(y, w, m)] * (k * o[1] + o[2]);
                }
                pool[m] = pl;
                for x in 0..self.n_ages {
                    let pid = self.pid(ti, x, m);
                    let o = &outputs[pid];
                    let g = &derivs[pid];
                    let xi = p.xi[p.awn(x, w, m)];
                    let gi = p.gamma_i[p.an(x, m)];
                    let ga = p.gamma_a[p.an(x, m)];
                    let l = p.beta[p.an(x, m)] * o[0] * p.h[p.awn(x, w, m)] * pl;
                    let xm = x * self.n_nodes + m;
                    lam[xm] = l;
                    let gt = |c: usize| g[c] * self.tscale;
                    res[xm][0] = gt(0) + l;
                    res[xm][1] = gt(1) - xi * l + gi * o[1];
                    res[xm][2] = gt(2) - (1.0 - xi) * l + ga * o[2];
                    res[xm][3] = gt(3) - gi * o[1] - ga * o[2];
                }
            }
            // Node-averaged residuals and their squares.
            let mut rbar = vec![[0.0_f64; 4]; self.n_ages];
            for x in 0..self.n_ages {
                for m in 0..self.n_nodes {
                    for c in 0..4 {
                        rbar[x][c] += res[x * self.n_nodes + m][c] * self.node_weights[m];
                    }
                }
                for c in 0..4 {
                    if !rbar[x][c].is_finite() {
                        return Err(Error::Evaluation(format!(
                            "non-finite residual at t={t}, age {x}"
                        )));
                    }
                    total += rbar[x][c] * rbar[x][c];
                }
            }

            if let Some(s) = seeds.as_deref_mut() {
                // rho_i(x,m) = dL/dR_i(x,m) = 2 rbar_i(x) w_m.
                for m in 0..self.n_nodes {
                    let mut big_t = 0.0; // sum_x lambda_bar(x) beta(x) f_S(x) H(x)
                    for x in 0..self.n_ages {
                        let pid = self.pid(ti, x, m);
                        let xm = x * self.n_nodes + m;
                        let wgt = self.node_weights[m];
                        let rho: Vec<f64> =
                            (0..4).map(|c| 2.0 * rbar[x][c] * wgt).collect();
                        let xi = p.xi[p.awn(x, w, m)];
                        let gi = p.gamma_i[p.an(x, m)];
                        let ga = p.gamma_a[p.an(x, m)];
                        let h_x = p.h[p.awn(x, w, m)];
                        let beta_x = p.beta[p.an(x, m)];
                        let o = &outputs[pid];

                        // Time-derivative adjoints (chain rule back to the
                        // scaled-input tangent).
                        for c in 0..4 {
                            s.tan[pid][c] += rho[c] * self.tscale;
                        }
                        // Direct output dependencies.
                        s.out[pid][1] += rho[1] * gi - rho[3] * gi;
                        s.out[pid][2] += rho[2] * ga - rho[3] * ga;
                        // Through the force of infection.
                        let lam_bar = rho[0] - rho[1] * xi - rho[2] * (1.0 - xi);
                        s.out[pid][0] += lam_bar * beta_x * h_x * pool[m];
                        big_t += lam_bar * beta_x * o[0] * h_x;
                        let _ = lam[xm];
                    }
                    // The pool couples every class's I and A at this node.
                    for y in 0..self.n_ages {
                        let pid = self.pid(ti, y, m);
                        let h_y = p.h[p.awn(y, w, m)];
                        s.out[pid][1] += big_t * h_y * k;
                        s.out[pid][2] += big_t * h_y;
                    }
                }
            }
        }
        Ok(total)
    }

    /// Public value-only data loss (Eq.-style node-averaged squared misfit).
    pub fn data_loss(&self, net: &NetworkParams) -> Result<f64> {
        let outputs = self.eval_outputs(net)?;
        Ok(self.data_loss_terms(&outputs, None))
    }

    /// Public value-only physics loss.
    pub fn physics_loss(&self, net: &NetworkParams) -> Result<f64> {
        let (outputs, derivs) = self.eval_outputs_and_derivs(net)?;
        self.physics_loss_terms(&outputs, &derivs, None)
    }

    fn eval_outputs(&self, net: &NetworkParams) -> Result<Vec<Vec<f64>>> {
        self.inputs.iter().map(|x| net.forward(x)).collect()
    }

    fn eval_outputs_and_derivs(
        &self,
        net: &NetworkParams,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let ti = self.mode.t_index();
        let mut dir = vec![0.0; self.mode.dims()];
        dir[ti] = 1.0;
        let mut outs = Vec::with_capacity(self.inputs.len());
        let mut ders = Vec::with_capacity(self.inputs.len());
        for x in &self.inputs {
            let trace = net.forward_trace(x)?;
            let tan = net.tangent_trace(&trace, &dir);
            outs.push(trace.output().to_vec());
            ders.push(tan.output().to_vec());
        }
        Ok((outs, ders))
    }

    /// Loss components and the exact parameter gradient of
    /// omega_d * L_d + omega_p * L_p.
    pub fn losses_and_gradient(
        &self,
        net: &NetworkParams,
        omega_d: f64,
        omega_p: f64,
    ) -> Result<(f64, f64, Gradient)> {
        let ti = self.mode.t_index();
        let mut dir = vec![0.0; self.mode.dims()];
        dir[ti] = 1.0;

        let traces: Vec<ForwardTrace> = self
            .inputs
            .iter()
            .map(|x| net.forward_trace(x))
            .collect::<Result<Vec<_>>>()?;
        let tangents: Vec<TangentTrace> =
            traces.iter().map(|t| net.tangent_trace(t, &dir)).collect();
        let outputs: Vec<Vec<f64>> = traces.iter().map(|t| t.output().to_vec()).collect();
        let derivs: Vec<Vec<f64>> = tangents.iter().map(|t| t.output().to_vec()).collect();

        let n_out = net.n_outputs();
        let mut data_seeds = Seeds {
            out: vec![vec![0.0; n_out]; outputs.len()],
            tan: vec![vec![0.0; n_out]; outputs.len()],
        };
        let ld = self.data_loss_terms(&outputs, Some(&mut data_seeds));
        let mut phys_seeds = Seeds {
            out: vec![vec![0.0; n_out]; outputs.len()],
            tan: vec![vec![0.0; n_out]; outputs.len()],
        };
        let lp = self.physics_loss_terms(&outputs, &derivs, Some(&mut phys_seeds))?;

        let mut grad = Gradient::zeros_like(net);
        let mut ob = vec![0.0; n_out];
        let mut tb = vec![0.0; n_out];
        for pid in 0..self.inputs.len() {
            let mut any = false;
            for c in 0..n_out {
                ob[c] = omega_d * data_seeds.out[pid][c] + omega_p * phys_seeds.out[pid][c];
                tb[c] = omega_d * data_seeds.tan[pid][c] + omega_p * phys_seeds.tan[pid][c];
                any |= ob[c] != 0.0 || tb[c] != 0.0;
            }
            if any {
                backprop_point(net, &traces[pid], Some(&tangents[pid]), &ob, Some(&tb), &mut grad);
            }
        }
        Ok((ld, lp, grad))
    }
}

/// One loss-history row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub total: f64,
    pub data: f64,
    pub physics: f64,
}

/// Checkpoint plus everything needed to re-evaluate the surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PinnModel {
    #[serde(flatten)]
    pub core: Checkpoint,
    pub mode: InputMode,
    pub z_nodes: Vec<f64>,
    pub node_weights: Vec<f64>,
    pub age_midpoints: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedPinn {
    pub model: PinnModel,
    pub history: Vec<LossRecord>,
    pub train_seconds: f64,
    pub per_epoch_seconds: f64,
}

/// Full-batch Adam on omega_d * L_d + omega_p * L_p.
pub fn train(cfg: &PinnConfig, problem: &PinnProblem, seed: u64) -> Result<TrainedPinn> {
    cfg.validate()?;
    let mut sizes = vec![problem.mode.dims()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(4);
    let mut net = NetworkParams::init(&sizes, cfg.activation, seed)?;
    let mut adam = AdamState::new(&net, cfg.learning_rate);
    let mut history: Vec<LossRecord> = Vec::new();
    let every = cfg.record_every.max(1);

    let started = Instant::now();
    for epoch in 0..cfg.epochs {
        let (ld, lp, grad) = match problem.losses_and_gradient(&net, cfg.omega_d, cfg.omega_p) {
            Ok(v) => v,
            Err(_) => {
                return Err(Error::Divergence {
                    epoch,
                    history: history.iter().map(|r| (r.epoch, r.total)).collect(),
                })
            }
        };
        let total = cfg.omega_d * ld + cfg.omega_p * lp;
        if !total.is_finite() || !grad.is_finite() {
            return Err(Error::Divergence {
                epoch,
                history: history.iter().map(|r| (r.epoch, r.total)).collect(),
            });
        }
        if epoch % every == 0 {
            history.push(LossRecord {
                epoch,
                total,
                data: ld,
                physics: lp,
            });
        }
        adam_step(&mut net, &grad, &mut adam);
    }
    let train_seconds = started.elapsed().as_secs_f64();

    // Closing record at the final parameters.
    let outputs = problem.eval_outputs(&net)?;
    let ld = problem.data_loss_terms(&outputs, None);
    let lp = problem.physics_loss(&net)?;
    history.push(LossRecord {
        epoch: cfg.epochs,
        total: cfg.omega_d * ld + cfg.omega_p * lp,
        data: ld,
        physics: lp,
    });

    let model = PinnModel {
        core: Checkpoint {
            net,
            seed,
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            input_offset: problem.input_offset.clone(),
            input_scale: problem.input_scale.clone(),
            metadata: serde_json::Map::new(),
        },
        mode: problem.mode,
        z_nodes: problem.z_nodes.clone(),
        node_weights: problem.node_weights.clone(),
        age_midpoints: problem.age_midpoints.clone(),
    };
    Ok(TrainedPinn {
        model,
        history,
        train_seconds,
        per_epoch_seconds: if cfg.epochs > 0 {
            train_seconds / cfg.epochs as f64
        } else {
            0.0
        },
    })
}

/// Network surface over (times x ages x nodes) plus its uncertainty mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceSeries {
    pub times: Vec<f64>,
    pub n_ages: usize,
    pub n_nodes: usize,
    /// values[(ti * n_ages + x) * n_nodes + m] = [S, I, A, R].
    pub values: Vec<[f64; 4]>,
    /// mean[ti * n_ages + x] = node-averaged [S, I, A, R].
    pub mean: Vec<[f64; 4]>,
}

impl SurfaceSeries {
    /// Node-mean infected series for one age class.
    pub fn mean_i(&self, age: usize) -> Vec<(f64, f64)> {
        self.times
            .iter()
            .enumerate()
            .map(|(ti, &t)| (t, self.mean[ti * self.n_ages + age][1]))
            .collect()
    }
}

/// Evaluates a trained model at the given raw times.
pub fn predict(model: &PinnModel, times: &[f64]) -> Result<SurfaceSeries> {
    let n_ages = if model.mode.uses_age() {
        model.age_midpoints.len()
    } else {
        1
    };
    let n_nodes = model.z_nodes.len();
    let dims = model.mode.dims();
    let ti = model.mode.t_index();
    let mut values = Vec::with_capacity(times.len() * n_ages * n_nodes);
    for &t in times {
        for x in 0..n_ages {
            for m in 0..n_nodes {
                let mut v = Vec::with_capacity(dims);
                if model.mode.uses_age() {
                    v.push(
                        (model.age_midpoints[x] - model.core.input_offset[0])
                            * model.core.input_scale[0],
                    );
                }
                v.push((t - model.core.input_offset[ti]) * model.core.input_scale[ti]);
                if model.mode.uses_z() {
                    let zi = dims - 1;
                    v.push(
                        (model.z_nodes[m] - model.core.input_offset[zi])
                            * model.core.input_scale[zi],
                    );
                }
                let out = model.core.net.forward(&v)?;
                values.push([out[0], out[1], out[2], out[3]]);
            }
        }
    }
    let mut mean = Vec::with_capacity(times.len() * n_ages);
    for ti_idx in 0..times.len() {
        for x in 0..n_ages {
            let mut acc = [0.0_f64; 4];
            for m in 0..n_nodes {
                let v = values[(ti_idx * n_ages + x) * n_nodes + m];
                for c in 0..4 {
                    acc[c] += v[c] * model.node_weights[m];
                }
            }
            mean.push(acc);
        }
    }
    Ok(SurfaceSeries {
        times: times.to_vec(),
        n_ages,
        n_nodes,
        values,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TimeWindows;

    fn toy_params(n_ages: usize, n_nodes: usize) -> EpiParams {
        let mut p = EpiParams::neutral(n_ages, n_nodes, TimeWindows::single(0.0, 10.0));
        for v in p.beta.iter_mut() {
            *v = 0.4;
        }
        for v in p.xi.iter_mut() {
            *v = 0.3;
        }
        for v in p.h.iter_mut() {
            *v = 0.8;
        }
        p.k = 0.2;
        p
    }

    fn toy_problem(n_nodes: usize, n_times: usize) -> PinnProblem {
        let params = toy_params(1, n_nodes);
        let times: Vec<f64> = (0..n_times).map(|j| j as f64 * 10.0 / (n_times - 1).max(1) as f64).collect();
        let weights = vec![1.0 / n_nodes as f64; n_nodes];
        let z: Vec<f64> = (0..n_nodes).map(|m| 0.2 + 0.5 * m as f64 / n_nodes as f64).collect();
        let targets: Vec<[f64; 4]> = times
            .iter()
            .map(|&t| {
                let d = (-0.05 * t).exp();
                [0.9 * d, 0.01 * t.sin().abs() + 0.002, 0.004, 1.0 - 0.9 * d - 0.006]
            })
            .collect();
        assemble_problem(
            if n_nodes > 1 { InputMode::TZ } else { InputMode::TOnly },
            times,
            targets,
            1,
            n_nodes,
            &params,
            &weights,
            &z,
            &[50.0],
            &PinnConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn data_loss_zero_when_outputs_match_and_collapses_at_m1() {
        let prob = toy_problem(1, 5);
        // Outputs exactly equal to targets -> zero loss.
        let outputs: Vec<Vec<f64>> = (0..prob.inputs.len())
            .map(|pid| {
                let ti = pid; // n_ages = n_nodes = 1
                prob.data_targets[ti].to_vec()
            })
            .collect();
        let ld = prob.data_loss_terms(&outputs, None);
        assert_eq!(ld, 0.0);

        // Hand arithmetic: two points with squared residuals 0.01 and 0.04.
        let mut shifted = outputs.clone();
        shifted[0][1] += 0.1;
        shifted[1][1] -= 0.2;
        let ld = prob.data_loss_terms(&shifted, None);
        approx::assert_abs_diff_eq!(ld, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn constant_outputs_zero_rates_give_zero_physics_loss() {
        let mut prob = toy_problem(2, 4);
        for v in prob.params.beta.iter_mut() {
            *v = 0.0;
        }
        for v in prob.params.gamma_i.iter_mut() {
            *v = 1e-300;
        }
        for v in prob.params.gamma_a.iter_mut() {
            *v = 1e-300;
        }
        let outputs = vec![vec![0.25; 4]; prob.inputs.len()];
        let derivs = vec![vec![0.0; 4]; prob.inputs.len()];
        let lp = prob.physics_loss_terms(&outputs, &derivs, None).unwrap();
        assert!(lp < 1e-120, "physics loss {lp}");
    }

    #[test]
    fn residual_sum_equals_tangent_of_total() {
        // Summing the four residuals cancels every model term, leaving the
        // time derivative of S+I+A+R.
        let prob = toy_problem(1, 3);
        let outputs: Vec<Vec<f64>> = prob
            .inputs
            .iter()
            .map(|x| vec![0.8 + 0.01 * x[0], 0.05, 0.03, 0.12])
            .collect();
        let derivs: Vec<Vec<f64>> = prob
            .inputs
            .iter()
            .map(|_| vec![0.017, -0.004, 0.002, 0.001])
            .collect();
        // Reconstruct residuals by hand through the loss at single points.
        let p = &prob.params;
        for ti in 0..prob.times.len() {
            let w = p.windows.find(prob.times[ti]).unwrap();
            let o = &outputs[ti];
            let g = &derivs[ti];
            let pool = p.h[p.awn(0, w, 0)] * (p.k * o[1] + o[2]);
            let lam = p.beta[0] * o[0] * p.h[p.awn(0, w, 0)] * pool;
            let xi = p.xi[p.awn(0, w, 0)];
            let ts = prob.tscale;
            let r_s = g[0] * ts + lam;
            let r_i = g[1] * ts - xi * lam + p.gamma_i[0] * o[1];
            let r_a = g[2] * ts - (1.0 - xi) * lam + p.gamma_a[0] * o[2];
            let r_r = g[3] * ts - p.gamma_i[0] * o[1] - p.gamma_a[0] * o[2];
            let sum = r_s + r_i + r_a + r_r;
            let want = (g[0] + g[1] + g[2] + g[3]) * ts;
            approx::assert_abs_diff_eq!(sum, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        // Reduced problem: 1 class, M = 2, 10 times, 1-8-8-(4) tanh net.
        let prob = toy_problem(2, 10);
        let sizes = [prob.mode.dims(), 8, 8, 4];
        let net = NetworkParams::init(&sizes, Activation::Tanh, 42).unwrap();
        let (ld, lp, grad) = prob.losses_and_gradient(&net, 1.0, 1.0).unwrap();
        assert!(ld > 0.0 && lp > 0.0);

        let delta = f64::EPSILON.sqrt().sqrt();
        let f = |n: &NetworkParams| -> f64 {
            let ld = prob.data_loss(n).unwrap();
            let lp = prob.physics_loss(n).unwrap();
            ld + lp
        };
        let mut worst = 0.0_f64;
        let scale = grad.max_abs().max(1e-10);
        for l in 0..net.n_layers() {
            for j in 0..net.weights[l].len() {
                let mut a = net.clone();
                a.weights[l][j] += delta;
                let mut b = net.clone();
                b.weights[l][j] -= delta;
                let fd = (f(&a) - f(&b)) / (2.0 * delta);
                worst = worst.max((grad.weights[l][j] - fd).abs() / scale);
            }
            for j in 0..net.biases[l].len() {
                let mut a = net.clone();
                a.biases[l][j] += delta;
                let mut b = net.clone();
                b.biases[l][j] -= delta;
                let fd = (f(&a) - f(&b)) / (2.0 * delta);
                worst = worst.max((grad.biases[l][j] - fd).abs() / scale);
            }
        }
        assert!(worst < 1e-5, "composite gradient error {worst}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let prob = toy_problem(1, 5);
        let cfg = PinnConfig {
            epochs: 0,
            hidden: vec![6, 6],
            ..Default::default()
        };
        let trained = train(&cfg, &prob, 7).unwrap();
        let fresh = NetworkParams::init(&[prob.mode.dims(), 6, 6, 4], Activation::Tanh, 7).unwrap();
        assert_eq!(trained.model.core.net, fresh);
        assert_eq!(trained.history.len(), 1);
    }

    #[test]
    fn data_only_training_shrinks_loss_hundredfold() {
        let prob = toy_problem(1, 5);
        let cfg = PinnConfig {
            omega_p: 0.0,
            epochs: 2000,
            hidden: vec![8, 8],
            record_every: 100,
            ..Default::default()
        };
        let trained = train(&cfg, &prob, 3).unwrap();
        let first = trained.history.first().unwrap().data;
        let last = trained.history.last().unwrap().data;
        assert!(
            last <= first / 100.0,
            "data loss only fell from {first} to {last}"
        );
    }

    #[test]
    fn physics_only_degenerate_case_flattens_time_derivatives() {
        // Zero rates make constants the exact solution, so the derivative
        // magnitudes must shrink.
        let mut prob = toy_problem(1, 8);
        for v in prob.params.beta.iter_mut() {
            *v = 0.0;
        }
        for v in prob.params.gamma_i.iter_mut() {
            *v = 1e-12;
        }
        for v in prob.params.gamma_a.iter_mut() {
            *v = 1e-12;
        }
        let cfg = PinnConfig {
            omega_d: 0.0,
            epochs: 1500,
            hidden: vec![8, 8],
            ..Default::default()
        };
        let sizes = [prob.mode.dims(), 8, 8, 4];
        let fresh = NetworkParams::init(&sizes, Activation::Tanh, 11).unwrap();
        let deriv_mag = |net: &NetworkParams| -> f64 {
            prob.inputs
                .iter()
                .map(|x| {
                    net.input_derivative(x, prob.mode.t_index())
                        .unwrap()
                        .iter()
                        .map(|d| d.abs())
                        .sum::<f64>()
                })
                .sum()
        };
        let before = deriv_mag(&fresh);
        let trained = train(&cfg, &prob, 11).unwrap();
        let after = deriv_mag(&trained.model.core.net);
        assert!(
            after <= before / 10.0,
            "derivatives only fell from {before} to {after}"
        );
    }

    #[test]
    fn loss_decomposition_holds_at_every_record() {
        let prob = toy_problem(2, 6);
        let cfg = PinnConfig {
            omega_d: 0.7,
            omega_p: 1.3,
            epochs: 300,
            hidden: vec![6, 6],
            record_every: 50,
            ..Default::default()
        };
        let trained = train(&cfg, &prob, 5).unwrap();
        for rec in &trained.history {
            assert_eq!(rec.total, 0.7 * rec.data + 1.3 * rec.physics);
        }
    }

    #[test]
    fn predict_mean_equals_weighted_node_average() {
        let prob = toy_problem(3, 4);
        let cfg = PinnConfig {
            epochs: 10,
            hidden: vec![5],
            ..Default::default()
        };
        let trained = train(&cfg, &prob, 1).unwrap();
        let pred = predict(&trained.model, &[0.0, 5.0, 10.0]).unwrap();
        for ti in 0..3 {
            for c in 0..4 {
                let mut acc = 0.0;
                for m in 0..pred.n_nodes {
                    acc += pred.values[(ti * pred.n_ages) * pred.n_nodes + m][c]
                        * trained.model.node_weights[m];
                }
                approx::assert_abs_diff_eq!(acc, pred.mean[ti][c], epsilon = 0.0);
            }
        }
    }
}
