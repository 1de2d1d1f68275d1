//! Two-phase calibration of the social-SIAR model against reported data.
//!
//! Phase 1 fits the transmission rate and symptomatic fraction per age class
//! and per uncertainty node on the unrestricted early window with the
//! contact modifier held at one. Phase 2 walks weekly windows over the
//! restricted period, fitting a piecewise-constant contact modifier and
//! symptomatic fraction per window, chaining each window's simulation from
//! the previous window's terminal state.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EpiDataset;
use crate::error::{Error, Result};
use crate::integrator::{integrate, Trajectory};
use crate::models::{
    gammas_for_pairing, rhs_siar, AgeGrid, CompartmentState, EpiParams, TimeWindows,
};
use crate::optim::{nelder_mead, NelderMeadConfig, Transform};
use crate::quadrature::UncertaintyPairing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Siar,
    SiarAged,
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelVariant::Siar => write!(f, "siar"),
            ModelVariant::SiarAged => write!(f, "siar_aged"),
        }
    }
}

/// Everything the fit needs besides the data and the stopping knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSetup {
    pub variant: ModelVariant,
    pub ages: AgeGrid,
    pub pairing: UncertaintyPairing,
    pub k: f64,
    /// Fraction of the total population in each age class; sums to one.
    pub shares: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitConfig {
    /// Infected-vs-recovered weight in the objective.
    pub p: f64,
    pub t0: f64,
    pub t_lockdown: f64,
    pub t_end: f64,
    /// Days a weekly window extends left/right of its center.
    pub k_l: usize,
    pub k_r: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    /// RK4 step used inside the fit simulations.
    pub step_h: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            p: 0.5,
            t0: 2.0,
            t_lockdown: 15.0,
            t_end: 105.0,
            k_l: 3,
            k_r: 4,
            max_iters: 400,
            tol: 1e-9,
            restarts: 2,
            step_h: 0.2,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 < self.t_lockdown && self.t_lockdown < self.t_end) {
            return Err(Error::Calibration(format!(
                "need t0 < t_lockdown < t_end, got {} {} {}",
                self.t0, self.t_lockdown, self.t_end
            )));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Calibration(format!("p={} outside [0,1]", self.p)));
        }
        if self.k_l + self.k_r == 0 {
            return Err(Error::Calibration("window extent k_l + k_r is zero".into()));
        }
        Ok(())
    }

    fn stride(&self) -> f64 {
        (self.k_l + self.k_r) as f64
    }

    fn nm(&self) -> NelderMeadConfig {
        NelderMeadConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            restarts: self.restarts,
            initial_step: 0.5,
        }
    }
}

/// Per-(node, window) fit bookkeeping.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// (node, window) pairs where the data carried no signal.
    pub degenerate: Vec<(usize, usize)>,
    /// (node, window) pairs where xi was pinned at a box bound.
    pub xi_at_bound: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub variant: ModelVariant,
    pub ages: AgeGrid,
    pub pairing: UncertaintyPairing,
    pub shares: Vec<f64>,
    pub fit: FitConfig,
    pub params: EpiParams,
    /// State at t0, built from the data and the fitted symptomatic fractions.
    pub initial_state: CompartmentState,
    /// Phase-1 terminal state at the lockdown boundary; phase-2 chains from it.
    pub state_at_tl: CompartmentState,
    /// Start state of every stored window (index 0 = phase-1 window at t0).
    pub window_start_states: Vec<CompartmentState>,
    /// Per-node objective totals.
    pub objectives: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    pub population: Option<u64>,
}

/// Weighted data-misfit: per age class, p * l2(I - data) + (1-p) * l2(R - data)
/// over the daily samples inside the window, with the simulation linearly
/// interpolated to the data times.
pub fn objective(
    sim: &Trajectory,
    data: &EpiDataset,
    window: (f64, f64),
    p: f64,
    node: usize,
) -> Result<f64> {
    let (ta, tb) = window;
    let days: Vec<f64> = data
        .times()
        .into_iter()
        .filter(|t| *t >= ta - 1e-9 && *t <= tb + 1e-9)
        .collect();
    if days.is_empty() {
        return Err(Error::Calibration(format!(
            "no data days inside fit window [{ta}, {tb}]"
        )));
    }
    let mut total = 0.0;
    for age in 0..data.n_ages() {
        let mut sq_i = 0.0;
        let mut sq_r = 0.0;
        for &t in &days {
            let (di, dr) = data.at(t, age, None)?;
            let st = sim.sample(t)?;
            let j = st.idx(age, node);
            sq_i += (st.i[j] - di) * (st.i[j] - di);
            sq_r += (st.r[j] - dr) * (st.r[j] - dr);
        }
        total += p * sq_i.sqrt() + (1.0 - p) * sq_r.sqrt();
    }
    Ok(total)
}

/// Initial compartments at t0 for one node: observed I and R, the
/// asymptomatic pool from the symptomatic-fraction relation A = (1-xi)/xi I,
/// and S as the class share minus the rest.
fn build_initial_state(
    data: &EpiDataset,
    t0: f64,
    shares: &[f64],
    xi_per_age: &[f64],
) -> Result<CompartmentState> {
    let n_ages = shares.len();
    let mut st = CompartmentState::zeros(n_ages, 1);
    for x in 0..n_ages {
        let (i0, r0) = data.at(t0, x, None)?;
        let xi = xi_per_age[x].clamp(1e-6, 1.0);
        let a0 = (1.0 - xi) / xi * i0;
        st.i[x] = i0;
        st.a[x] = a0;
        st.r[x] = r0;
        st.s[x] = shares[x] - i0 - a0 - r0;
    }
    Ok(st)
}

/// Penalized objective value used inside the optimizer loops.
const BAD_FIT: f64 = 1e9;

struct NodeFit {
    beta: Vec<f64>,
    xi: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    degenerate: bool,
}

/// Phase 1: per node, fit beta and xi per age class on [t0, t_lockdown]
/// with the contact modifier held at one.
pub fn fit_phase1(
    data: &EpiDataset,
    setup: &CalibrationSetup,
    cfg: &FitConfig,
) -> Result<CalibrationResult> {
    cfg.validate()?;
    setup.ages.validate()?;
    let n_ages = setup.ages.len();
    if data.n_ages() != n_ages {
        return Err(Error::Calibration(format!(
            "data has {} classes, setup expects {}",
            data.n_ages(),
            n_ages
        )));
    }
    if setup.shares.len() != n_ages {
        return Err(Error::Calibration("population shares shape mismatch".into()));
    }
    let n_nodes = setup.pairing.len();
    let (gamma_i_all, gamma_a_all) = gammas_for_pairing(&setup.pairing, &setup.ages)?;

    // Unidentifiable disease-free data: every class flat at zero.
    let window_data = data.window(cfg.t0, cfg.t_lockdown);
    let degenerate_all = window_data
        .records
        .iter()
        .all(|r| r.i == 0.0 && r.r == 0.0);

    let fits: Vec<NodeFit> = (0..n_nodes)
        .into_par_iter()
        .map(|m| {
            let gamma_i: Vec<f64> = (0..n_ages).map(|x| gamma_i_all[x * n_nodes + m]).collect();
            let gamma_a: Vec<f64> = (0..n_ages).map(|x| gamma_a_all[x * n_nodes + m]).collect();
            fit_phase1_node(data, setup, cfg, &gamma_i, &gamma_a, degenerate_all)
        })
        .collect::<Result<Vec<_>>>()?;

    // Assemble the full parameter set over the complete window partition.
    let windows = TimeWindows::from_phases(cfg.t0, cfg.t_lockdown, cfg.t_end, cfg.stride())?;
    let n_w = windows.count();
    let mut params = EpiParams::neutral(n_ages, n_nodes, windows);
    params.k = setup.k;
    for x in 0..n_ages {
        for m in 0..n_nodes {
            let j = params.an(x, m);
            params.beta[j] = fits[m].beta[x];
            params.gamma_i[j] = gamma_i_all[x * n_nodes + m];
            params.gamma_a[j] = gamma_a_all[x * n_nodes + m];
            for w in 0..n_w {
                let jw = params.awn(x, w, m);
                params.xi[jw] = fits[m].xi[x];
                params.h[jw] = 1.0;
            }
        }
    }
    params.validate()?;

    let node_states: Vec<CompartmentState> = (0..n_nodes)
        .map(|m| build_initial_state(data, cfg.t0, &setup.shares, &fits[m].xi))
        .collect::<Result<Vec<_>>>()?;
    let initial_state = CompartmentState::from_node_slices(&node_states);

    let phase1_traj = integrate(
        |s, t| rhs_siar(s, &params, t),
        &initial_state,
        cfg.t0,
        cfg.t_lockdown,
        cfg.step_h,
    )?;
    let state_at_tl = phase1_traj.last_state().clone();

    let mut diagnostics = FitDiagnostics::default();
    for (m, f) in fits.iter().enumerate() {
        diagnostics.iterations.push(f.iterations);
        diagnostics.converged.push(f.converged);
        if f.degenerate {
            diagnostics.degenerate.push((m, 0));
        }
    }

    Ok(CalibrationResult {
        variant: setup.variant,
        ages: setup.ages.clone(),
        pairing: setup.pairing.clone(),
        shares: setup.shares.clone(),
        fit: *cfg,
        params,
        window_start_states: vec![initial_state.clone(), state_at_tl.clone()],
        initial_state,
        state_at_tl,
        objectives: fits.iter().map(|f| f.objective).collect(),
        diagnostics,
        population: data.population,
    })
}

fn fit_phase1_node(
    data: &EpiDataset,
    setup: &CalibrationSetup,
    cfg: &FitConfig,
    gamma_i: &[f64],
    gamma_a: &[f64],
    degenerate: bool,
) -> Result<NodeFit> {
    let n_ages = setup.ages.len();
    if degenerate {
        return Ok(NodeFit {
            beta: vec![0.0; n_ages],
            xi: vec![0.5; n_ages],
            objective: 0.0,
            iterations: 0,
            converged: true,
            degenerate: true,
        });
    }

    let windows = TimeWindows::single(cfg.t0, cfg.t_lockdown);
    let mut base = EpiParams::neutral(n_ages, 1, windows);
    base.k = setup.k;
    base.gamma_i = gamma_i.to_vec();
    base.gamma_a = gamma_a.to_vec();

    let eval = |u: &[f64]| -> f64 {
        let beta: Vec<f64> = u[..n_ages]
            .iter()
            .map(|&v| Transform::Softplus.to_bounded(v))
            .collect();
        let xi: Vec<f64> = u[n_ages..]
            .iter()
            .map(|&v| Transform::Logistic.to_bounded(v))
            .collect();
        let mut p = base.clone();
        p.beta = beta;
        p.xi = xi.clone();
        let init = match build_initial_state(data, cfg.t0, &setup.shares, &xi) {
            Ok(s) => s,
            Err(_) => return BAD_FIT,
        };
        if init.s.iter().any(|&s| s < 0.0) {
            return BAD_FIT * (1.0 + init.s.iter().map(|s| s.min(0.0).abs()).sum::<f64>());
        }
        let traj = match integrate(
            |s, t| rhs_siar(s, &p, t),
            &init,
            cfg.t0,
            cfg.t_lockdown,
            cfg.step_h,
        ) {
            Ok(t) => t,
            Err(_) => return BAD_FIT,
        };
        match objective(&traj, data, (cfg.t0, cfg.t_lockdown), cfg.p, 0) {
            Ok(v) if v.is_finite() => v,
            _ => BAD_FIT,
        }
    };

    let mut u0 = Vec::with_capacity(2 * n_ages);
    for _ in 0..n_ages {
        u0.push(Transform::Softplus.to_unbounded(0.3));
    }
    for _ in 0..n_ages {
        u0.push(Transform::Logistic.to_unbounded(0.3));
    }
    let res = nelder_mead(eval, &u0, &cfg.nm());
    Ok(NodeFit {
        beta: res.x[..n_ages]
            .iter()
            .map(|&v| Transform::Softplus.to_bounded(v))
            .collect(),
        xi: res.x[n_ages..]
            .iter()
            .map(|&v| Transform::Logistic.to_bounded(v))
            .collect(),
        objective: res.value,
        iterations: res.iterations,
        converged: res.converged,
        degenerate: false,
    })
}

struct NodeWindowFit {
    h: Vec<Vec<f64>>,
    xi: Vec<Vec<f64>>,
    chain: Vec<CompartmentState>,
    objective: f64,
    iterations: usize,
    converged_all: bool,
    degenerate: Vec<usize>,
    xi_at_bound: Vec<usize>,
}

/// Phase 2: weekly windows over [t_lockdown, t_end]; per node and window,
/// fit the contact modifier and symptomatic fraction per age class, chaining
/// initial conditions window to window.
pub fn fit_phase2(
    data: &EpiDataset,
    phase1: &CalibrationResult,
    cfg: &FitConfig,
) -> Result<CalibrationResult> {
    cfg.validate()?;
    let n_ages = phase1.ages.len();
    let n_nodes = phase1.params.n_nodes;
    let n_w = phase1.params.windows.count();
    let (_, data_end) = data.time_span();

    let fits: Vec<NodeWindowFit> = (0..n_nodes)
        .into_par_iter()
        .map(|m| fit_phase2_node(data, phase1, cfg, m, data_end))
        .collect::<Result<Vec<_>>>()?;

    let mut out = phase1.clone();
    for (m, f) in fits.iter().enumerate() {
        for w in 1..n_w {
            for x in 0..n_ages {
                let j = out.params.awn(x, w, m);
                out.params.h[j] = f.h[w - 1][x];
                out.params.xi[j] = f.xi[w - 1][x];
            }
        }
        out.objectives[m] += f.objective;
        out.diagnostics.iterations.push(f.iterations);
        out.diagnostics.converged.push(f.converged_all);
        for &w in &f.degenerate {
            out.diagnostics.degenerate.push((m, w));
        }
        for &w in &f.xi_at_bound {
            out.diagnostics.xi_at_bound.push((m, w));
        }
    }
    out.params.validate()?;

    // Window start states: index w holds the chain state at edges[w].
    out.window_start_states = vec![out.initial_state.clone(), out.state_at_tl.clone()];
    for w in 2..n_w {
        let slices: Vec<CompartmentState> =
            fits.iter().map(|f| f.chain[w - 2].clone()).collect();
        out.window_start_states
            .push(CompartmentState::from_node_slices(&slices));
    }
    Ok(out)
}

fn fit_phase2_node(
    data: &EpiDataset,
    phase1: &CalibrationResult,
    cfg: &FitConfig,
    node: usize,
    data_end: f64,
) -> Result<NodeWindowFit> {
    let n_ages = phase1.ages.len();
    let windows = phase1.params.windows.clone();
    let n_w = windows.count();
    let node_params = phase1.params.slice_node(node);

    let mut state = phase1.state_at_tl.slice_node(node);
    let mut h_prev = vec![1.0; n_ages];
    let mut xi_prev: Vec<f64> = (0..n_ages)
        .map(|x| node_params.xi[node_params.awn(x, 0, 0)])
        .collect();

    let mut result = NodeWindowFit {
        h: Vec::new(),
        xi: Vec::new(),
        chain: Vec::new(),
        objective: 0.0,
        iterations: 0,
        converged_all: true,
        degenerate: Vec::new(),
        xi_at_bound: Vec::new(),
    };

    for w in 1..n_w {
        let (a, b) = windows.span(w);
        let sim_end = b.min(cfg.t_end);
        let fit_end = b.min(data_end);

        // No signal: neither the data nor the sim carry infections here.
        let win_data = data.window(a, fit_end);
        let no_signal = win_data.records.iter().all(|r| r.i.abs() < 1e-15)
            && state.i.iter().all(|&v| v.abs() < 1e-15);

        let (h_fit, xi_fit, obj, iters, conv) = if no_signal {
            result.degenerate.push(w);
            (h_prev.clone(), xi_prev.clone(), 0.0, 0, true)
        } else {
            let eval = |u: &[f64]| -> f64 {
                let h: Vec<f64> = u[..n_ages]
                    .iter()
                    .map(|&v| Transform::Softplus.to_bounded(v))
                    .collect();
                let xi: Vec<f64> = u[n_ages..]
                    .iter()
                    .map(|&v| Transform::Logistic.to_bounded(v))
                    .collect();
                let p = window_params(&node_params, (a, sim_end), &h, &xi);
                let traj = match integrate(
                    |s, t| rhs_siar(s, &p, t),
                    &state,
                    a,
                    sim_end,
                    cfg.step_h,
                ) {
                    Ok(t) => t,
                    Err(_) => return BAD_FIT,
                };
                match objective(&traj, data, (a, fit_end), cfg.p, 0) {
                    Ok(v) if v.is_finite() => v,
                    _ => BAD_FIT,
                }
            };
            let mut u0 = Vec::with_capacity(2 * n_ages);
            for &h in &h_prev {
                u0.push(Transform::Softplus.to_unbounded(h));
            }
            for &x in &xi_prev {
                u0.push(Transform::Logistic.to_unbounded(x));
            }
            let res = nelder_mead(eval, &u0, &cfg.nm());
            let h: Vec<f64> = res.x[..n_ages]
                .iter()
                .map(|&v| Transform::Softplus.to_bounded(v))
                .collect();
            let xi: Vec<f64> = res.x[n_ages..]
                .iter()
                .map(|&v| Transform::Logistic.to_bounded(v))
                .collect();
            (h, xi, res.value, res.iterations, res.converged)
        };

        if xi_fit.iter().any(|&x| x >= 0.999 || x <= 1e-3) {
            result.xi_at_bound.push(w);
        }

        // Re-simulate with the fitted values to chain the next window.
        let p = window_params(&node_params, (a, sim_end), &h_fit, &xi_fit);
        let traj = integrate(|s, t| rhs_siar(s, &p, t), &state, a, sim_end, cfg.step_h)?;
        state = traj.last_state().clone();

        result.objective += obj;
        result.iterations += iters;
        result.converged_all &= conv;
        result.h.push(h_fit.clone());
        result.xi.push(xi_fit.clone());
        if w + 1 < n_w {
            result.chain.push(state.clone());
        }
        h_prev = h_fit;
        xi_prev = xi_fit;
    }
    Ok(result)
}

/// Self-contained single-window params for one fit window: the candidate H
/// and xi hold over the whole [a, b] span, so the RK4 stage landing exactly
/// on the right edge reads this window's values rather than the (not yet
/// fitted) next one.
fn window_params(base: &EpiParams, span: (f64, f64), h: &[f64], xi: &[f64]) -> EpiParams {
    let mut p = EpiParams::neutral(base.n_ages, 1, TimeWindows::single(span.0, span.1));
    p.k = base.k;
    p.beta = base.beta.clone();
    p.gamma_i = base.gamma_i.clone();
    p.gamma_a = base.gamma_a.clone();
    p.mu = base.mu.clone();
    p.nu = base.nu.clone();
    p.h = h.to_vec();
    p.xi = xi.to_vec();
    p
}

impl CalibrationResult {
    /// Node-averaged parameters (single fictitious node at the weighted
    /// means), used by networks trained on real data.
    pub fn mean_params(&self) -> EpiParams {
        let weights = self.pairing.weights();
        let p = &self.params;
        let n_ages = p.n_ages;
        let n_w = p.windows.count();
        fn avg_an(v: &[f64], n_ages: usize, n_nodes: usize, w: &[f64]) -> Vec<f64> {
            (0..n_ages)
                .map(|x| (0..n_nodes).map(|m| v[x * n_nodes + m] * w[m]).sum())
                .collect()
        }
        fn avg_awn(v: &[f64], n_ages: usize, n_w: usize, n_nodes: usize, w: &[f64]) -> Vec<f64> {
            let mut out = Vec::with_capacity(n_ages * n_w);
            for x in 0..n_ages {
                for win in 0..n_w {
                    out.push(
                        (0..n_nodes)
                            .map(|m| v[(x * n_w + win) * n_nodes + m] * w[m])
                            .sum(),
                    );
                }
            }
            out
        }
        EpiParams {
            n_ages,
            n_nodes: 1,
            windows: p.windows.clone(),
            beta: avg_an(&p.beta, n_ages, p.n_nodes, &weights),
            gamma_i: avg_an(&p.gamma_i, n_ages, p.n_nodes, &weights),
            gamma_a: avg_an(&p.gamma_a, n_ages, p.n_nodes, &weights),
            xi: avg_awn(&p.xi, n_ages, n_w, p.n_nodes, &weights),
            h: avg_awn(&p.h, n_ages, n_w, p.n_nodes, &weights),
            mu: avg_an(&p.mu, n_ages, p.n_nodes, &weights),
            nu: avg_an(&p.nu, n_ages, p.n_nodes, &weights),
            k: p.k,
        }
    }

    /// Weighted mean xi at time t per age class.
    pub fn mean_xi_at(&self, t: f64) -> Result<Vec<f64>> {
        let w = self.params.windows.find(t)?;
        let weights = self.pairing.weights();
        Ok((0..self.params.n_ages)
            .map(|x| {
                (0..self.params.n_nodes)
                    .map(|m| self.params.xi[self.params.awn(x, w, m)] * weights[m])
                    .sum()
            })
            .collect())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let doc = CalibrationDoc::from_result(self);
        let body = serde_json::to_string_pretty(&doc)?;
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_json(path: &Path) -> Result<CalibrationResult> {
        let body =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let doc: CalibrationDoc = serde_json::from_str(&body)?;
        doc.into_result()
    }
}

/// On-disk schema: per node, per age class, the fitted coefficients with
/// their window series.
#[derive(Debug, Serialize, Deserialize)]
struct ClassDoc {
    age_class: String,
    beta: f64,
    gamma_i: f64,
    gamma_a: f64,
    xi_windows: Vec<f64>,
    h_windows: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeDoc {
    z1: f64,
    z2: f64,
    weight: f64,
    classes: Vec<ClassDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationDoc {
    variant: ModelVariant,
    k: f64,
    fit: FitConfig,
    age_classes: Vec<crate::models::AgeClass>,
    population_shares: Vec<f64>,
    pairing_mode: crate::quadrature::PairingMode,
    window_edges: Vec<f64>,
    nodes: Vec<NodeDoc>,
    initial_state: CompartmentState,
    state_at_lockdown: CompartmentState,
    window_start_states: Vec<CompartmentState>,
    objectives: Vec<f64>,
    diagnostics: FitDiagnostics,
    population: Option<u64>,
}

impl CalibrationDoc {
    fn from_result(r: &CalibrationResult) -> Self {
        let p = &r.params;
        let n_w = p.windows.count();
        let nodes = r
            .pairing
            .nodes
            .iter()
            .enumerate()
            .map(|(m, sc)| NodeDoc {
                z1: sc.z1,
                z2: sc.z2,
                weight: sc.weight,
                classes: r
                    .ages
                    .classes
                    .iter()
                    .enumerate()
                    .map(|(x, c)| ClassDoc {
                        age_class: c.label.clone(),
                        beta: p.beta[p.an(x, m)],
                        gamma_i: p.gamma_i[p.an(x, m)],
                        gamma_a: p.gamma_a[p.an(x, m)],
                        xi_windows: (0..n_w).map(|w| p.xi[p.awn(x, w, m)]).collect(),
                        h_windows: (0..n_w).map(|w| p.h[p.awn(x, w, m)]).collect(),
                    })
                    .collect(),
            })
            .collect();
        CalibrationDoc {
            variant: r.variant,
            k: p.k,
            fit: r.fit,
            age_classes: r.ages.classes.clone(),
            population_shares: r.shares.clone(),
            pairing_mode: r.pairing.mode,
            window_edges: p.windows.edges.clone(),
            nodes,
            initial_state: r.initial_state.clone(),
            state_at_lockdown: r.state_at_tl.clone(),
            window_start_states: r.window_start_states.clone(),
            objectives: r.objectives.clone(),
            diagnostics: r.diagnostics.clone(),
            population: r.population,
        }
    }

    fn into_result(self) -> Result<CalibrationResult> {
        let n_ages = self.age_classes.len();
        let n_nodes = self.nodes.len();
        let windows = TimeWindows {
            edges: self.window_edges,
        };
        let n_w = windows.count();
        let mut params = EpiParams::neutral(n_ages, n_nodes, windows);
        params.k = self.k;
        for (m, node) in self.nodes.iter().enumerate() {
            if node.classes.len() != n_ages {
                return Err(Error::Calibration("node class count mismatch".into()));
            }
            for (x, c) in node.classes.iter().enumerate() {
                let j = params.an(x, m);
                params.beta[j] = c.beta;
                params.gamma_i[j] = c.gamma_i;
                params.gamma_a[j] = c.gamma_a;
                if c.xi_windows.len() != n_w || c.h_windows.len() != n_w {
                    return Err(Error::Calibration("window series length mismatch".into()));
                }
                for w in 0..n_w {
                    let jw = params.awn(x, w, m);
                    params.xi[jw] = c.xi_windows[w];
                    params.h[jw] = c.h_windows[w];
                }
            }
        }
        params.validate()?;
        let pairing = UncertaintyPairing {
            mode: self.pairing_mode,
            nodes: self
                .nodes
                .iter()
                .map(|n| crate::quadrature::ScenarioNode {
                    z1: n.z1,
                    z2: n.z2,
                    weight: n.weight,
                })
                .collect(),
        };
        Ok(CalibrationResult {
            variant: self.variant,
            ages: AgeGrid {
                classes: self.age_classes,
            },
            pairing,
            shares: self.population_shares,
            fit: self.fit,
            params,
            initial_state: self.initial_state,
            state_at_tl: self.state_at_lockdown,
            window_start_states: self.window_start_states,
            objectives: self.objectives,
            diagnostics: self.diagnostics,
            population: self.population,
        })
    }
}
