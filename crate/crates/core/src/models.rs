//! Compartmental model right-hand sides over an age-class grid and
//! uncertainty nodes: plain SIR, social SIR with incidence damping, and the
//! social SIAR family (with and without age structure, which share one
//! evaluator since the non-aged model is the single-class case).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{UncertaintyGrid, UncertaintyPairing};

/// One age interval; `lo` is exclusive except for the first class, `hi` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeClass {
    pub lo: f64,
    pub hi: f64,
    pub label: String,
}

/// Ordered, non-overlapping age classes covering (0, 100].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeGrid {
    pub classes: Vec<AgeClass>,
}

impl AgeGrid {
    /// The six age classes the reference dataset is reported in.
    pub fn default_six() -> Self {
        let bounds = [
            (0.0, 18.0, "0-18"),
            (18.0, 24.0, "19-24"),
            (24.0, 49.0, "25-49"),
            (49.0, 64.0, "50-64"),
            (64.0, 74.0, "65-74"),
            (74.0, 100.0, "75+"),
        ];
        AgeGrid {
            classes: bounds
                .iter()
                .map(|&(lo, hi, label)| AgeClass {
                    lo,
                    hi,
                    label: label.to_string(),
                })
                .collect(),
        }
    }

    /// Single aggregate class for the non-aged model variants.
    pub fn single() -> Self {
        AgeGrid {
            classes: vec![AgeClass {
                lo: 0.0,
                hi: 100.0,
                label: "all".to_string(),
            }],
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.label.clone()).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.label == label)
    }

    /// Class midpoints in years, used as the age input of the networks.
    pub fn midpoints(&self) -> Vec<f64> {
        self.classes.iter().map(|c| 0.5 * (c.lo + c.hi)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Model("age grid has no classes".into()));
        }
        if self.classes[0].lo != 0.0 || self.classes.last().unwrap().hi != 100.0 {
            return Err(Error::Model("age classes must cover (0,100]".into()));
        }
        for pair in self.classes.windows(2) {
            if pair[1].lo != pair[0].hi {
                return Err(Error::Model(format!(
                    "age classes {} and {} do not tile",
                    pair[0].label, pair[1].label
                )));
            }
        }
        Ok(())
    }
}

/// Population fractions per (age class, uncertainty node), flattened with
/// node index fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompartmentState {
    pub n_ages: usize,
    pub n_nodes: usize,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub a: Vec<f64>,
    pub r: Vec<f64>,
}

impl CompartmentState {
    pub fn zeros(n_ages: usize, n_nodes: usize) -> Self {
        let len = n_ages * n_nodes;
        CompartmentState {
            n_ages,
            n_nodes,
            s: vec![0.0; len],
            i: vec![0.0; len],
            a: vec![0.0; len],
            r: vec![0.0; len],
        }
    }

    #[inline]
    pub fn idx(&self, age: usize, node: usize) -> usize {
        debug_assert!(age < self.n_ages && node < self.n_nodes);
        age * self.n_nodes + node
    }

    pub fn len(&self) -> usize {
        self.n_ages * self.n_nodes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of the four compartments at one (age, node) slot, in declaration order.
    pub fn total(&self, age: usize, node: usize) -> f64 {
        let j = self.idx(age, node);
        self.s[j] + self.i[j] + self.a[j] + self.r[j]
    }

    pub fn all_finite(&self) -> bool {
        self.s.iter().all(|v| v.is_finite())
            && self.i.iter().all(|v| v.is_finite())
            && self.a.iter().all(|v| v.is_finite())
            && self.r.iter().all(|v| v.is_finite())
    }

    /// Numerical nonnegativity with the allowed slack.
    pub fn validate_nonneg(&self) -> Result<()> {
        let ok = |v: &[f64]| v.iter().all(|&x| x >= -1e-12);
        if ok(&self.s) && ok(&self.i) && ok(&self.a) && ok(&self.r) {
            Ok(())
        } else {
            Err(Error::Model("compartment fraction below -1e-12".into()))
        }
    }

    /// Single-node view of one uncertainty scenario.
    pub fn slice_node(&self, node: usize) -> CompartmentState {
        let pick = |v: &[f64]| -> Vec<f64> {
            (0..self.n_ages).map(|x| v[x * self.n_nodes + node]).collect()
        };
        CompartmentState {
            n_ages: self.n_ages,
            n_nodes: 1,
            s: pick(&self.s),
            i: pick(&self.i),
            a: pick(&self.a),
            r: pick(&self.r),
        }
    }

    /// Reassembles per-node slices (each with n_nodes = 1) into one state.
    pub fn from_node_slices(slices: &[CompartmentState]) -> CompartmentState {
        let n_nodes = slices.len();
        let n_ages = slices[0].n_ages;
        let mut out = CompartmentState::zeros(n_ages, n_nodes);
        for (m, sl) in slices.iter().enumerate() {
            for x in 0..n_ages {
                let j = out.idx(x, m);
                out.s[j] = sl.s[x];
                out.i[j] = sl.i[x];
                out.a[j] = sl.a[x];
                out.r[j] = sl.r[x];
            }
        }
        out
    }

    /// self + c * other, elementwise; shapes must match.
    pub fn axpy(&self, c: f64, other: &CompartmentState) -> CompartmentState {
        debug_assert_eq!(self.len(), other.len());
        let comb = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b.iter()).map(|(x, y)| x + c * y).collect()
        };
        CompartmentState {
            n_ages: self.n_ages,
            n_nodes: self.n_nodes,
            s: comb(&self.s, &other.s),
            i: comb(&self.i, &other.i),
            a: comb(&self.a, &other.a),
            r: comb(&self.r, &other.r),
        }
    }
}

/// Right-open partition of the calibrated time span; the final edge is
/// inclusive so the last simulated instant still has a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeWindows {
    pub edges: Vec<f64>,
}

impl TimeWindows {
    /// Pre-lockdown window [t0, tl) followed by `stride`-day tiles covering
    /// [tl, t_end].
    pub fn from_phases(t0: f64, tl: f64, t_end: f64, stride: f64) -> Result<Self> {
        if !(t0 < tl && tl < t_end) || stride <= 0.0 {
            return Err(Error::Model(format!(
                "bad window phases t0={t0}, tl={tl}, t_end={t_end}, stride={stride}"
            )));
        }
        let mut edges = vec![t0, tl];
        let mut t = tl;
        while t < t_end - 1e-9 {
            t += stride;
            edges.push(t);
        }
        Ok(TimeWindows { edges })
    }

    /// Single window covering [t0, t_end].
    pub fn single(t0: f64, t_end: f64) -> Self {
        TimeWindows {
            edges: vec![t0, t_end],
        }
    }

    pub fn count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn span(&self, w: usize) -> (f64, f64) {
        (self.edges[w], self.edges[w + 1])
    }

    /// Window containing t; errors outside the calibrated span (missing H).
    pub fn find(&self, t: f64) -> Result<usize> {
        let lo = self.edges[0];
        let hi = *self.edges.last().unwrap();
        if t < lo - 1e-9 || t > hi + 1e-9 {
            return Err(Error::Model(format!(
                "time {t} outside calibrated windows [{lo}, {hi}]"
            )));
        }
        let t = t.clamp(lo, hi);
        match self
            .edges
            .binary_search_by(|e| e.partial_cmp(&t).unwrap())
        {
            Ok(j) => Ok(j.min(self.count() - 1)),
            Err(j) => Ok(j - 1),
        }
    }
}

/// All coefficients of the model family. `beta`, recovery rates, `mu`, `nu`
/// are per (age, node); `xi` and `h` are per (age, window, node) and
/// piecewise-constant in time over `windows`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpiParams {
    pub n_ages: usize,
    pub n_nodes: usize,
    pub windows: TimeWindows,
    pub beta: Vec<f64>,
    pub gamma_i: Vec<f64>,
    pub gamma_a: Vec<f64>,
    pub xi: Vec<f64>,
    pub h: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub k: f64,
}

impl EpiParams {
    /// Neutral parameter set: beta 0, gammas 0.1/0.2, xi 1, H 1, mu 1, nu 0.
    pub fn neutral(n_ages: usize, n_nodes: usize, windows: TimeWindows) -> Self {
        let an = n_ages * n_nodes;
        let awn = n_ages * windows.count() * n_nodes;
        EpiParams {
            n_ages,
            n_nodes,
            windows,
            beta: vec![0.0; an],
            gamma_i: vec![0.1; an],
            gamma_a: vec![0.2; an],
            xi: vec![1.0; awn],
            h: vec![1.0; awn],
            mu: vec![1.0; an],
            nu: vec![0.0; an],
            k: 0.1,
        }
    }

    #[inline]
    pub fn an(&self, age: usize, node: usize) -> usize {
        age * self.n_nodes + node
    }

    /// Single-node parameter view for per-node fits.
    pub fn slice_node(&self, node: usize) -> EpiParams {
        let n_w = self.windows.count();
        let pick_an = |v: &[f64]| -> Vec<f64> {
            (0..self.n_ages).map(|x| v[x * self.n_nodes + node]).collect()
        };
        let pick_awn = |v: &[f64]| -> Vec<f64> {
            (0..self.n_ages)
                .flat_map(|x| {
                    (0..n_w).map(move |w| v[(x * n_w + w) * self.n_nodes + node])
                })
                .collect()
        };
        EpiParams {
            n_ages: self.n_ages,
            n_nodes: 1,
            windows: self.windows.clone(),
            beta: pick_an(&self.beta),
            gamma_i: pick_an(&self.gamma_i),
            gamma_a: pick_an(&self.gamma_a),
            xi: pick_awn(&self.xi),
            h: pick_awn(&self.h),
            mu: pick_an(&self.mu),
            nu: pick_an(&self.nu),
            k: self.k,
        }
    }

    #[inline]
    pub fn awn(&self, age: usize, window: usize, node: usize) -> usize {
        (age * self.windows.count() + window) * self.n_nodes + node
    }

    pub fn validate(&self) -> Result<()> {
        let an = self.n_ages * self.n_nodes;
        let awn = self.n_ages * self.windows.count() * self.n_nodes;
        if self.beta.len() != an
            || self.gamma_i.len() != an
            || self.gamma_a.len() != an
            || self.mu.len() != an
            || self.nu.len() != an
            || self.xi.len() != awn
            || self.h.len() != awn
        {
            return Err(Error::Shape("EpiParams field lengths inconsistent".into()));
        }
        if !(0.0..=1.0).contains(&self.k) {
            return Err(Error::Model(format!("k={} outside [0,1]", self.k)));
        }
        if self.xi.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Model("xi outside [0,1]".into()));
        }
        if self.h.iter().any(|&h| h <= 0.0) {
            return Err(Error::Model("H must be positive".into()));
        }
        if self.beta.iter().any(|&b| b < 0.0) {
            return Err(Error::Model("beta must be nonnegative".into()));
        }
        if self.gamma_i.iter().chain(self.gamma_a.iter()).any(|&g| g <= 0.0) {
            return Err(Error::Model("recovery rates must be positive".into()));
        }
        Ok(())
    }
}

/// Contact-damping incidence modifier mu / sqrt(1 + nu r).
pub fn incidence_h(r: f64, mu: f64, nu: f64) -> Result<f64> {
    if r < 0.0 {
        return Err(Error::Model(format!("incidence input r={r} is negative")));
    }
    if mu <= 0.0 || nu <= 0.0 {
        return Err(Error::Model(format!(
            "incidence parameters must be positive, got mu={mu}, nu={nu}"
        )));
    }
    Ok(incidence_raw(r, mu, nu))
}

#[inline]
fn incidence_raw(r: f64, mu: f64, nu: f64) -> f64 {
    mu / (1.0 + nu * r).sqrt()
}

/// Recovery-time coefficients: 1/gamma_I = 5 + 32 z1 below age 50,
/// 5 + 40 z2 above, and gamma_A = 2 gamma_I.
const TVC_INTERCEPT: f64 = 5.0;
const TVC_SLOPE_YOUNG: f64 = 32.0;
const TVC_SLOPE_OLD: f64 = 40.0;

/// Which uncertainty variable drives an age class's recovery rate.
fn gamma_branch(class: &AgeClass) -> Result<bool> {
    // true = young branch (z1). `lo` is exclusive, so lo >= 49 means the
    // youngest age in the class is at least 50. The full-population
    // aggregate class of the non-aged model takes the young branch.
    if class.lo == 0.0 && class.hi == 100.0 {
        Ok(true)
    } else if class.hi <= 50.0 {
        Ok(true)
    } else if class.lo >= 49.0 {
        Ok(false)
    } else {
        Err(Error::Model(format!(
            "age class {} straddles the age-50 recovery split",
            class.label
        )))
    }
}

/// Per-(age, node) recovery rates from paired uncertainty scenarios.
pub fn gammas_for_pairing(
    pairing: &UncertaintyPairing,
    ages: &AgeGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_nodes = pairing.len();
    let mut gamma_i = Vec::with_capacity(ages.len() * n_nodes);
    let mut gamma_a = Vec::with_capacity(ages.len() * n_nodes);
    for class in &ages.classes {
        let young = gamma_branch(class)?;
        for node in &pairing.nodes {
            let tvc = if young {
                TVC_INTERCEPT + TVC_SLOPE_YOUNG * node.z1
            } else {
                TVC_INTERCEPT + TVC_SLOPE_OLD * node.z2
            };
            let gi = 1.0 / tvc;
            gamma_i.push(gi);
            gamma_a.push(2.0 * gi);
        }
    }
    Ok((gamma_i, gamma_a))
}

/// Per-(age, node) recovery rates with the default comonotone pairing of the
/// two Beta-driven grids.
pub fn sample_gammas(
    grid1: &UncertaintyGrid,
    grid2: &UncertaintyGrid,
    ages: &AgeGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let pairing = UncertaintyPairing::comonotone(grid1, grid2)?;
    gammas_for_pairing(&pairing, ages)
}

/// Force of infection per (age, node): beta S H(x) * sum_y H(y) (k I_y + A_y).
pub fn lambda_force(state: &CompartmentState, params: &EpiParams, t: f64) -> Result<Vec<f64>> {
    let w = params.windows.find(t)?;
    let n_ages = state.n_ages;
    let n_nodes = state.n_nodes;
    let mut lambda = vec![0.0; n_ages * n_nodes];
    for m in 0..n_nodes {
        let mut pool = 0.0;
        for y in 0..n_ages {
            let j = state.idx(y, m);
            pool += params.h[params.awn(y, w, m)] * (params.k * state.i[j] + state.a[j]);
        }
        for x in 0..n_ages {
            let j = state.idx(x, m);
            lambda[j] =
                params.beta[params.an(x, m)] * state.s[j] * params.h[params.awn(x, w, m)] * pool;
        }
    }
    Ok(lambda)
}

/// Social SIAR right-hand side. The R derivative is the exact negation of
/// the other three so the declaration-order sum is exactly zero.
pub fn rhs_siar(state: &CompartmentState, params: &EpiParams, t: f64) -> Result<CompartmentState> {
    let w = params.windows.find(t)?;
    let lambda = lambda_force(state, params, t)?;
    let mut d = CompartmentState::zeros(state.n_ages, state.n_nodes);
    for x in 0..state.n_ages {
        for m in 0..state.n_nodes {
            let j = state.idx(x, m);
            let lam = lambda[j];
            let inflow_i = params.xi[params.awn(x, w, m)] * lam;
            let rec_i = params.gamma_i[params.an(x, m)] * state.i[j];
            let rec_a = params.gamma_a[params.an(x, m)] * state.a[j];
            let d_s = -lam;
            let d_i = inflow_i - rec_i;
            let d_a = (lam - inflow_i) - rec_a;
            d.s[j] = d_s;
            d.i[j] = d_i;
            d.a[j] = d_a;
            d.r[j] = -(d_s + d_i + d_a);
        }
    }
    Ok(d)
}

/// SIR right-hand side with the state-dependent incidence modifier; nu = 0
/// and mu = 1 recover the classical constant-rate model.
pub fn rhs_sir(state: &CompartmentState, params: &EpiParams, _t: f64) -> Result<CompartmentState> {
    let mut d = CompartmentState::zeros(state.n_ages, state.n_nodes);
    for x in 0..state.n_ages {
        for m in 0..state.n_nodes {
            let j = state.idx(x, m);
            let an = params.an(x, m);
            let h = incidence_raw(state.i[j], params.mu[an], params.nu[an]);
            let new_inf = params.beta[an] * state.s[j] * state.i[j] * h;
            let rec = params.gamma_i[an] * state.i[j];
            d.s[j] = -new_inf;
            d.i[j] = new_inf - rec;
            d.r[j] = rec;
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{build_grid, BetaSpec};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grids() -> (UncertaintyGrid, UncertaintyGrid) {
        (
            build_grid(BetaSpec::new(2.1, 5.1).unwrap(), 5).unwrap(),
            build_grid(BetaSpec::new(1.8, 3.9).unwrap(), 5).unwrap(),
        )
    }

    #[test]
    fn incidence_closed_forms() {
        assert_abs_diff_eq!(incidence_h(0.0, 0.7, 10.0).unwrap(), 0.7, epsilon = 0.0);
        assert_abs_diff_eq!(incidence_h(1.0, 1.0, 3.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            incidence_h(0.02, 1.0, 50.0).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert!(incidence_h(-0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn incidence_is_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for j in 0..100 {
            let r = j as f64 * 0.013;
            let h = incidence_h(r, 0.8, 12.0).unwrap();
            assert!(h < prev);
            prev = h;
        }
    }

    #[test]
    fn gammas_match_recovery_time_endpoints() {
        let ages = AgeGrid::default_six();
        // z1 = 0 for every node forces gamma_I = 1/5 on young classes.
        let pairing = UncertaintyPairing {
            mode: crate::quadrature::PairingMode::Comonotone,
            nodes: vec![crate::quadrature::ScenarioNode {
                z1: 0.0,
                z2: 0.5,
                weight: 1.0,
            }],
        };
        let (gi, ga) = gammas_for_pairing(&pairing, &ages).unwrap();
        // class 0 = [0,18] young branch, node 0
        assert_abs_diff_eq!(gi[0], 0.2, epsilon = 1e-15);
        // class 4 = (64,74] old branch with z2=0.5: 1/(5+20) = 0.04
        assert_abs_diff_eq!(gi[4], 0.04, epsilon = 1e-15);
        for (a, i) in ga.iter().zip(gi.iter()) {
            assert_abs_diff_eq!(a / i, 2.0, epsilon = 0.0);
        }
    }

    #[test]
    fn gammas_reject_straddling_class() {
        let ages = AgeGrid {
            classes: vec![
                AgeClass {
                    lo: 0.0,
                    hi: 40.0,
                    label: "0-40".into(),
                },
                AgeClass {
                    lo: 40.0,
                    hi: 100.0,
                    label: "41+".into(),
                },
            ],
        };
        let (g1, g2) = grids();
        assert!(sample_gammas(&g1, &g2, &ages).is_err());
    }

    #[test]
    fn gamma_ratio_is_two_on_default_grid() {
        let (g1, g2) = grids();
        let ages = AgeGrid::default_six();
        let (gi, ga) = sample_gammas(&g1, &g2, &ages).unwrap();
        assert_eq!(gi.len(), 30);
        for (a, i) in ga.iter().zip(gi.iter()) {
            assert_abs_diff_eq!(a / i, 2.0, epsilon = 0.0);
        }
    }

    fn single_class_params(beta: f64, k: f64) -> EpiParams {
        let mut p = EpiParams::neutral(1, 1, TimeWindows::single(0.0, 100.0));
        p.beta[0] = beta;
        p.k = k;
        p
    }

    #[test]
    fn lambda_zero_when_beta_zero_or_pool_empty() {
        let mut state = CompartmentState::zeros(1, 1);
        state.s[0] = 0.9;
        state.i[0] = 0.05;
        state.a[0] = 0.05;
        let p = single_class_params(0.0, 0.5);
        assert_eq!(lambda_force(&state, &p, 1.0).unwrap(), vec![0.0]);

        let mut empty = CompartmentState::zeros(1, 1);
        empty.s[0] = 1.0;
        let p2 = single_class_params(0.4, 0.5);
        assert_eq!(lambda_force(&empty, &p2, 1.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn lambda_single_class_substitution() {
        let mut state = CompartmentState::zeros(1, 1);
        state.s[0] = 0.9;
        state.i[0] = 0.05;
        state.a[0] = 0.05;
        let p = single_class_params(0.3, 1.0);
        let lam = lambda_force(&state, &p, 1.0).unwrap();
        assert_abs_diff_eq!(lam[0], 0.3 * 0.9 * (0.05 + 0.05), epsilon = 1e-15);
    }

    #[test]
    fn lambda_errors_outside_windows() {
        let state = CompartmentState::zeros(1, 1);
        let p = single_class_params(0.3, 1.0);
        assert!(lambda_force(&state, &p, 120.0).is_err());
        assert!(lambda_force(&state, &p, -5.0).is_err());
    }

    #[test]
    fn siar_rhs_conserves_exactly_on_random_states() {
        let (g1, g2) = grids();
        let ages = AgeGrid::default_six();
        let (gi, ga) = sample_gammas(&g1, &g2, &ages).unwrap();
        let windows = TimeWindows::from_phases(2.0, 15.0, 105.0, 7.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n_w = windows.count();
        let mut params = EpiParams::neutral(6, 5, windows);
        params.gamma_i = gi;
        params.gamma_a = ga;
        params.k = 0.1;
        for v in params.beta.iter_mut() {
            *v = rng.gen_range(0.0..2.0);
        }
        for v in params.xi.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        for v in params.h.iter_mut() {
            *v = rng.gen_range(0.1..1.5);
        }
        assert_eq!(params.h.len(), 6 * n_w * 5);

        for _ in 0..1000 {
            let mut state = CompartmentState::zeros(6, 5);
            for j in 0..state.len() {
                state.s[j] = rng.gen_range(0.0..0.3);
                state.i[j] = rng.gen_range(0.0..0.02);
                state.a[j] = rng.gen_range(0.0..0.02);
                state.r[j] = rng.gen_range(0.0..0.1);
            }
            let t = rng.gen_range(2.0..105.0);
            let d = rhs_siar(&state, &params, t).unwrap();
            for x in 0..6 {
                for m in 0..5 {
                    let j = d.idx(x, m);
                    let sum = d.s[j] + d.i[j] + d.a[j] + d.r[j];
                    assert_eq!(sum, 0.0, "nonzero rhs sum at ({x},{m})");
                }
            }
        }
    }

    #[test]
    fn siar_pure_decay_and_xi_one() {
        let mut p = single_class_params(0.0, 1.0);
        p.gamma_i[0] = 0.2;
        p.gamma_a[0] = 0.4;
        let mut state = CompartmentState::zeros(1, 1);
        state.i[0] = 0.1;
        state.a[0] = 0.05;
        let d = rhs_siar(&state, &p, 1.0).unwrap();
        assert_abs_diff_eq!(d.i[0], -0.02, epsilon = 1e-16);
        // xi = 1: no asymptomatic inflow even with transmission on
        let mut p2 = single_class_params(0.5, 1.0);
        p2.gamma_a[0] = 0.4;
        let mut st = CompartmentState::zeros(1, 1);
        st.s[0] = 0.9;
        st.i[0] = 0.05;
        st.a[0] = 0.03;
        let d2 = rhs_siar(&st, &p2, 1.0).unwrap();
        assert_abs_diff_eq!(d2.a[0], -0.4 * 0.03, epsilon = 0.0);
    }

    #[test]
    fn sir_substitution_and_equilibrium() {
        let mut p = single_class_params(0.3, 1.0);
        p.gamma_i[0] = 0.1;
        p.mu[0] = 1.0;
        p.nu[0] = 0.0;
        let mut state = CompartmentState::zeros(1, 1);
        state.s[0] = 0.99;
        state.i[0] = 0.01;
        let d = rhs_sir(&state, &p, 0.0).unwrap();
        assert_abs_diff_eq!(d.i[0], 0.3 * 0.99 * 0.01 - 0.001, epsilon = 1e-15);

        let mut disease_free = CompartmentState::zeros(1, 1);
        disease_free.s[0] = 1.0;
        let d0 = rhs_sir(&disease_free, &p, 0.0).unwrap();
        assert_eq!(d0.s[0], 0.0);
        assert_eq!(d0.i[0], 0.0);
        assert_eq!(d0.r[0], 0.0);
    }

    #[test]
    fn sir_decline_when_beta_equals_gamma() {
        let mut p = single_class_params(0.2, 1.0);
        p.gamma_i[0] = 0.2;
        p.mu[0] = 0.9;
        p.nu[0] = 5.0;
        let mut state = CompartmentState::zeros(1, 1);
        state.s[0] = 0.8;
        state.i[0] = 0.1;
        // S*H(I) < 1 here, so infections decline.
        let d = rhs_sir(&state, &p, 0.0).unwrap();
        assert!(d.i[0] <= 0.0);
    }

    #[test]
    fn siar_nests_sir_when_asymptomatics_off() {
        // One class, xi=1, A=0: SIAR restricted to (S,I,R) matches a SIR
        // built with beta' = beta, mu' = H^2 k (constant), nu' = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let beta = rng.gen_range(0.05..1.5);
            let h = rng.gen_range(0.3..1.2);
            let k = rng.gen_range(0.05..1.0);
            let gamma = rng.gen_range(0.05..0.4);

            let mut siar = single_class_params(beta, k);
            siar.gamma_i[0] = gamma;
            siar.gamma_a[0] = 123.0; // arbitrary, inert with A = 0
            siar.h = vec![h];
            siar.xi = vec![1.0];

            let mut sir = single_class_params(beta, k);
            sir.gamma_i[0] = gamma;
            sir.mu[0] = h * h * k;
            sir.nu[0] = 0.0;

            let mut state = CompartmentState::zeros(1, 1);
            state.s[0] = rng.gen_range(0.2..0.95);
            state.i[0] = rng.gen_range(0.0..0.05);
            state.r[0] = rng.gen_range(0.0..0.2);

            let da = rhs_siar(&state, &siar, 1.0).unwrap();
            let db = rhs_sir(&state, &sir, 1.0).unwrap();
            for (x, y) in [(da.s[0], db.s[0]), (da.i[0], db.i[0]), (da.r[0], db.r[0])] {
                let scale = x.abs().max(y.abs()).max(1e-30);
                assert!(
                    (x - y).abs() / scale < 1e-14,
                    "nesting mismatch: {x} vs {y}"
                );
            }
            assert_eq!(da.a[0], 0.0);
        }
    }

    #[test]
    fn windows_partition_and_lookup() {
        let w = TimeWindows::from_phases(2.0, 15.0, 105.0, 7.0).unwrap();
        assert_eq!(w.count(), 14); // phase-1 + 13 weekly tiles
        assert_eq!(w.find(2.0).unwrap(), 0);
        assert_eq!(w.find(14.999).unwrap(), 0);
        assert_eq!(w.find(15.0).unwrap(), 1);
        assert_eq!(w.find(21.999).unwrap(), 1);
        assert_eq!(w.find(22.0).unwrap(), 2);
        assert_eq!(w.find(105.0).unwrap(), 13);
        assert_eq!(w.find(106.0).unwrap(), 13); // final edge inclusive
        assert!(w.find(106.1).is_err());
    }

    #[test]
    fn default_age_grid_is_valid() {
        let g = AgeGrid::default_six();
        g.validate().unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.index_of("50-64"), Some(3));
        AgeGrid::single().validate().unwrap();
    }
}
