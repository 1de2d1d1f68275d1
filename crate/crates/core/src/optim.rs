//! Derivative-free minimization: Nelder-Mead on an unbounded reparametrized
//! space, with logistic/softplus transforms carrying box constraints.

use serde::{Deserialize, Serialize};

/// Maps one coordinate between its bounded domain and the real line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Domain [0,1] via the logistic function.
    Logistic,
    /// Domain (0, inf) via softplus.
    Softplus,
    /// No constraint.
    Identity,
}

impl Transform {
    pub fn to_bounded(&self, u: f64) -> f64 {
        match self {
            Transform::Logistic => 1.0 / (1.0 + (-u).exp()),
            Transform::Softplus => {
                if u > 30.0 {
                    u
                } else {
                    u.exp().ln_1p()
                }
            }
            Transform::Identity => u,
        }
    }

    pub fn to_unbounded(&self, v: f64) -> f64 {
        match self {
            Transform::Logistic => {
                let v = v.clamp(1e-9, 1.0 - 1e-9);
                (v / (1.0 - v)).ln()
            }
            Transform::Softplus => {
                let v = v.max(1e-12);
                if v > 30.0 {
                    v
                } else {
                    // inverse of ln(1+e^u)
                    (v.exp() - 1.0).max(1e-300).ln()
                }
            }
            Transform::Identity => v,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NelderMeadConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            max_iters: 400,
            tol: 1e-9,
            restarts: 2,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    /// Arg-min in the caller's (unbounded) coordinates.
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective after each accepted iteration; non-increasing.
    pub best_history: Vec<f64>,
}

/// Nelder-Mead with restarts. The objective is called on unbounded
/// coordinates; callers bake transforms into the closure.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], cfg: &NelderMeadConfig) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let mut best_x = x0.to_vec();
    let mut best_val = f(&best_x);
    let mut total_iters = 0;
    let mut converged = false;
    let mut history = vec![best_val];
    let mut step = cfg.initial_step;

    for _round in 0..=cfg.restarts {
        let res = nm_round(&mut f, &best_x, step, cfg, &mut history);
        total_iters += res.iterations;
        if res.value < best_val {
            best_val = res.value;
            best_x = res.x;
        }
        converged = res.converged;
        step *= 0.25;
        if converged && _round >= 1 {
            break;
        }
    }

    OptimResult {
        x: best_x,
        value: best_val,
        iterations: total_iters,
        converged,
        best_history: history,
    }
}

fn nm_round<F>(
    f: &mut F,
    x0: &[f64],
    step: f64,
    cfg: &NelderMeadConfig,
    history: &mut Vec<f64>,
) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for j in 0..n {
        let mut p = x0.to_vec();
        p[j] += step;
        let v = f(&p);
        simplex.push((p, v));
    }

    let mut iters = 0;
    let mut converged = false;
    while iters < cfg.max_iters {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let best = simplex[0].1;
        let worst = simplex[n].1;
        history.push(best.min(*history.last().unwrap()));
        if (worst - best).abs() <= cfg.tol * (best.abs() + cfg.tol) {
            converged = true;
            break;
        }
        iters += 1;

        // Centroid of all but the worst point.
        let mut centroid = vec![0.0; n];
        for (p, _) in simplex.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(p.iter()) {
                *c += x / n as f64;
            }
        }

        let at = |c: &[f64], d: f64, w: &[f64]| -> Vec<f64> {
            c.iter().zip(w.iter()).map(|(ci, wi)| ci + d * (ci - wi)).collect()
        };
        let xr = at(&centroid, alpha, &simplex[n].0);
        let fr = f(&xr);

        if fr < simplex[0].1 {
            let xe = at(&centroid, gamma, &simplex[n].0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let x = at(&centroid, rho, &simplex[n].0);
                let v = f(&x);
                (x, v)
            } else {
                let x: Vec<f64> = centroid
                    .iter()
                    .zip(simplex[n].0.iter())
                    .map(|(c, w)| c - rho * (c - w))
                    .collect();
                let v = f(&x);
                (x, v)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                // Shrink toward the best vertex.
                let best_p = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let p: Vec<f64> = best_p
                        .iter()
                        .zip(entry.0.iter())
                        .map(|(b, x)| b + sigma * (x - b))
                        .collect();
                    let v = f(&p);
                    *entry = (p, v);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    history.push(simplex[0].1.min(*history.last().unwrap()));
    OptimResult {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        iterations: iters,
        converged,
        best_history: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_bowl() {
        let res = nelder_mead(
            |x| (x[0] - 1.5).powi(2) + (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            &NelderMeadConfig::default(),
        );
        assert_abs_diff_eq!(res.x[0], 1.5, epsilon = 1e-4);
        assert_abs_diff_eq!(res.x[1], -0.5, epsilon = 1e-4);
        assert!(res.converged);
    }

    #[test]
    fn rosenbrock_2d() {
        let cfg = NelderMeadConfig {
            max_iters: 2000,
            ..Default::default()
        };
        let res = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &cfg,
        );
        assert!(res.value < 1e-8, "rosenbrock value {}", res.value);
    }

    #[test]
    fn best_history_non_increasing() {
        let res = nelder_mead(
            |x| x[0].sin() + x[0] * x[0] * 0.1,
            &[3.0],
            &NelderMeadConfig::default(),
        );
        for w in res.best_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn transforms_round_trip_and_stay_in_domain() {
        for &v in &[1e-6, 0.3, 0.5, 0.999] {
            let u = Transform::Logistic.to_unbounded(v);
            assert_abs_diff_eq!(Transform::Logistic.to_bounded(u), v, epsilon = 1e-9);
        }
        for &v in &[1e-6, 0.1, 1.0, 17.0, 80.0] {
            let u = Transform::Softplus.to_unbounded(v);
            assert_abs_diff_eq!(Transform::Softplus.to_bounded(u) / v, 1.0, epsilon = 1e-9);
        }
        // Bounded values never escape their domains.
        for &u in &[-50.0, -3.0, 0.0, 3.0, 50.0] {
            let l = Transform::Logistic.to_bounded(u);
            assert!((0.0..=1.0).contains(&l));
            assert!(Transform::Softplus.to_bounded(u) > 0.0);
        }
    }

    #[test]
    fn bounded_fit_recovers_target_inside_box() {
        // Minimize over (xi in [0,1], beta > 0) with truth (0.25, 0.35).
        let f = |u: &[f64]| {
            let xi = Transform::Logistic.to_bounded(u[0]);
            let beta = Transform::Softplus.to_bounded(u[1]);
            (xi - 0.25).powi(2) + (beta - 0.35).powi(2)
        };
        let x0 = [
            Transform::Logistic.to_unbounded(0.5),
            Transform::Softplus.to_unbounded(1.0),
        ];
        let res = nelder_mead(f, &x0, &NelderMeadConfig::default());
        let xi = Transform::Logistic.to_bounded(res.x[0]);
        let beta = Transform::Softplus.to_bounded(res.x[1]);
        assert_abs_diff_eq!(xi, 0.25, epsilon = 1e-4);
        assert_abs_diff_eq!(beta, 0.35, epsilon = 1e-4);
    }
}
