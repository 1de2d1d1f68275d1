//! Fixed-step classical Runge-Kutta-4 integration of a model right-hand side.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{AgeGrid, CompartmentState};

/// Dense trajectory: one stored state per step, including both endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CompartmentState>,
    pub step: f64,
}

impl Trajectory {
    pub fn last_state(&self) -> &CompartmentState {
        self.states.last().expect("trajectory never empty")
    }

    /// State linearly interpolated to time t.
    pub fn sample(&self, t: f64) -> Result<CompartmentState> {
        let t0 = self.times[0];
        let t1 = *self.times.last().unwrap();
        if t < t0 - 1e-9 || t > t1 + 1e-9 {
            return Err(Error::Model(format!(
                "sample time {t} outside trajectory span [{t0}, {t1}]"
            )));
        }
        let t = t.clamp(t0, t1);
        let pos = self
            .times
            .partition_point(|&x| x <= t)
            .min(self.times.len() - 1);
        if pos == 0 {
            return Ok(self.states[0].clone());
        }
        let (ta, tb) = (self.times[pos - 1], self.times[pos]);
        let frac = if tb > ta { (t - ta) / (tb - ta) } else { 0.0 };
        Ok(lerp(&self.states[pos - 1], &self.states[pos], frac))
    }

    /// CSV dump with columns t, age_class, node_index, S, I, A, R.
    pub fn write_csv(&self, path: &Path, ages: &AgeGrid) -> Result<()> {
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
        );
        let werr = |e: std::io::Error| Error::io(path.display().to_string(), e);
        writeln!(out, "t,age_class,node,S,I,A,R").map_err(werr)?;
        for (t, state) in self.times.iter().zip(self.states.iter()) {
            for age in 0..state.n_ages {
                for node in 0..state.n_nodes {
                    let j = state.idx(age, node);
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        t,
                        ages.classes[age].label,
                        node,
                        state.s[j],
                        state.i[j],
                        state.a[j],
                        state.r[j]
                    )
                    .map_err(werr)?;
                }
            }
        }
        Ok(())
    }
}

/// Linear interpolation between two states.
fn lerp(lo: &CompartmentState, hi: &CompartmentState, frac: f64) -> CompartmentState {
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x + frac * (y - x))
            .collect()
    };
    CompartmentState {
        n_ages: lo.n_ages,
        n_nodes: lo.n_nodes,
        s: mix(&lo.s, &hi.s),
        i: mix(&lo.i, &hi.i),
        a: mix(&lo.a, &hi.a),
        r: mix(&lo.r, &hi.r),
    }
}

/// Number of uniform samples on [ta, tb] at spacing h, inclusive of both
/// ends, with a rounding guard so 90/0.2 counts as 450 steps.
pub fn grid_len(ta: f64, tb: f64, h: f64) -> usize {
    ((tb - ta) / h + 1e-9).floor() as usize + 1
}

/// Classical RK4 with a fixed step; the last step is shortened to land
/// exactly on t_end when the span is not an integer number of steps.
pub fn integrate<F>(
    rhs: F,
    initial: &CompartmentState,
    t0: f64,
    t_end: f64,
    h: f64,
) -> Result<Trajectory>
where
    F: Fn(&CompartmentState, f64) -> Result<CompartmentState>,
{
    if !(t_end > t0) {
        return Err(Error::Model(format!("t_end={t_end} must exceed t0={t0}")));
    }
    if !(h > 0.0) || h > t_end - t0 + 1e-12 {
        return Err(Error::Model(format!("step h={h} invalid for span")));
    }

    // Uniform grid by index so accumulated addition cannot drift; a final
    // shortened step lands exactly on t_end when the span is not a multiple.
    let span = t_end - t0;
    let n_full = (span / h + 1e-9).floor() as usize;
    let exact = (t0 + n_full as f64 * h - t_end).abs() <= 1e-9 * span.max(1.0);
    let mut knots: Vec<f64> = (0..=n_full).map(|k| t0 + k as f64 * h).collect();
    if exact {
        *knots.last_mut().unwrap() = t_end;
    } else {
        knots.push(t_end);
    }

    let mut states = Vec::with_capacity(knots.len());
    states.push(initial.clone());
    let mut y = initial.clone();
    for pair in knots.windows(2) {
        let (t, t_next) = (pair[0], pair[1]);
        y = rk4_step(&rhs, &y, t, t_next - t)?;
        if !y.all_finite() {
            return Err(Error::Integration {
                t: t_next,
                detail: "non-finite state".into(),
            });
        }
        states.push(y.clone());
    }

    Ok(Trajectory {
        times: knots,
        states,
        step: h,
    })
}

fn rk4_step<F>(rhs: &F, y: &CompartmentState, t: f64, h: f64) -> Result<CompartmentState>
where
    F: Fn(&CompartmentState, f64) -> Result<CompartmentState>,
{
    let k1 = rhs(y, t)?;
    let k2 = rhs(&y.axpy(0.5 * h, &k1), t + 0.5 * h)?;
    let k3 = rhs(&y.axpy(0.5 * h, &k2), t + 0.5 * h)?;
    let k4 = rhs(&y.axpy(h, &k3), t + h)?;
    // y + h/6 (k1 + 2k2 + 2k3 + k4)
    let sum = k1.axpy(2.0, &k2).axpy(2.0, &k3).axpy(1.0, &k4);
    Ok(y.axpy(h / 6.0, &sum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{rhs_sir, rhs_siar, sample_gammas, AgeGrid, EpiParams, TimeWindows};
    use crate::quadrature::{build_grid, BetaSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn exponential_decay_matches_analytic() {
        let mut init = CompartmentState::zeros(1, 1);
        init.i[0] = 1.0;
        let rhs = |s: &CompartmentState, _t: f64| -> crate::Result<CompartmentState> {
            let mut d = CompartmentState::zeros(1, 1);
            d.i[0] = -0.2 * s.i[0];
            Ok(d)
        };
        let traj = integrate(rhs, &init, 0.0, 10.0, 0.2).unwrap();
        assert_eq!(traj.times.len(), 51);
        assert_abs_diff_eq!(traj.last_state().i[0], (-2.0_f64).exp(), epsilon = 1e-7);
    }

    #[test]
    fn zero_field_is_constant() {
        let mut init = CompartmentState::zeros(2, 2);
        init.s = vec![0.1, 0.2, 0.3, 0.4];
        let rhs = |s: &CompartmentState, _t: f64| -> crate::Result<CompartmentState> {
            Ok(CompartmentState::zeros(s.n_ages, s.n_nodes))
        };
        let traj = integrate(rhs, &init, 0.0, 3.0, 0.5).unwrap();
        for st in &traj.states {
            assert_eq!(st.s, init.s);
        }
    }

    #[test]
    fn partial_last_step_lands_on_t_end() {
        let mut init = CompartmentState::zeros(1, 1);
        init.i[0] = 1.0;
        let rhs = |s: &CompartmentState, _t: f64| -> crate::Result<CompartmentState> {
            let mut d = CompartmentState::zeros(1, 1);
            d.i[0] = -s.i[0];
            Ok(d)
        };
        let traj = integrate(rhs, &init, 0.0, 1.05, 0.2).unwrap();
        assert_abs_diff_eq!(*traj.times.last().unwrap(), 1.05, epsilon = 0.0);
        assert_abs_diff_eq!(traj.last_state().i[0], (-1.05_f64).exp(), epsilon = 1e-5);
    }

    #[test]
    fn siar_trajectory_conserves_mass() {
        let g1 = build_grid(BetaSpec::new(2.1, 5.1).unwrap(), 5).unwrap();
        let g2 = build_grid(BetaSpec::new(1.8, 3.9).unwrap(), 5).unwrap();
        let ages = AgeGrid::default_six();
        let (gi, ga) = sample_gammas(&g1, &g2, &ages).unwrap();
        let windows = TimeWindows::from_phases(2.0, 15.0, 105.0, 7.0).unwrap();
        let mut params = EpiParams::neutral(6, 5, windows);
        params.gamma_i = gi;
        params.gamma_a = ga;
        for (j, v) in params.beta.iter_mut().enumerate() {
            *v = 0.2 + 0.01 * j as f64;
        }
        for v in params.xi.iter_mut() {
            *v = 0.3;
        }
        for (j, v) in params.h.iter_mut().enumerate() {
            *v = 0.5 + 0.4 * ((j % 7) as f64 / 7.0);
        }

        let mut init = CompartmentState::zeros(6, 5);
        for x in 0..6 {
            for m in 0..5 {
                let j = init.idx(x, m);
                init.s[j] = 0.15;
                init.i[j] = 0.001;
                init.a[j] = 0.002;
                init.r[j] = 0.01;
            }
        }
        let totals0: Vec<f64> = (0..6)
            .flat_map(|x| (0..5).map(move |m| (x, m)))
            .map(|(x, m)| init.total(x, m))
            .collect();

        let traj = integrate(
            |s, t| rhs_siar(s, &params, t),
            &init,
            2.0,
            105.0,
            0.2,
        )
        .unwrap();
        for st in &traj.states {
            let mut idx = 0;
            for x in 0..6 {
                for m in 0..5 {
                    assert!((st.total(x, m) - totals0[idx]).abs() <= 1e-12);
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn rk4_order_four_on_social_sir() {
        // Reference at h=0.001; regression of log error vs log h must give
        // slope 4.0 +/- 0.3.
        let mut params = EpiParams::neutral(1, 1, TimeWindows::single(0.0, 40.0));
        params.beta[0] = 0.4;
        params.gamma_i[0] = 0.12;
        params.mu[0] = 0.9;
        params.nu[0] = 25.0;
        let mut init = CompartmentState::zeros(1, 1);
        init.s[0] = 0.97;
        init.i[0] = 0.03;

        let solve = |h: f64| -> CompartmentState {
            integrate(|s, t| rhs_sir(s, &params, t), &init, 0.0, 30.0, h)
                .unwrap()
                .last_state()
                .clone()
        };
        let reference = solve(0.001);
        let hs = [0.4, 0.2, 0.1, 0.05];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &h in &hs {
            let end = solve(h);
            let err = (end.s[0] - reference.s[0])
                .abs()
                .max((end.i[0] - reference.i[0]).abs())
                .max((end.r[0] - reference.r[0]).abs());
            xs.push(h.ln());
            ys.push(err.ln());
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let slope = xs
            .iter()
            .zip(ys.iter())
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
        assert!(
            (slope - 4.0).abs() <= 0.3,
            "convergence slope {slope} outside 4.0 +/- 0.3"
        );
    }

    #[test]
    fn determinism_byte_identical() {
        let mut params = EpiParams::neutral(1, 1, TimeWindows::single(0.0, 50.0));
        params.beta[0] = 0.3;
        params.mu[0] = 1.0;
        params.nu[0] = 10.0;
        let mut init = CompartmentState::zeros(1, 1);
        init.s[0] = 0.99;
        init.i[0] = 0.01;
        let run = || {
            integrate(|s, t| rhs_sir(s, &params, t), &init, 0.0, 50.0, 0.2).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn blow_up_reports_time() {
        let mut init = CompartmentState::zeros(1, 1);
        init.i[0] = 1.0;
        let rhs = |s: &CompartmentState, _t: f64| -> crate::Result<CompartmentState> {
            let mut d = CompartmentState::zeros(1, 1);
            d.i[0] = s.i[0] * s.i[0] * 1e4; // finite-time blow-up
            Ok(d)
        };
        let err = integrate(rhs, &init, 0.0, 10.0, 0.5).unwrap_err();
        match err {
            Error::Integration { t, .. } => assert!(t > 0.0),
            other => panic!("expected integration error, got {other}"),
        }
    }

    #[test]
    fn grid_len_survives_binary_step_imprecision() {
        assert_eq!(grid_len(15.0, 105.0, 0.2), 451);
        assert_eq!(grid_len(0.0, 10.0, 0.2), 51);
        assert_eq!(grid_len(15.0, 15.0, 0.2), 1);
    }
}
