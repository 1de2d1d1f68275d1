//! Generator for the bundled sample dataset: a Lombardy-like second wave
//! produced by the age-structured model itself at mean-uncertainty
//! parameters, reported as daily counts with mild observation noise and a
//! weekly reporting pattern.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{day_to_date, DataKind, EpiDataset, EpiRecord, SplitTag};
use crate::error::{Error, Result};
use crate::integrator::integrate;
use crate::models::{rhs_siar, AgeGrid, CompartmentState, EpiParams, TimeWindows};

pub const SAMPLE_POPULATION: u64 = 10_027_602;
pub const SAMPLE_SEED: u64 = 20_201_006;

/// Lombardy-like demographic shares for the six reporting classes.
pub fn sample_shares() -> Vec<f64> {
    vec![0.165, 0.060, 0.345, 0.220, 0.105, 0.105]
}

/// Ground-truth coefficients behind the bundled dataset (mean-uncertainty
/// single node).
pub fn sample_truth_params() -> EpiParams {
    let windows = TimeWindows::from_phases(2.0, 15.0, 105.0, 7.0).expect("static windows");
    let n_w = windows.count();
    let mut p = EpiParams::neutral(6, 1, windows);
    p.k = 0.1;

    // Mean-z recovery rates: z1 = 2.1/7.2, z2 = 1.8/5.7.
    let z1 = 2.1 / 7.2;
    let z2 = 1.8 / 5.7;
    let gi_young = 1.0 / (5.0 + 32.0 * z1);
    let gi_old = 1.0 / (5.0 + 40.0 * z2);
    for (x, young) in [true, true, true, false, false, false].iter().enumerate() {
        let gi = if *young { gi_young } else { gi_old };
        p.gamma_i[x] = gi;
        p.gamma_a[x] = 2.0 * gi;
    }

    let beta = [0.35, 0.45, 0.36, 0.28, 0.20, 0.16];
    let xi = [0.22, 0.24, 0.28, 0.34, 0.42, 0.50];
    p.beta.copy_from_slice(&beta);
    for x in 0..6 {
        for w in 0..n_w {
            let j = p.awn(x, w, 0);
            p.xi[j] = xi[x];
        }
    }

    // Weekly contact damping from mid-October: restrictions tighten through
    // November, producing a peak in the long-term test window, then hold.
    let h_weeks = [
        0.95, 0.92, 0.89, 0.86, 0.83, 0.80, 0.74, 0.75, 0.77, 0.78, 0.77, 0.76, 0.77,
    ];
    for x in 0..6 {
        for (j, &h) in h_weeks.iter().enumerate() {
            let idx = p.awn(x, j + 1, 0);
            p.h[idx] = h;
        }
    }
    p
}

/// Initial compartments at t0 = 2 for the truth run.
pub fn sample_initial_state() -> CompartmentState {
    let shares = sample_shares();
    let params = sample_truth_params();
    // Active infected fractions per class at October 8th (roughly 13k known
    // cases regionwide, skewed toward working ages).
    let i0 = [1.6e-4, 2.6e-4, 3.4e-4, 2.6e-4, 1.4e-4, 1.6e-4];
    let r0 = [7.0e-3, 8.5e-3, 1.05e-2, 9.0e-3, 6.5e-3, 7.5e-3];
    let mut st = CompartmentState::zeros(6, 1);
    for x in 0..6 {
        let xi = params.xi[params.awn(x, 0, 0)];
        st.i[x] = i0[x];
        st.a[x] = (1.0 - xi) / xi * i0[x];
        st.r[x] = r0[x];
        st.s[x] = shares[x] - st.i[x] - st.a[x] - st.r[x];
    }
    st
}

/// Noise-free truth trajectory over [2, 105].
pub fn sample_truth_trajectory() -> Result<crate::integrator::Trajectory> {
    let params = sample_truth_params();
    let init = sample_initial_state();
    integrate(|s, t| rhs_siar(s, &params, t), &init, 2.0, 105.0, 0.05)
}

#[derive(Debug, Clone, Copy)]
pub struct SampleSpec {
    pub seed: u64,
    /// Multiplicative i.i.d. noise on reported infected counts.
    pub noise_i: f64,
    /// Multiplicative i.i.d. noise on reported recovered counts.
    pub noise_r: f64,
    /// Amplitude of the weekly reporting modulation on infected counts.
    pub weekly_amp: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            seed: SAMPLE_SEED,
            noise_i: 0.012,
            noise_r: 0.002,
            weekly_amp: 0.035,
        }
    }
}

/// Generates the bundled observed-schema dataset: daily counts per class
/// over 2020-10-08 .. 2021-01-18.
pub fn generate_sample(spec: &SampleSpec) -> Result<EpiDataset> {
    let traj = sample_truth_trajectory()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pop = SAMPLE_POPULATION as f64;
    let mut records = Vec::new();
    for day in 2..=104 {
        let t = day as f64;
        let st = traj.sample(t)?;
        let weekly = 1.0 + spec.weekly_amp * (std::f64::consts::TAU * (t + 1.5) / 7.0).sin();
        for x in 0..6 {
            let gi: f64 = StandardNormal.sample(&mut rng);
            let gr: f64 = StandardNormal.sample(&mut rng);
            let i_reported = (st.i[x] * weekly * (1.0 + spec.noise_i * gi)).max(0.0);
            let r_reported = (st.r[x] * (1.0 + spec.noise_r * gr)).max(0.0);
            let i_count = (i_reported * pop).round();
            let r_count = (r_reported * pop).round();
            records.push(EpiRecord {
                t,
                age: x,
                node: None,
                i: i_count / pop,
                r: r_count / pop,
                s: None,
                a: None,
            });
        }
    }
    Ok(EpiDataset {
        records,
        kind: DataKind::Observed,
        split: SplitTag::Unsplit,
        resolution: 1.0,
        labels: AgeGrid::default_six().labels(),
        population: Some(SAMPLE_POPULATION),
        n_nodes: None,
    })
}

/// Writes the sample dataset in the observed CSV schema.
pub fn write_sample_csv(path: &Path, spec: &SampleSpec) -> Result<()> {
    let data = generate_sample(spec)?;
    let pop = SAMPLE_POPULATION as f64;
    let mut body = String::from("date,age_class,infected,recovered,population\n");
    for r in &data.records {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            day_to_date(r.t),
            data.labels[r.age],
            (r.i * pop).round() as u64,
            (r.r * pop).round() as u64,
            SAMPLE_POPULATION
        ));
    }
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}
