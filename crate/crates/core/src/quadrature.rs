//! Gauss-Jacobi collocation grids for Beta-distributed uncertain parameters.
//!
//! A grid holds M nodes z_m in (0,1) and positive weights w_m summing to one,
//! such that sum_m g(z_m) w_m reproduces the Beta-weighted integral of g
//! exactly for polynomials of degree <= 2M-1. Construction follows
//! Golub-Welsch: the Beta density z^(a-1)(1-z)^(b-1) on [0,1] maps to the
//! Jacobi weight (1-u)^(b-1)(1+u)^(a-1) on [-1,1] via z = (u+1)/2, and the
//! nodes are the eigenvalues of the symmetric tridiagonal Jacobi matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape parameters of a Beta distribution on [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSpec {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaSpec {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) || !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Quadrature(format!(
                "Beta shapes must be positive and finite, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

/// Collocation nodes and weights for one uncertain parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyGrid {
    #[serde(flatten)]
    pub spec: BetaSpec,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl UncertaintyGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Builds the M-node Gauss-Jacobi grid for the given Beta distribution.
pub fn build_grid(spec: BetaSpec, m: usize) -> Result<UncertaintyGrid> {
    if m == 0 {
        return Err(Error::Quadrature("node count M must be >= 1".into()));
    }
    // Shapes validated again so grids built from raw struct literals are safe.
    let spec = BetaSpec::new(spec.alpha, spec.beta)?;

    // Jacobi weight exponents on [-1,1]: (1-u)^a (1+u)^b.
    let a = spec.beta - 1.0;
    let b = spec.alpha - 1.0;

    let mut diag = vec![0.0; m];
    let mut off = vec![0.0; m.saturating_sub(1)];
    diag[0] = (b - a) / (a + b + 2.0);
    for k in 1..m {
        let kf = k as f64;
        let denom = 2.0 * kf + a + b;
        diag[k] = (b * b - a * a) / (denom * (denom + 2.0));
        let beta_k = if k == 1 {
            4.0 * (a + 1.0) * (b + 1.0) / ((a + b + 2.0).powi(2) * (a + b + 3.0))
        } else {
            4.0 * kf * (kf + a) * (kf + b) * (kf + a + b)
                / (denom.powi(2) * (denom + 1.0) * (denom - 1.0))
        };
        off[k - 1] = beta_k.sqrt();
    }

    // First eigenvector components; squared they are the weights up to the
    // total measure, which renormalization absorbs.
    let mut first_row = vec![0.0; m];
    first_row[0] = 1.0;
    tridiag_eigen(&mut diag, &off, &mut first_row)?;

    let mut pairs: Vec<(f64, f64)> = diag
        .iter()
        .zip(first_row.iter())
        .map(|(&u, &q)| (0.5 * (u + 1.0), q * q))
        .collect();
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());

    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let weights: Vec<f64> = pairs.iter().map(|p| p.1 / total).collect();

    for win in nodes.windows(2) {
        if win[1] <= win[0] {
            return Err(Error::Quadrature("eigenvalues failed to separate".into()));
        }
    }
    if nodes.iter().any(|&z| z <= 0.0 || z >= 1.0) {
        return Err(Error::Quadrature("node escaped the open interval (0,1)".into()));
    }

    Ok(UncertaintyGrid {
        spec,
        nodes,
        weights,
    })
}

/// Weighted expectation of per-node values over the grid.
pub fn expect(grid: &UncertaintyGrid, values: &[f64]) -> Result<f64> {
    if values.len() != grid.nodes.len() {
        return Err(Error::Shape(format!(
            "expect: {} values for a grid of {} nodes",
            values.len(),
            grid.nodes.len()
        )));
    }
    Ok(values
        .iter()
        .zip(grid.weights.iter())
        .map(|(v, w)| v * w)
        .sum())
}

/// Weighted expectation against an explicit weight vector.
pub fn expect_weighted(weights: &[f64], values: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::Shape(format!(
            "expect: {} values for {} weights",
            values.len(),
            weights.len()
        )));
    }
    Ok(values
        .iter()
        .zip(weights.iter())
        .map(|(v, w)| v * w)
        .sum())
}

/// How two one-dimensional grids combine into joint uncertainty scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// m-th node of each grid paired together; weights from the first grid.
    Comonotone,
    /// Full tensor product of the two grids.
    Tensor,
}

/// One joint uncertainty scenario (z1_m, z2_m) with its weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioNode {
    pub z1: f64,
    pub z2: f64,
    pub weight: f64,
}

/// Joint collocation scenarios over the two uncertain recovery-rate drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyPairing {
    pub mode: PairingMode,
    pub nodes: Vec<ScenarioNode>,
}

impl UncertaintyPairing {
    pub fn comonotone(grid1: &UncertaintyGrid, grid2: &UncertaintyGrid) -> Result<Self> {
        if grid1.len() != grid2.len() {
            return Err(Error::Shape(format!(
                "comonotone pairing needs equal node counts, got {} and {}",
                grid1.len(),
                grid2.len()
            )));
        }
        let total: f64 = grid1.weights.iter().sum();
        let nodes = grid1
            .nodes
            .iter()
            .zip(grid1.weights.iter())
            .zip(grid2.nodes.iter())
            .map(|((&z1, &w), &z2)| ScenarioNode {
                z1,
                z2,
                weight: w / total,
            })
            .collect();
        Ok(Self {
            mode: PairingMode::Comonotone,
            nodes,
        })
    }

    pub fn tensor(grid1: &UncertaintyGrid, grid2: &UncertaintyGrid) -> Result<Self> {
        let mut nodes = Vec::with_capacity(grid1.len() * grid2.len());
        for (&z1, &w1) in grid1.nodes.iter().zip(grid1.weights.iter()) {
            for (&z2, &w2) in grid2.nodes.iter().zip(grid2.weights.iter()) {
                nodes.push(ScenarioNode {
                    z1,
                    z2,
                    weight: w1 * w2,
                });
            }
        }
        let total: f64 = nodes.iter().map(|n| n.weight).sum();
        for n in &mut nodes {
            n.weight /= total;
        }
        Ok(Self {
            mode: PairingMode::Tensor,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.weight).collect()
    }

    pub fn expect(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.nodes.len() {
            return Err(Error::Shape(format!(
                "expect: {} values for {} scenarios",
                values.len(),
                self.nodes.len()
            )));
        }
        Ok(values
            .iter()
            .zip(self.nodes.iter())
            .map(|(v, n)| v * n.weight)
            .sum())
    }
}

/// Symmetric tridiagonal eigensolver, QL with implicit shifts.
///
/// `d` holds the diagonal and receives the eigenvalues; `e_in` holds the n-1
/// off-diagonal entries (e_in[i] couples rows i and i+1); `row` is a vector
/// the plane rotations are applied to, so seeding it with the first unit
/// vector yields the first component of every eigenvector.
fn tridiag_eigen(d: &mut [f64], e_in: &[f64], row: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n <= 1 {
        return Ok(());
    }
    debug_assert_eq!(e_in.len(), n - 1);
    // Trailing slot keeps e[m] addressable when m = n-1.
    let mut e: Vec<f64> = e_in.iter().copied().chain(std::iter::once(0.0)).collect();

    let eps = f64::EPSILON;
    for l in 0..n {
        let mut iter = 0;
        'sweep: loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= eps * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Quadrature(
                    "tridiagonal QL failed to converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0_f64, 1.0_f64);
            let mut p = 0.0;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    continue 'sweep;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                f = row[i + 1];
                row[i + 1] = s * row[i] + c * f;
                row[i] = c * row[i] - s * f;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}
