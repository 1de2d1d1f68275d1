//! Reverse accumulation over the combined forward + tangent computation.
//!
//! The physics loss reads both network outputs and their time derivatives,
//! so its parameter gradient needs the adjoint of the tangent pass as well:
//! backpropagating through u = Wx + b, x' = sigma(u), and the tangent pair
//! s = Wt, t' = sigma'(u) * s, which brings in sigma'' terms.

use serde::{Deserialize, Serialize};

use super::{ForwardTrace, NetworkParams, TangentTrace};
use crate::error::{Error, Result};

/// Parameter-shaped accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn zeros_like(net: &NetworkParams) -> Gradient {
        Gradient {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for w in self.weights.iter_mut() {
            for v in w.iter_mut() {
                *v *= c;
            }
        }
        for b in self.biases.iter_mut() {
            for v in b.iter_mut() {
                *v *= c;
            }
        }
    }

    pub fn add(&mut self, other: &Gradient) {
        for (w, ow) in self.weights.iter_mut().zip(other.weights.iter()) {
            for (v, o) in w.iter_mut().zip(ow.iter()) {
                *v += o;
            }
        }
        for (b, ob) in self.biases.iter_mut().zip(other.biases.iter()) {
            for (v, o) in b.iter_mut().zip(ob.iter()) {
                *v += o;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let w = self
            .weights
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        self.biases
            .iter()
            .flatten()
            .fold(w, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().all(|v| v.is_finite())
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }
}

/// Accumulates one point's contribution given output adjoints, and adjoints
/// of the input-derivative outputs when a tangent pass was made.
pub fn backprop_point(
    net: &NetworkParams,
    trace: &ForwardTrace,
    tangent: Option<&TangentTrace>,
    out_bar: &[f64],
    tan_bar: Option<&[f64]>,
    grad: &mut Gradient,
) {
    let nl = net.n_layers();
    let mut x_bar = out_bar.to_vec();
    let mut t_bar: Vec<f64> = match tan_bar {
        Some(tb) => tb.to_vec(),
        None => vec![0.0; out_bar.len()],
    };
    let with_tangent = tangent.is_some();

    for l in (0..nl).rev() {
        let n_in = net.layer_sizes[l];
        let n_out = net.layer_sizes[l + 1];
        let u = &trace.us[l];

        // Adjoints of the pre-activation u and, when tangents flow, of the
        // tangent pre-activation s.
        let (u_bar, s_bar): (Vec<f64>, Vec<f64>) = if net.activated(l) {
            let mut ub = vec![0.0; n_out];
            let mut sb = vec![0.0; n_out];
            for r in 0..n_out {
                let d1 = net.activation.d1(u[r]);
                ub[r] = d1 * x_bar[r];
                if let Some(tan) = tangent {
                    ub[r] += net.activation.d2(u[r]) * tan.ss[l][r] * t_bar[r];
                    sb[r] = d1 * t_bar[r];
                }
            }
            (ub, sb)
        } else {
            (x_bar.clone(), t_bar.clone())
        };

        let x_prev = &trace.xs[l];
        let w = &net.weights[l];
        let gw = &mut grad.weights[l];
        let gb = &mut grad.biases[l];
        if with_tangent {
            let t_prev = &tangent.unwrap().ts[l];
            for r in 0..n_out {
                let base = r * n_in;
                for c in 0..n_in {
                    gw[base + c] += u_bar[r] * x_prev[c] + s_bar[r] * t_prev[c];
                }
                gb[r] += u_bar[r];
            }
        } else {
            for r in 0..n_out {
                let base = r * n_in;
                for c in 0..n_in {
                    gw[base + c] += u_bar[r] * x_prev[c];
                }
                gb[r] += u_bar[r];
            }
        }

        if l > 0 {
            let mut xb = vec![0.0; n_in];
            let mut tb = vec![0.0; n_in];
            for r in 0..n_out {
                let base = r * n_in;
                for c in 0..n_in {
                    xb[c] += w[base + c] * u_bar[r];
                    if with_tangent {
                        tb[c] += w[base + c] * s_bar[r];
                    }
                }
            }
            x_bar = xb;
            t_bar = tb;
        }
    }
}

/// Gradient of a batch loss over plain network outputs. The loss closure
/// receives per-point outputs and returns the loss value together with its
/// partial derivatives with respect to each output.
pub fn loss_gradient<F>(
    net: &NetworkParams,
    inputs: &[Vec<f64>],
    loss: F,
) -> Result<(f64, Gradient)>
where
    F: FnOnce(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>),
{
    let traces: Vec<ForwardTrace> = inputs
        .iter()
        .map(|x| net.forward_trace(x))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<Vec<f64>> = traces.iter().map(|t| t.output().to_vec()).collect();
    let (value, out_bars) = loss(&outputs);
    if !value.is_finite() {
        return Err(Error::Evaluation("loss is not finite".into()));
    }
    if out_bars.len() != inputs.len() {
        return Err(Error::Shape("loss returned wrong number of adjoints".into()));
    }
    let mut grad = Gradient::zeros_like(net);
    for (trace, ob) in traces.iter().zip(out_bars.iter()) {
        backprop_point(net, trace, None, ob, None, &mut grad);
    }
    Ok((value, grad))
}

/// Gradient of a batch loss that reads outputs and the derivative of the
/// outputs with respect to input `tangent_index`. The loss closure returns
/// (value, d/d outputs, d/d input_derivatives).
pub fn loss_gradient_with_tangent<F>(
    net: &NetworkParams,
    inputs: &[Vec<f64>],
    tangent_index: usize,
    loss: F,
) -> Result<(f64, Gradient)>
where
    F: FnOnce(&[Vec<f64>], &[Vec<f64>]) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>),
{
    if tangent_index >= net.n_inputs() {
        return Err(Error::Shape(format!(
            "tangent index {tangent_index} out of range"
        )));
    }
    let mut dir = vec![0.0; net.n_inputs()];
    dir[tangent_index] = 1.0;

    let traces: Vec<ForwardTrace> = inputs
        .iter()
        .map(|x| net.forward_trace(x))
        .collect::<Result<Vec<_>>>()?;
    let tangents: Vec<TangentTrace> = traces.iter().map(|t| net.tangent_trace(t, &dir)).collect();
    let outputs: Vec<Vec<f64>> = traces.iter().map(|t| t.output().to_vec()).collect();
    let derivs: Vec<Vec<f64>> = tangents.iter().map(|t| t.output().to_vec()).collect();

    let (value, out_bars, tan_bars) = loss(&outputs, &derivs);
    if !value.is_finite() {
        return Err(Error::Evaluation("loss is not finite".into()));
    }
    if out_bars.len() != inputs.len() || tan_bars.len() != inputs.len() {
        return Err(Error::Shape("loss returned wrong number of adjoints".into()));
    }
    let mut grad = Gradient::zeros_like(net);
    for ((trace, tan), (ob, tb)) in traces
        .iter()
        .zip(tangents.iter())
        .zip(out_bars.iter().zip(tan_bars.iter()))
    {
        backprop_point(net, trace, Some(tan), ob, Some(tb), &mut grad);
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Activation;

    /// Central finite-difference gradient of an arbitrary scalar function of
    /// the network, the oracle for every exact-gradient test.
    fn fd_gradient<F>(net: &NetworkParams, f: F) -> Gradient
    where
        F: Fn(&NetworkParams) -> f64,
    {
        let delta = f64::EPSILON.sqrt().sqrt(); // ~1.2e-4, balances truncation/rounding
        let mut g = Gradient::zeros_like(net);
        for l in 0..net.n_layers() {
            for j in 0..net.weights[l].len() {
                let mut p = net.clone();
                p.weights[l][j] += delta;
                let mut m = net.clone();
                m.weights[l][j] -= delta;
                g.weights[l][j] = (f(&p) - f(&m)) / (2.0 * delta);
            }
            for j in 0..net.biases[l].len() {
                let mut p = net.clone();
                p.biases[l][j] += delta;
                let mut m = net.clone();
                m.biases[l][j] -= delta;
                g.biases[l][j] = (f(&p) - f(&m)) / (2.0 * delta);
            }
        }
        g
    }

    fn max_rel_err(a: &Gradient, b: &Gradient) -> f64 {
        let mut worst = 0.0_f64;
        let scale = a.max_abs().max(b.max_abs()).max(1e-10);
        for (wa, wb) in a.weights.iter().zip(b.weights.iter()) {
            for (x, y) in wa.iter().zip(wb.iter()) {
                worst = worst.max((x - y).abs() / scale);
            }
        }
        for (ba, bb) in a.biases.iter().zip(b.biases.iter()) {
            for (x, y) in ba.iter().zip(bb.iter()) {
                worst = worst.max((x - y).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn data_loss_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let net = NetworkParams::init(&[2, 6, 6, 2], Activation::Tanh, seed).unwrap();
            let inputs: Vec<Vec<f64>> = (0..4)
                .map(|j| vec![0.1 * j as f64 - 0.2, 0.3 - 0.15 * j as f64])
                .collect();
            let targets: Vec<Vec<f64>> = (0..4).map(|j| vec![0.05 * j as f64, -0.1]).collect();

            let mse = |outs: &[Vec<f64>]| -> (f64, Vec<Vec<f64>>) {
                let mut total = 0.0;
                let mut bars = Vec::with_capacity(outs.len());
                for (o, t) in outs.iter().zip(targets.iter()) {
                    let mut bar = vec![0.0; o.len()];
                    for j in 0..o.len() {
                        let d = o[j] - t[j];
                        total += 0.5 * d * d;
                        bar[j] = d;
                    }
                    bars.push(bar);
                }
                (total, bars)
            };
            let (_, exact) = loss_gradient(&net, &inputs, mse).unwrap();
            let fd = fd_gradient(&net, |p| {
                let mut total = 0.0;
                for (x, t) in inputs.iter().zip(targets.iter()) {
                    let o = p.forward(x).unwrap();
                    for j in 0..o.len() {
                        total += 0.5 * (o[j] - t[j]).powi(2);
                    }
                }
                total
            });
            let err = max_rel_err(&exact, &fd);
            assert!(err < 1e-5, "seed {seed}: data-loss gradient err {err}");
        }
    }

    #[test]
    fn physics_style_gradient_matches_finite_differences() {
        // Loss of the squared time derivative exercises the second-order
        // terms (sigma'' path) of the reverse-over-tangent computation.
        for seed in 0..20 {
            let net = NetworkParams::init(&[1, 8, 8, 1], Activation::Tanh, seed).unwrap();
            let inputs: Vec<Vec<f64>> = (0..5).map(|j| vec![-0.8 + 0.4 * j as f64]).collect();

            let phys = |_outs: &[Vec<f64>], tans: &[Vec<f64>]| {
                let mut total = 0.0;
                let mut obars = Vec::new();
                let mut tbars = Vec::new();
                for tan in tans.iter() {
                    total += tan[0] * tan[0];
                    obars.push(vec![0.0]);
                    tbars.push(vec![2.0 * tan[0]]);
                }
                (total, obars, tbars)
            };
            let (_, exact) = loss_gradient_with_tangent(&net, &inputs, 0, phys).unwrap();
            let fd = fd_gradient(&net, |p| {
                inputs
                    .iter()
                    .map(|x| {
                        let d = p.input_derivative(x, 0).unwrap();
                        d[0] * d[0]
                    })
                    .sum()
            });
            let err = max_rel_err(&exact, &fd);
            assert!(err < 1e-5, "seed {seed}: physics gradient err {err}");
        }
    }

    #[test]
    fn mixed_output_tangent_loss_matches_finite_differences() {
        // Residual-shaped loss (tangent + function of outputs)^2.
        for seed in 0..10 {
            let net = NetworkParams::init(&[2, 6, 6, 3], Activation::Tanh, seed).unwrap();
            let inputs: Vec<Vec<f64>> = (0..4)
                .map(|j| vec![0.25 * j as f64 - 0.4, 0.1])
                .collect();
            let gamma = 0.37;

            let residual = |outs: &[Vec<f64>], tans: &[Vec<f64>]| {
                let mut total = 0.0;
                let mut obars = vec![vec![0.0; 3]; outs.len()];
                let mut tbars = vec![vec![0.0; 3]; outs.len()];
                for (p, (o, tan)) in outs.iter().zip(tans.iter()).enumerate() {
                    // r = d/dt f0 + gamma * f1 * f2
                    let r = tan[0] + gamma * o[1] * o[2];
                    total += r * r;
                    tbars[p][0] = 2.0 * r;
                    obars[p][1] = 2.0 * r * gamma * o[2];
                    obars[p][2] = 2.0 * r * gamma * o[1];
                }
                (total, obars, tbars)
            };
            let (_, exact) = loss_gradient_with_tangent(&net, &inputs, 0, residual).unwrap();
            let fd = fd_gradient(&net, |p| {
                inputs
                    .iter()
                    .map(|x| {
                        let o = p.forward(x).unwrap();
                        let d = p.input_derivative(x, 0).unwrap();
                        let r = d[0] + gamma * o[1] * o[2];
                        r * r
                    })
                    .sum()
            });
            let err = max_rel_err(&exact, &fd);
            assert!(err < 1e-5, "seed {seed}: mixed gradient err {err}");
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let net = NetworkParams::init(&[2, 5, 5, 1], Activation::Tanh, 0).unwrap();
        let inputs = vec![vec![0.2, 0.4]];
        let (v, g) = loss_gradient(&net, &inputs, |outs| {
            (42.0, vec![vec![0.0; 1]; outs.len()])
        })
        .unwrap();
        assert_eq!(v, 42.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let net = NetworkParams::init(&[1, 3, 1], Activation::Tanh, 0).unwrap();
        let inputs = vec![vec![0.1]];
        let res = loss_gradient(&net, &inputs, |outs| {
            (f64::NAN, vec![vec![0.0; 1]; outs.len()])
        });
        assert!(res.is_err());
    }
}
