//! Penalized negative log-likelihood and its gradient.
//!
//! Per observation `x_i`, with `c_ij = σ_j + γ_j x_ij` and `σ = exp(η)`:
//!
//! ```text
//! loss_i = max_j z_ij - log Σ_k w_k f_T(z_i + s_k·1) + Σ_j log|c_ij|
//! ```
//!
//! plus `λ Σ_j 1{c_ij ≤ 0} c_ij²`. The quadrature nodes `s_k` and weights
//! `w_k` are placed with the current parameters and then held fixed while
//! differentiating.

use crate::error::{Error, Result};
use crate::mgpd::{build_rules, standardize_component, MarginalParams, QuadratureConfig, QuadratureRule, GAMMA_TOL};
use crate::numerics::{Matrix, Tape};
use crate::realnvp::FlowNetwork;

use super::GPDFlowModel;

/// Trainable parameters. Slot 0 is `η = log σ`, slot 1 is `γ`, the flow
/// follows from slot 2.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub eta: Matrix,
    pub gamma: Matrix,
    pub flow: FlowNetwork,
}

impl ModelParams {
    pub fn new(sigma: &[f64], gamma: &[f64], flow: FlowNetwork) -> Result<Self> {
        let m = MarginalParams::new(sigma.to_vec(), gamma.to_vec())?;
        if flow.dim() != m.dim() {
            return Err(Error::Input("flow and margins disagree on dimension".into()));
        }
        Ok(Self {
            eta: Matrix::row_vector(&sigma.iter().map(|s| s.ln()).collect::<Vec<_>>()),
            gamma: Matrix::row_vector(gamma),
            flow,
        })
    }

    pub fn from_model(model: &GPDFlowModel) -> Self {
        let m = model.margins();
        Self {
            eta: Matrix::row_vector(&m.sigma().iter().map(|s| s.ln()).collect::<Vec<_>>()),
            gamma: Matrix::row_vector(m.gamma()),
            flow: model.flow().clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.flow.dim()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.eta.as_slice().iter().map(|e| e.exp()).collect()
    }

    pub fn margins(&self) -> Result<MarginalParams> {
        MarginalParams::new(self.sigma(), self.gamma.as_slice().to_vec())
    }

    pub fn num_slots(&self) -> usize {
        2 + self.flow.num_param_slots()
    }

    pub fn slot_shapes(&self) -> Vec<(usize, usize)> {
        let mut v = vec![self.eta.shape(), self.gamma.shape()];
        v.extend(self.flow.params().iter().map(|p| p.shape()));
        v
    }

    pub fn slots(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.eta, &self.gamma];
        v.extend(self.flow.params());
        v
    }

    pub fn slots_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.eta, &mut self.gamma];
        v.extend(self.flow.params_mut());
        v
    }
}

/// Loss value, its parts, and one dense gradient per slot.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub value: f64,
    pub nll: f64,
    pub penalty: f64,
    pub grads: Vec<Matrix>,
}

/// Integrand rows per tape; bounds the memory held by one recording.
const ROWS_PER_TAPE: usize = 1024;

fn standardized_rows(p: &ModelParams, x: &Matrix) -> Matrix {
    let sigma = p.sigma();
    let gamma = p.gamma.as_slice();
    let mut z = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        for j in 0..x.cols() {
            z.set(r, j, standardize_component(x.get(r, j), sigma[j], gamma[j]));
        }
    }
    z
}

/// Quadrature rules placed with the current parameters, one per row.
pub fn place_rules(p: &ModelParams, x: &Matrix, quad: &QuadratureConfig) -> Result<Vec<QuadratureRule>> {
    let z = standardized_rows(p, x);
    let eval = |t: &Matrix| p.flow.log_density_batch(t);
    build_rules(&z, &eval, quad)?
        .into_iter()
        .enumerate()
        .map(|(row, r)| r.map_err(|_| Error::NonFiniteLoss { row }))
        .collect()
}

/// Penalized loss and gradient for all rows of `x`.
pub fn loss_and_grad(
    p: &ModelParams,
    x: &Matrix,
    lambda: f64,
    quad: &QuadratureConfig,
) -> Result<LossEval> {
    let rules = place_rules(p, x, quad)?;
    taped_loss(p, x, lambda, &rules, true)
}

/// Same objective on explicitly supplied rules (value and gradient).
pub fn loss_and_grad_with_rules(
    p: &ModelParams,
    x: &Matrix,
    lambda: f64,
    rules: &[QuadratureRule],
) -> Result<LossEval> {
    taped_loss(p, x, lambda, rules, true)
}

/// Loss value only on explicitly supplied rules.
pub fn loss_value_with_rules(p: &ModelParams, x: &Matrix, lambda: f64, rules: &[QuadratureRule]) -> Result<f64> {
    Ok(taped_loss(p, x, lambda, rules, false)?.value)
}

/// Loss value only, with the rules placed afresh.
pub fn loss_value(p: &ModelParams, x: &Matrix, lambda: f64, quad: &QuadratureConfig) -> Result<f64> {
    let rules = place_rules(p, x, quad)?;
    Ok(taped_loss(p, x, lambda, &rules, false)?.value)
}

fn taped_loss(
    p: &ModelParams,
    x: &Matrix,
    lambda: f64,
    rules: &[QuadratureRule],
    want_grad: bool,
) -> Result<LossEval> {
    let (n, d) = x.shape();
    if n == 0 {
        return Err(Error::EmptyExceedance);
    }
    if d != p.dim() {
        return Err(Error::Input(format!(
            "data has {d} columns, model dimension is {}",
            p.dim()
        )));
    }
    if rules.len() != n {
        return Err(Error::Usage("one quadrature rule per row is required".into()));
    }
    let shapes = p.slot_shapes();
    let mut grads: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
    let mut nll = 0.0;
    let mut penalty = 0.0;

    let gamma = p.gamma.as_slice();
    let small: Vec<bool> = gamma.iter().map(|g| g.abs() < GAMMA_TOL).collect();

    let mut start = 0;
    while start < n {
        // pack whole observations until the integrand batch is full
        let mut end = start;
        let mut rows = 0;
        while end < n && (end == start || rows + rules[end].len() <= ROWS_PER_TAPE) {
            rows += rules[end].len();
            end += 1;
        }
        let b = end - start;
        let xs = x.select_rows(&(start..end).collect::<Vec<_>>());

        let mut tape = Tape::new();
        let eta = tape.param(0, p.eta.clone());
        let gam = tape.param(1, p.gamma.clone());
        let xc = xs.clone();

        let sigma = tape.exp(eta);
        let sig_b = tape.broadcast_rows(sigma, b);
        let gam_b = tape.broadcast_rows(gam, b);
        let eta_b = tape.broadcast_rows(eta, b);
        let gx = tape.mul_const(gam_b, xc.clone());
        let c = tape.add(sig_b, gx);
        let absc = tape.abs(c);
        let lc = tape.log(absc);
        let jac = tape.sum(lc);

        // z = (log|c| - η)/γ, or x·exp(-η) where |γ| is below tolerance
        let mut keep_log = vec![0.0; b * d];
        let mut keep_lin = vec![0.0; b * d];
        let mut guard = vec![0.0; b * d];
        for r in 0..b {
            for j in 0..d {
                if small[j] {
                    keep_lin[r * d + j] = 1.0;
                    guard[r * d + j] = 1.0;
                } else {
                    keep_log[r * d + j] = 1.0;
                }
            }
        }
        let diff = tape.sub(lc, eta_b);
        let gsafe = tape.add_const(gam_b, &Matrix::from_raw(b, d, guard));
        let ginv = tape.recip(gsafe);
        let zlog = tape.mul(diff, ginv);
        let zlog = tape.mul_const(zlog, Matrix::from_raw(b, d, keep_log));
        let neg_eta = tape.scale(eta_b, -1.0);
        let inv_sig = tape.exp(neg_eta);
        let zlin = tape.mul_const(inv_sig, xc.clone());
        let zlin = tape.mul_const(zlin, Matrix::from_raw(b, d, keep_lin));
        let z = tape.add(zlog, zlin);
        let zmax = tape.row_max(z);

        // integrand points z_i + s_ik·1 for every node, laid out obs-major
        let per = rules[start].len();
        if (start..end).any(|i| rules[i].len() != per) {
            return Err(Error::Usage("rules in one batch must share a node count".into()));
        }
        let zr = tape.repeat_rows(z, per);
        let mut shift = Vec::with_capacity(b * per * d);
        let mut lw = Vec::with_capacity(b * per);
        for rule in &rules[start..end] {
            for (&s, &w) in rule.nodes().iter().zip(rule.log_weights()) {
                shift.extend(std::iter::repeat_n(s, d));
                lw.push(w);
            }
        }
        let pts = tape.add_const(zr, &Matrix::from_raw(b * per, d, shift));
        let lf = p.flow.log_density_taped(&mut tape, pts, 2);
        let lfw = tape.add_const(lf, &Matrix::from_raw(b * per, 1, lw));
        let grid = tape.reshape(lfw, b, per);
        let lse = tape.row_logsumexp(grid);

        // row-level finiteness, reported against the caller's row index
        let zmax_v = tape.value(zmax).as_slice().to_vec();
        let lse_v = tape.value(lse).as_slice().to_vec();
        let lc_v = tape.value(lc);
        for r in 0..b {
            let lr: f64 = lc_v.row(r).iter().sum();
            if !(zmax_v[r] > 0.0) || !(zmax_v[r] - lse_v[r] + lr).is_finite() {
                return Err(Error::NonFiniteLoss { row: start + r });
            }
        }

        let viol: Vec<f64> = tape
            .value(c)
            .as_slice()
            .iter()
            .map(|&v| if v <= 0.0 { 1.0 } else { 0.0 })
            .collect();
        let sq = tape.square(c);
        let pen = tape.mul_const(sq, Matrix::from_raw(b, d, viol));
        let pen = tape.sum(pen);
        let pen = tape.scale(pen, lambda);

        let a = tape.sum(zmax);
        let l = tape.sum(lse);
        let obs = tape.sub(a, l);
        let obs = tape.add(obs, jac);
        let total = tape.add(obs, pen);

        nll += tape.scalar(obs);
        penalty += tape.scalar(pen);
        if want_grad {
            let g = tape.grad(total)?;
            for (slot, m) in g.into_map() {
                for (acc, v) in grads[slot].as_mut_slice().iter_mut().zip(m.as_slice()) {
                    *acc += v;
                }
            }
        }
        start = end;
    }
    let value = nll + penalty;
    if !value.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    if !want_grad {
        grads.clear();
    }
    Ok(LossEval {
        value,
        nll,
        penalty,
        grads,
    })
}
