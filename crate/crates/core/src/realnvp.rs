//! Real NVP: affine coupling layers with alternating binary masks.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mgpd::GeneratorSampler;
use crate::numerics::{Matrix, Mlp, Tape, Var};

/// Log-scales pass through `B·tanh(·/B)` before exponentiation.
pub const ZETA_BOUND: f64 = 4.0;

#[inline]
fn clamp_scale(s: f64) -> f64 {
    ZETA_BOUND * crate::numerics::tanh(s / ZETA_BOUND)
}

/// `b_j = 1{(j + k) even}` for layer `k`; all zeros when `d = 1`.
pub fn default_mask(d: usize, k: usize) -> Vec<u8> {
    if d == 1 {
        return vec![0];
    }
    (0..d).map(|j| u8::from((j + k).is_multiple_of(2))).collect()
}

/// `log N(u; 0, I)`.
pub fn base_log_density(u: &[f64]) -> f64 {
    let c = -0.5 * (2.0 * std::f64::consts::PI).ln();
    u.iter().map(|v| c - 0.5 * v * v).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    mask: Vec<u8>,
    zeta: Mlp,
    upsilon: Mlp,
}

impl CouplingLayer {
    pub fn new(mask: Vec<u8>, zeta: Mlp, upsilon: Mlp) -> Result<Self> {
        let layer = Self {
            mask,
            zeta,
            upsilon,
        };
        layer.validate(layer.mask.len())?;
        Ok(layer)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.mask.len() != d {
            return Err(Error::Input(format!(
                "mask has length {}, flow dimension is {d}",
                self.mask.len()
            )));
        }
        if self.mask.iter().any(|&b| b > 1) {
            return Err(Error::Input("mask entries must be 0 or 1".into()));
        }
        if d >= 2 && (self.mask.iter().all(|&b| b == 1) || self.mask.iter().all(|&b| b == 0)) {
            return Err(Error::Input(
                "mask must contain both 0 and 1 entries when d >= 2".into(),
            ));
        }
        for (name, net) in [("zeta", &self.zeta), ("upsilon", &self.upsilon)] {
            if net.input_dim() != d || net.output_dim() != d {
                return Err(Error::Input(format!(
                    "{name} network maps {} -> {}, expected {d} -> {d}",
                    net.input_dim(),
                    net.output_dim()
                )));
            }
            net.validate()?;
        }
        Ok(())
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn zeta(&self) -> &Mlp {
        &self.zeta
    }

    pub fn upsilon(&self) -> &Mlp {
        &self.upsilon
    }

    fn masked(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mask)
            .map(|(x, &b)| if b == 1 { *x } else { 0.0 })
            .collect()
    }

    fn scale_shift(&self, bu: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let s: Vec<f64> = self.zeta.forward(bu)?.into_iter().map(clamp_scale).collect();
        let t = self.upsilon.forward(bu)?;
        if s.iter().chain(&t).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("coupling network output is not finite".into()));
        }
        Ok((s, t))
    }

    pub fn forward(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_len(u.len(), self.mask.len())?;
        let (s, t) = self.scale_shift(&self.masked(u))?;
        let mut logdet = 0.0;
        let y = (0..u.len())
            .map(|j| {
                if self.mask[j] == 1 {
                    u[j]
                } else {
                    logdet += s[j];
                    u[j] * s[j].exp() + t[j]
                }
            })
            .collect::<Vec<_>>();
        finite_or_numeric(&y)?;
        Ok((y, logdet))
    }

    pub fn inverse(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_len(y.len(), self.mask.len())?;
        let (s, t) = self.scale_shift(&self.masked(y))?;
        let mut logdet = 0.0;
        let u = (0..y.len())
            .map(|j| {
                if self.mask[j] == 1 {
                    y[j]
                } else {
                    logdet -= s[j];
                    (y[j] - t[j]) * (-s[j]).exp()
                }
            })
            .collect::<Vec<_>>();
        finite_or_numeric(&u)?;
        Ok((u, logdet))
    }

    fn apply_batch(&self, x: &mut Matrix, logdet: &mut [f64], inverse: bool) -> Result<()> {
        let d = self.mask.len();
        let mut bx = x.clone();
        for r in 0..bx.rows() {
            for (v, &b) in bx.row_mut(r).iter_mut().zip(&self.mask) {
                if b == 0 {
                    *v = 0.0;
                }
            }
        }
        let s = self.zeta.forward_batch(&bx)?;
        let t = self.upsilon.forward_batch(&bx)?;
        for (r, ld) in logdet.iter_mut().enumerate().take(x.rows()) {
            let (sr, tr) = (s.row(r), t.row(r));
            let xr = x.row_mut(r);
            for j in 0..d {
                if self.mask[j] == 0 {
                    let sj = clamp_scale(sr[j]);
                    if inverse {
                        xr[j] = (xr[j] - tr[j]) * (-sj).exp();
                        *ld -= sj;
                    } else {
                        xr[j] = xr[j] * sj.exp() + tr[j];
                        *ld += sj;
                    }
                }
            }
        }
        if !x.is_finite() {
            return Err(Error::Numeric("coupling layer produced a non-finite value".into()));
        }
        Ok(())
    }

    /// Records the inverse map on a tape. `keep` and `drop` are the mask and
    /// its complement broadcast to the batch shape.
    fn inverse_taped(
        &self,
        tape: &mut Tape,
        y: Var,
        keep: &Matrix,
        drop: &Matrix,
        first_slot: usize,
    ) -> (Var, Var) {
        let by = tape.mul_const(y, keep.clone());
        let zs = self.zeta.forward_taped(tape, by, first_slot);
        let zs = tape.scale(zs, 1.0 / ZETA_BOUND);
        let zs = tape.tanh(zs);
        let s = tape.scale(zs, ZETA_BOUND);
        let t = self
            .upsilon
            .forward_taped(tape, by, first_slot + self.zeta.num_param_slots());
        let diff = tape.sub(y, t);
        let neg = tape.scale(s, -1.0);
        let es = tape.exp(neg);
        let moved = tape.mul(diff, es);
        let moved = tape.mul_const(moved, drop.clone());
        let u = tape.add(by, moved);
        let sd = tape.mul_const(neg, drop.clone());
        let logdet = tape.row_sum(sd);
        (u, logdet)
    }

    fn num_param_slots(&self) -> usize {
        self.zeta.num_param_slots() + self.upsilon.num_param_slots()
    }
}

fn check_len(n: usize, d: usize) -> Result<()> {
    if n != d {
        return Err(Error::Input(format!("vector has length {n}, flow dimension is {d}")));
    }
    Ok(())
}

fn finite_or_numeric(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("coupling layer produced a non-finite value".into()))
    }
}

/// Composition of coupling layers `g = g_K ∘ ... ∘ g_1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowNetwork {
    dim: usize,
    layers: Vec<CouplingLayer>,
}

impl FlowNetwork {
    /// Glorot hidden weights, zero output layers: starts as the identity map.
    pub fn new<R: Rng + ?Sized>(d: usize, k: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::Input("flow needs d >= 1 and at least one layer".into()));
        }
        let layers = (0..k)
            .map(|l| CouplingLayer {
                mask: default_mask(d, l),
                zeta: Mlp::glorot_zero_output(d, hidden, d, rng),
                upsilon: Mlp::glorot_zero_output(d, hidden, d, rng),
            })
            .collect();
        Ok(Self { dim: d, layers })
    }

    /// Every layer Glorot-initialized and scaled by `scale`; a non-trivial map
    /// for testing.
    pub fn random<R: Rng + ?Sized>(
        d: usize,
        k: usize,
        hidden: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut flow = Self::new(d, k, hidden, rng)?;
        for layer in &mut flow.layers {
            for net in [&mut layer.zeta, &mut layer.upsilon] {
                let fresh = Mlp::glorot(d, hidden, d, rng);
                let mut it = fresh.params().into_iter();
                for p in net.params_mut() {
                    let src = it.next().expect("same architecture");
                    for (dst, v) in p.as_mut_slice().iter_mut().zip(src.as_slice()) {
                        *dst = v * scale;
                    }
                }
                // nonzero biases so constant offsets are exercised
                for p in net.params_mut().into_iter().skip(1).step_by(2) {
                    for v in p.as_mut_slice() {
                        *v = scale * rng.gen_range(-0.5..0.5);
                    }
                }
            }
        }
        Ok(flow)
    }

    pub fn from_layers(dim: usize, layers: Vec<CouplingLayer>) -> Result<Self> {
        let flow = Self { dim, layers };
        flow.validate()?;
        Ok(flow)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.layers.is_empty() {
            return Err(Error::Input("flow needs d >= 1 and at least one layer".into()));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            layer
                .validate(self.dim)
                .map_err(|e| Error::Input(format!("layer {k}: {e}")))?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_dims(&self) -> &[usize] {
        self.layers[0].zeta.hidden_dims()
    }

    pub fn num_param_slots(&self) -> usize {
        self.layers.iter().map(CouplingLayer::num_param_slots).sum()
    }

    /// Slot order: for each layer, the zeta parameters then the upsilon ones.
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| l.zeta.params().into_iter().chain(l.upsilon.params()))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let CouplingLayer { zeta, upsilon, .. } = l;
                zeta.params_mut().into_iter().chain(upsilon.params_mut())
            })
            .collect()
    }

    // single points go through the batch path so both agree bitwise
    pub fn forward(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_len(u.len(), self.dim)?;
        let (t, ld) = self.forward_batch(&Matrix::row_vector(u))?;
        Ok((t.into_vec(), ld[0]))
    }

    pub fn inverse(&self, t: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_len(t.len(), self.dim)?;
        let (u, ld) = self.inverse_batch(&Matrix::row_vector(t))?;
        Ok((u.into_vec(), ld[0]))
    }

    /// `log f_T(t) = log f_U(g^{-1}(t)) + log |det J_{g^{-1}}(t)|`.
    pub fn log_density(&self, t: &[f64]) -> Result<f64> {
        let (u, ld) = self.inverse(t)?;
        Ok(base_log_density(&u) + ld)
    }

    pub fn forward_batch(&self, u: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        check_len(u.cols(), self.dim)?;
        let mut x = u.clone();
        let mut logdet = vec![0.0; u.rows()];
        for layer in &self.layers {
            layer.apply_batch(&mut x, &mut logdet, false)?;
        }
        Ok((x, logdet))
    }

    pub fn inverse_batch(&self, t: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        check_len(t.cols(), self.dim)?;
        let mut x = t.clone();
        let mut logdet = vec![0.0; t.rows()];
        for layer in self.layers.iter().rev() {
            layer.apply_batch(&mut x, &mut logdet, true)?;
        }
        Ok((x, logdet))
    }

    pub fn log_density_batch(&self, t: &Matrix) -> Result<Vec<f64>> {
        let (u, ld) = self.inverse_batch(t)?;
        Ok(u.iter_rows().zip(ld).map(|(r, l)| base_log_density(r) + l).collect())
    }

    /// Taped `log f_T` for a `B x d` batch; returns a `B x 1` column.
    /// Flow parameters occupy slots `first_slot..first_slot + num_param_slots()`.
    pub fn log_density_taped(&self, tape: &mut Tape, t: Var, first_slot: usize) -> Var {
        let rows = tape.value(t).rows();
        let d = self.dim;
        let masks: Vec<(Matrix, Matrix)> = (0..2.min(self.layers.len()))
            .map(|k| {
                let m = &self.layers[k].mask;
                let keep: Vec<f64> = (0..rows * d).map(|i| f64::from(m[i % d])).collect();
                let drop: Vec<f64> = keep.iter().map(|b| 1.0 - b).collect();
                (Matrix::from_raw(rows, d, keep), Matrix::from_raw(rows, d, drop))
            })
            .collect();
        let mut slots = Vec::with_capacity(self.layers.len());
        let mut next = first_slot;
        for layer in &self.layers {
            slots.push(next);
            next += layer.num_param_slots();
        }
        let mut x = t;
        let mut logdet: Option<Var> = None;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let (keep, drop) = match masks.iter().find(|(keep, _)| {
                keep.as_slice()[..d]
                    .iter()
                    .zip(&layer.mask)
                    .all(|(a, &b)| *a == f64::from(b))
            }) {
                Some((keep, drop)) => (keep.clone(), drop.clone()),
                None => {
                    let keep: Vec<f64> =
                        (0..rows * d).map(|i| f64::from(layer.mask[i % d])).collect();
                    let drop: Vec<f64> = keep.iter().map(|b| 1.0 - b).collect();
                    (Matrix::from_raw(rows, d, keep), Matrix::from_raw(rows, d, drop))
                }
            };
            let (u, ld) = layer.inverse_taped(tape, x, &keep, &drop, slots[k]);
            x = u;
            logdet = Some(match logdet {
                None => ld,
                Some(acc) => tape.add(acc, ld),
            });
        }
        let sq = tape.square(x);
        let ss = tape.row_sum(sq);
        let quad = tape.scale(ss, -0.5);
        let c = Matrix::filled(rows, 1, -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln());
        let base = tape.add_const(quad, &c);
        tape.add(base, logdet.expect("at least one layer"))
    }
}

impl GeneratorSampler for FlowNetwork {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        let u: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let (t, _) = self.forward(&u).expect("flow forward on a finite draw");
        out.copy_from_slice(&t);
    }

    fn log_density(&self, t: &[f64]) -> Option<f64> {
        FlowNetwork::log_density(self, t).ok()
    }
}

impl FlowNetwork {
    /// `n` draws of `T = g(U)`, batched. Errors if the flow overflows.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Matrix> {
        let data: Vec<f64> = (0..n * self.dim).map(|_| StandardNormal.sample(rng)).collect();
        let u = Matrix::from_raw(n, self.dim, data);
        Ok(self.forward_batch(&u)?.0)
    }
}
