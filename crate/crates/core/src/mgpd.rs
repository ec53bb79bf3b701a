//! Standardized multivariate generalized Pareto machinery: the marginal
//! transform, the T-representation sampler and the generator-integral density.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{logsumexp, Matrix};

/// Below this `|γ|` the transform uses its `γ = 0` limit.
pub const GAMMA_TOL: f64 = 1e-6;

/// Per-margin scale and shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalParams {
    sigma: Vec<f64>,
    gamma: Vec<f64>,
}

impl MarginalParams {
    pub fn new(sigma: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if sigma.len() != gamma.len() || sigma.is_empty() {
            return Err(Error::Input(format!(
                "sigma has {} entries and gamma {}; need equal, nonzero lengths",
                sigma.len(),
                gamma.len()
            )));
        }
        if let Some(j) = sigma.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Input(format!("sigma[{j}] = {} must be positive", sigma[j])));
        }
        if let Some(j) = gamma.iter().position(|g| !g.is_finite()) {
            return Err(Error::Input(format!("gamma[{j}] is not finite")));
        }
        Ok(Self { sigma, gamma })
    }

    /// `σ = 1, γ = 0` in every margin.
    pub fn standard(d: usize) -> Self {
        Self {
            sigma: vec![1.0; d],
            gamma: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn standardize(&self, x: &[f64]) -> Result<StandardizedPoint> {
        self.check_len(x.len())?;
        let z = x
            .iter()
            .zip(self.sigma.iter().zip(&self.gamma))
            .enumerate()
            .map(|(j, (&x, (&s, &g)))| {
                let z = standardize_component(x, s, g);
                if z.is_finite() {
                    Ok(z)
                } else {
                    Err(Error::Domain(format!(
                        "component {j}: gamma*x/sigma = -1 makes the transform singular"
                    )))
                }
            })
            .collect::<Result<_>>()?;
        Ok(StandardizedPoint(z))
    }

    pub fn unstandardize(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z.len())?;
        z.iter()
            .zip(self.sigma.iter().zip(&self.gamma))
            .enumerate()
            .map(|(j, (&z, (&s, &g)))| {
                let x = unstandardize_component(z, s, g);
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::Domain(format!("component {j}: exp(gamma*z) overflows")))
                }
            })
            .collect()
    }

    /// `Σ_j log(σ_j + γ_j x_j)` on the model support; domain error outside it.
    pub fn log_jacobian(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x.len())?;
        let mut acc = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            let c = self.sigma[j] + self.gamma[j] * xj;
            if !(c > 0.0) {
                return Err(Error::Domain(format!(
                    "component {j}: sigma + gamma*x = {c} is not positive"
                )));
            }
            acc += c.ln();
        }
        Ok(acc)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::Input(format!(
                "point has {n} components, margins have {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn standardize_component(x: f64, sigma: f64, gamma: f64) -> f64 {
    if gamma.abs() < GAMMA_TOL {
        x / sigma
    } else {
        (gamma * x / sigma + 1.0).abs().ln() / gamma
    }
}

#[inline]
pub fn unstandardize_component(z: f64, sigma: f64, gamma: f64) -> f64 {
    if gamma.abs() < GAMMA_TOL {
        sigma * z
    } else {
        sigma * (gamma * z).exp_m1() / gamma
    }
}

/// A point on the standardized scale.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizedPoint(pub Vec<f64>);

impl StandardizedPoint {
    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for StandardizedPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Source of generator draws `T`.
pub trait GeneratorSampler {
    fn dim(&self) -> usize;

    /// Writes one draw of `T` into `out` (length `dim`).
    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]);

    /// Exact `log f_T(t)`, when available. `-inf` off the support.
    fn log_density(&self, _t: &[f64]) -> Option<f64> {
        None
    }
}

/// `m` generator draws as rows of a matrix.
pub fn sample_generator<G: GeneratorSampler + ?Sized>(gen: &G, m: usize, seed: u64) -> Matrix {
    let d = gen.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; m * d];
    for row in data.chunks_exact_mut(d.max(1)) {
        gen.sample_into(&mut rng, row);
    }
    Matrix::from_raw(m, d, data)
}

/// Draws `Z = E + T - max(T)` with `E` unit exponential, one row per draw.
pub fn sample_standardized<G: GeneratorSampler + ?Sized>(gen: &G, n: usize, seed: u64) -> Matrix {
    let d = gen.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; n * d];
    for row in data.chunks_exact_mut(d.max(1)) {
        gen.sample_into(&mut rng, row);
        let e: f64 = Exp1.sample(&mut rng);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in row.iter_mut() {
            *v = e + (*v - m);
        }
        // the maximal coordinate is exactly E
    }
    Matrix::from_raw(n, d, data)
}

/// How the line integral `∫ f_T(z + s·1) ds` is discretized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub scan_lo: f64,
    pub scan_hi: f64,
    pub scan_points: usize,
    /// Window edge: where the log-integrand falls this far below its peak.
    pub drop_nats: f64,
    pub nodes: usize,
    /// Smallest admissible value of the integral.
    pub min_integral: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            scan_lo: -50.0,
            scan_hi: 50.0,
            scan_points: 101,
            drop_nats: 40.0,
            nodes: 200,
            min_integral: 1e-300,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scan_lo < self.scan_hi) || !self.scan_lo.is_finite() || !self.scan_hi.is_finite()
        {
            return Err(Error::Input("quadrature scan bounds must satisfy lo < hi".into()));
        }
        if self.scan_points < 3 || self.nodes < 2 {
            return Err(Error::Input(
                "quadrature needs at least 3 scan points and 2 nodes".into(),
            ));
        }
        if !(self.drop_nats > 0.0) || !(self.min_integral > 0.0) {
            return Err(Error::Input(
                "quadrature drop and floor must be positive".into(),
            ));
        }
        Ok(())
    }

    fn scan_step(&self) -> f64 {
        (self.scan_hi - self.scan_lo) / (self.scan_points - 1) as f64
    }

    fn scan_at(&self, i: usize) -> f64 {
        self.scan_lo + i as f64 * self.scan_step()
    }
}

/// Quadrature nodes and log-weights for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub lo: f64,
    pub hi: f64,
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn trapezoid(lo: f64, hi: f64, n: usize) -> Self {
        let h = (hi - lo) / (n - 1) as f64;
        let nodes = (0..n).map(|k| lo + k as f64 * h).collect();
        let lh = h.ln();
        let lhalf = lh - std::f64::consts::LN_2;
        let log_weights = (0..n)
            .map(|k| if k == 0 || k == n - 1 { lhalf } else { lh })
            .collect();
        Self {
            lo,
            hi,
            nodes,
            log_weights,
        }
    }

    /// Trapezoid rule in the tanh-sinh variable: `n` nodes on `[lo, hi]`,
    /// clustered double-exponentially at both ends. Accurate for integrands
    /// that are smooth inside the window but cut off sharply at an edge.
    pub fn tanh_sinh(lo: f64, hi: f64, n: usize) -> Self {
        use std::f64::consts::{FRAC_PI_2, LN_2};
        let step = 2.0 * TANH_SINH_SPAN / (n - 1) as f64;
        let half_width = 0.5 * (hi - lo);
        let ln_cosh = |y: f64| {
            let y = y.abs();
            y - LN_2 + (-2.0 * y).exp().ln_1p()
        };
        let mut nodes = Vec::with_capacity(n);
        let mut log_weights = Vec::with_capacity(n);
        for k in 0..n {
            let t = -TANH_SINH_SPAN + k as f64 * step;
            let y = FRAC_PI_2 * t.sinh();
            let x = y.tanh();
            nodes.push((lo + half_width * (1.0 + x)).clamp(lo, hi));
            let end = if k == 0 || k == n - 1 { -LN_2 } else { 0.0 };
            log_weights.push(end + (step * half_width * FRAC_PI_2).ln() + ln_cosh(t) - 2.0 * ln_cosh(y));
        }
        Self {
            lo,
            hi,
            nodes,
            log_weights,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Checks that `z` is a valid standardized point with `max(z) > 0`.
pub fn check_support(z: &[f64]) -> Result<f64> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("standardized point is not finite".into()));
    }
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(m > 0.0) {
        return Err(Error::Support(format!("max(z) = {m} is not positive")));
    }
    Ok(m)
}

fn line_points(zs: &Matrix, pairs: &[(usize, f64)]) -> Matrix {
    let d = zs.cols();
    let mut data = Vec::with_capacity(pairs.len() * d);
    for &(i, s) in pairs {
        data.extend(zs.row(i).iter().map(|z| z + s));
    }
    Matrix::from_raw(pairs.len(), d, data)
}

fn eval_checked<F>(eval: &F, pts: &Matrix) -> Result<Vec<f64>>
where
    F: Fn(&Matrix) -> Result<Vec<f64>>,
{
    let v = eval(pts)?;
    if v.len() != pts.rows() {
        return Err(Error::Usage(format!(
            "generator log-density returned {} values for {} points",
            v.len(),
            pts.rows()
        )));
    }
    // NaN would poison comparisons below; treat as outside the support
    Ok(v.into_iter().map(|x| if x.is_nan() { f64::NEG_INFINITY } else { x }).collect())
}

/// Half-range of the tanh-sinh variable; the end nodes carry weight ~e^-50.
const TANH_SINH_SPAN: f64 = 3.5;

/// An edge whose log-integrand is still this far above the drop threshold
/// is a hard cut-off (support boundary or scan bound), not a decayed tail.
const HARD_EDGE_NATS: f64 = 1.0;

const GOLDEN_ITERS: usize = 16;
const BISECT_ITERS: usize = 32;

/// Builds one quadrature rule per row of `zs`.
///
/// `eval` maps a batch of points `t` (rows) to `log f_T(t)`; every stage of
/// the construction is evaluated for all observations at once. The outer
/// error reports a failure of `eval`; inner errors are per observation.
pub fn build_rules<F>(
    zs: &Matrix,
    eval: &F,
    cfg: &QuadratureConfig,
) -> Result<Vec<Result<QuadratureRule>>>
where
    F: Fn(&Matrix) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let n = zs.rows();
    let p = cfg.scan_points;
    let mut out: Vec<Option<Result<QuadratureRule>>> = (0..n).map(|_| None).collect();
    let mut active = Vec::new();
    for (i, slot) in out.iter_mut().enumerate() {
        match check_support(zs.row(i)) {
            Ok(_) => active.push(i),
            Err(e) => *slot = Some(Err(e)),
        }
    }

    // coarse scan
    let pairs: Vec<(usize, f64)> = active
        .iter()
        .flat_map(|&i| (0..p).map(move |k| (i, k)))
        .map(|(i, k)| (i, cfg.scan_at(k)))
        .collect();
    let scan = if pairs.is_empty() {
        Vec::new()
    } else {
        eval_checked(eval, &line_points(zs, &pairs))?
    };

    struct State {
        obs: usize,
        vals: Vec<f64>,
        // golden-section bracket
        a: f64,
        b: f64,
        c: f64,
        dd: f64,
        fc: f64,
        fd: f64,
        best_s: f64,
        best_v: f64,
    }
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let mut states = Vec::new();
    for (a_idx, &i) in active.iter().enumerate() {
        let vals = scan[a_idx * p..(a_idx + 1) * p].to_vec();
        let mut peak_idx = 0;
        for k in 1..p {
            if vals[k] > vals[peak_idx] {
                peak_idx = k;
            }
        }
        if vals[peak_idx] == f64::NEG_INFINITY {
            out[i] = Some(Err(Error::Underflow {
                log_integral: f64::NEG_INFINITY,
            }));
            continue;
        }
        let a = cfg.scan_at(peak_idx.saturating_sub(1));
        let b = cfg.scan_at((peak_idx + 1).min(p - 1));
        let c = b - invphi * (b - a);
        let dd = a + invphi * (b - a);
        states.push(State {
            obs: i,
            best_s: cfg.scan_at(peak_idx),
            best_v: vals[peak_idx],
            vals,
            a,
            b,
            c,
            dd,
            fc: f64::NAN,
            fd: f64::NAN,
        });
    }

    // golden-section refinement of the peak
    if !states.is_empty() {
        let pairs: Vec<(usize, f64)> = states
            .iter()
            .flat_map(|s| [(s.obs, s.c), (s.obs, s.dd)])
            .collect();
        let v = eval_checked(eval, &line_points(zs, &pairs))?;
        for (k, s) in states.iter_mut().enumerate() {
            s.fc = v[2 * k];
            s.fd = v[2 * k + 1];
        }
        for _ in 0..GOLDEN_ITERS {
            let mut pairs = Vec::with_capacity(states.len());
            let mut took_c = Vec::with_capacity(states.len());
            for s in states.iter_mut() {
                took_c.push(s.fc >= s.fd);
                if s.fc >= s.fd {
                    s.b = s.dd;
                    s.dd = s.c;
                    s.fd = s.fc;
                    s.c = s.b - invphi * (s.b - s.a);
                    pairs.push((s.obs, s.c));
                } else {
                    s.a = s.c;
                    s.c = s.dd;
                    s.fc = s.fd;
                    s.dd = s.a + invphi * (s.b - s.a);
                    pairs.push((s.obs, s.dd));
                }
            }
            let v = eval_checked(eval, &line_points(zs, &pairs))?;
            for (k, s) in states.iter_mut().enumerate() {
                let (sx, fx) = if took_c[k] { (s.c, &mut s.fc) } else { (s.dd, &mut s.fd) };
                *fx = v[k];
                if v[k] > s.best_v {
                    s.best_v = v[k];
                    s.best_s = sx;
                }
            }
        }
        for s in states.iter_mut() {
            for (sx, fx) in [(s.c, s.fc), (s.dd, s.fd)] {
                if fx > s.best_v {
                    s.best_v = fx;
                    s.best_s = sx;
                }
            }
        }
    }

    // window edges: bracket with the scan, then bisect on `g >= peak - drop`
    struct Edge {
        st: usize,
        inside: f64,
        inside_v: f64,
        outside: f64,
        clipped: bool,
    }
    let mut left = Vec::with_capacity(states.len());
    let mut right = Vec::with_capacity(states.len());
    for (si, s) in states.iter().enumerate() {
        let thr = s.best_v - cfg.drop_nats;
        // nearest scan point strictly left of the peak that is below threshold
        let mut l = None;
        for k in (0..p).rev() {
            let sk = cfg.scan_at(k);
            if sk < s.best_s && s.vals[k] < thr {
                l = Some(k);
                break;
            }
        }
        left.push(match l {
            None => Edge {
                st: si,
                inside: cfg.scan_lo.min(s.best_s),
                inside_v: s.vals[0],
                outside: cfg.scan_lo,
                clipped: true,
            },
            Some(k) => {
                let next = cfg.scan_at(k + 1);
                let (inside, inside_v) = if next < s.best_s { (next, s.vals[k + 1]) } else { (s.best_s, s.best_v) };
                Edge {
                    st: si,
                    inside,
                    inside_v,
                    outside: cfg.scan_at(k),
                    clipped: false,
                }
            }
        });
        let mut r = None;
        for k in 0..p {
            let sk = cfg.scan_at(k);
            if sk > s.best_s && s.vals[k] < thr {
                r = Some(k);
                break;
            }
        }
        right.push(match r {
            None => Edge {
                st: si,
                inside: cfg.scan_hi.max(s.best_s),
                inside_v: s.vals[p - 1],
                outside: cfg.scan_hi,
                clipped: true,
            },
            Some(k) => {
                let prev = cfg.scan_at(k - 1);
                let (inside, inside_v) = if prev > s.best_s { (prev, s.vals[k - 1]) } else { (s.best_s, s.best_v) };
                Edge {
                    st: si,
                    inside,
                    inside_v,
                    outside: cfg.scan_at(k),
                    clipped: false,
                }
            }
        });
    }
    for _ in 0..BISECT_ITERS {
        let mut pairs = Vec::new();
        let mut which = Vec::new();
        for (side, edges) in [&left, &right].into_iter().enumerate() {
            for (k, e) in edges.iter().enumerate() {
                if !e.clipped {
                    pairs.push((states[e.st].obs, 0.5 * (e.inside + e.outside)));
                    which.push((side, k));
                }
            }
        }
        if pairs.is_empty() {
            break;
        }
        let v = eval_checked(eval, &line_points(zs, &pairs))?;
        for (m, &(side, k)) in which.iter().enumerate() {
            let e = if side == 0 { &mut left[k] } else { &mut right[k] };
            let thr = states[e.st].best_v - cfg.drop_nats;
            let mid = pairs[m].1;
            if v[m] >= thr {
                e.inside = mid;
                e.inside_v = v[m];
            } else {
                e.outside = mid;
            }
        }
    }

    for (k, s) in states.iter().enumerate() {
        let lo = left[k].inside;
        let hi = right[k].inside;
        let thr = s.best_v - cfg.drop_nats + HARD_EDGE_NATS;
        let hard = left[k].inside_v > thr || right[k].inside_v > thr;
        out[s.obs] = Some(if hi > lo {
            Ok(if hard {
                QuadratureRule::tanh_sinh(lo, hi, cfg.nodes)
            } else {
                QuadratureRule::trapezoid(lo, hi, cfg.nodes)
            })
        } else {
            Err(Error::Underflow {
                log_integral: f64::NEG_INFINITY,
            })
        });
    }
    Ok(out.into_iter().map(|r| r.expect("every observation resolved")).collect())
}

/// `log ∫ f_T(z + s·1) ds` given a rule and the log-integrand at its nodes.
pub fn log_integral(rule: &QuadratureRule, log_integrand: &[f64]) -> f64 {
    let terms: Vec<f64> = rule
        .log_weights()
        .iter()
        .zip(log_integrand)
        .map(|(w, g)| w + g)
        .collect();
    logsumexp(&terms)
}

/// `log h(z)` for every row of `zs`.
pub fn log_density_standardized_batch<F>(
    zs: &Matrix,
    eval: &F,
    cfg: &QuadratureConfig,
) -> Result<Vec<Result<f64>>>
where
    F: Fn(&Matrix) -> Result<Vec<f64>>,
{
    let rules = build_rules(zs, eval, cfg)?;
    let mut pairs = Vec::new();
    for (i, r) in rules.iter().enumerate() {
        if let Ok(rule) = r {
            pairs.extend(rule.nodes().iter().map(|&s| (i, s)));
        }
    }
    let vals = if pairs.is_empty() {
        Vec::new()
    } else {
        eval_checked(eval, &line_points(zs, &pairs))?
    };
    let floor = cfg.min_integral.ln();
    let mut offset = 0;
    Ok(rules
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let rule = r?;
            let g = &vals[offset..offset + rule.len()];
            offset += rule.len();
            let li = log_integral(&rule, g);
            if !(li >= floor) {
                return Err(Error::Underflow { log_integral: li });
            }
            let m = zs.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(li - m)
        })
        .collect())
}

/// `log h(z)` for a single standardized point.
pub fn log_density_standardized<F>(z: &[f64], eval: &F, cfg: &QuadratureConfig) -> Result<f64>
where
    F: Fn(&Matrix) -> Result<Vec<f64>>,
{
    let zs = Matrix::from_raw(1, z.len(), z.to_vec());
    log_density_standardized_batch(&zs, eval, cfg)?
        .pop()
        .expect("one row in, one row out")
}

/// Adapts a [`GeneratorSampler`] with an exact density to the batch form.
pub fn exact_log_density<G: GeneratorSampler + ?Sized>(
    gen: &G,
) -> impl Fn(&Matrix) -> Result<Vec<f64>> + '_ {
    move |t: &Matrix| {
        t.iter_rows()
            .map(|r| {
                gen.log_density(r)
                    .ok_or_else(|| Error::Usage("generator has no exact log-density".into()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    struct Gauss(usize);
    impl GeneratorSampler for Gauss {
        fn dim(&self) -> usize {
            self.0
        }
        fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
            for v in out {
                *v = StandardNormal.sample(rng);
            }
        }
        fn log_density(&self, t: &[f64]) -> Option<f64> {
            let c = -0.5 * (2.0 * std::f64::consts::PI).ln();
            Some(t.iter().map(|x| c - 0.5 * x * x).sum())
        }
    }

    #[test]
    fn standardize_examples() {
        let m = MarginalParams::new(vec![1.0], vec![0.0]).unwrap();
        assert_eq!(m.standardize(&[1.0]).unwrap().0, vec![1.0]);
        let m = MarginalParams::new(vec![2.0], vec![0.5]).unwrap();
        let z = m.standardize(&[1.0]).unwrap()[0];
        assert!((z - 2.0 * 1.25f64.ln()).abs() < 1e-15);
        assert!((z - 0.44629).abs() < 1e-5);
        let x = m.unstandardize(&[z]).unwrap()[0];
        assert!((x - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unstandardize_fixed_point_and_endpoint() {
        let m = MarginalParams::new(vec![1.5, 0.7], vec![0.3, -0.2]).unwrap();
        assert_eq!(m.unstandardize(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let m = MarginalParams::new(vec![1.0], vec![-0.1]).unwrap();
        let x = m.unstandardize(&[500.0]).unwrap()[0];
        assert!((x - 10.0).abs() < 1e-12);
    }

    #[test]
    fn singular_transform_is_domain_error() {
        let m = MarginalParams::new(vec![1.0], vec![-0.5]).unwrap();
        assert!(matches!(m.standardize(&[2.0]), Err(Error::Domain(_))));
        let m = MarginalParams::new(vec![1.0], vec![0.5]).unwrap();
        assert!(matches!(m.unstandardize(&[5000.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_margins_rejected() {
        assert!(MarginalParams::new(vec![0.0], vec![0.0]).is_err());
        assert!(MarginalParams::new(vec![1.0, 1.0], vec![0.0]).is_err());
    }

    #[test]
    fn one_dimensional_density_is_unit_exponential() {
        let g = Gauss(1);
        let eval = exact_log_density(&g);
        for z in [0.1, 1.0, 3.5] {
            let lh = log_density_standardized(&[z], &eval, &QuadratureConfig::default()).unwrap();
            assert!((lh + z).abs() < 1e-10, "z={z}: {lh}");
        }
    }

    #[test]
    fn off_support_is_support_error() {
        let g = Gauss(2);
        let eval = exact_log_density(&g);
        let cfg = QuadratureConfig::default();
        assert!(matches!(
            log_density_standardized(&[0.0, -1.0], &eval, &cfg),
            Err(Error::Support(_))
        ));
    }

    #[test]
    fn underflow_when_generator_has_no_mass() {
        let eval = |t: &Matrix| Ok(vec![f64::NEG_INFINITY; t.rows()]);
        let r = log_density_standardized(&[1.0, 0.5], &eval, &QuadratureConfig::default());
        assert!(matches!(r, Err(Error::Underflow { .. })));
    }

    #[test]
    fn samples_have_max_equal_to_exponential() {
        let z = sample_standardized(&Gauss(3), 2000, 5);
        for row in z.iter_rows() {
            assert!(row.iter().copied().fold(f64::NEG_INFINITY, f64::max) > 0.0);
        }
        let z1 = sample_standardized(&Gauss(1), 20000, 9);
        let mean = z1.as_slice().iter().sum::<f64>() / 20000.0;
        assert!((mean - 1.0).abs() < 3.0 / 20000f64.sqrt());
    }

    #[test]
    fn shift_invariance_of_density() {
        let g = Gauss(2);
        let base = exact_log_density(&g);
        let shifted = |t: &Matrix| {
            let moved = t.map(|v| v - 1.7);
            base(&moved)
        };
        let cfg = QuadratureConfig::default();
        for z in [[0.5, 0.3], [1.2, -0.4], [0.1, 2.0]] {
            let a = log_density_standardized(&z, &base, &cfg).unwrap();
            let b = log_density_standardized(&z, &shifted, &cfg).unwrap();
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn tanh_sinh_integrates_a_truncated_exponential() {
        let r = QuadratureRule::tanh_sinh(-16.0, 0.0, 200);
        assert!(r.nodes().windows(2).all(|w| w[0] <= w[1]));
        let g: Vec<f64> = r.nodes().iter().map(|s| 2.5 * s).collect();
        let exact = ((1.0 - (-40.0f64).exp()) / 2.5).ln();
        assert!((log_integral(&r, &g) - exact).abs() < 1e-12);
        let w: f64 = r.log_weights().iter().map(|w| w.exp()).sum();
        assert!((w - 16.0).abs() < 1e-10);
    }

    #[test]
    fn trapezoid_weights_sum_to_width() {
        let r = QuadratureRule::trapezoid(-1.0, 3.0, 11);
        let s: f64 = r.log_weights().iter().map(|w| w.exp()).sum();
        assert!((s - 4.0).abs() < 1e-12);
    }
}
