//! Value-at-risk and CoVaR, empirically and from exceedance models.

use std::io::Write;

use log::warn;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mgpd::GeneratorSampler;
use crate::model::GPDFlowModel;
use crate::numerics::{quantile_sorted, sorted_copy, Matrix};
use crate::simulate::ParametricMgpd;

/// Minimum conditioning-set size for [`covar_empirical`].
pub const MIN_CONDITIONING_ROWS: usize = 20;

/// Monte Carlo size for model point estimates without bands.
pub const DEFAULT_POINT_MC: usize = 100_000;

/// `VaR_η = inf{z : F̂(z) ≥ η}`: the `ceil(η n)`-th order statistic.
pub fn var(samples: &[f64], eta: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Input("VaR of an empty sample".into()));
    }
    check_level("eta", eta)?;
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("VaR sample contains NaN".into()));
    }
    Ok(quantile_sorted(&sorted_copy(samples), eta).expect("non-empty"))
}

fn check_level(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Input(format!("{name} = {v} must lie in (0, 1)")))
    }
}

/// `CoVaR_{α,β}(Y_target | Y_conditioner)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoVaRQuery {
    pub target: usize,
    pub conditioner: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl CoVaRQuery {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.target >= d || self.conditioner >= d {
            return Err(Error::Input(format!(
                "CoVaR indices ({}, {}) out of range for dimension {d}",
                self.target, self.conditioner
            )));
        }
        if self.target == self.conditioner {
            return Err(Error::Input("CoVaR target and conditioner must differ".into()));
        }
        check_level("alpha", self.alpha)?;
        check_level("beta", self.beta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub point: f64,
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
    pub replicates: usize,
}

impl RiskEstimate {
    fn exact(point: f64) -> Self {
        Self {
            point,
            level: 0.0,
            lo: point,
            hi: point,
            replicates: 1,
        }
    }
}

/// Empirical `α`-quantile of the target column over rows whose conditioner
/// is at least its empirical `VaR_β`.
pub fn covar_empirical(data: &Matrix, q: &CoVaRQuery) -> Result<RiskEstimate> {
    q.validate(data.cols())?;
    let v = var(&data.column(q.conditioner), q.beta)?;
    let cond = conditional_target(data, q, v);
    if cond.len() < MIN_CONDITIONING_ROWS {
        return Err(Error::SampleSize(format!(
            "conditioning set has {} rows, need at least {MIN_CONDITIONING_ROWS}",
            cond.len()
        )));
    }
    Ok(RiskEstimate::exact(var(&cond, q.alpha)?))
}

fn conditional_target(data: &Matrix, q: &CoVaRQuery, level: f64) -> Vec<f64> {
    data.iter_rows()
        .filter(|r| r[q.conditioner] >= level)
        .map(|r| r[q.target])
        .collect()
}

/// A distribution on the exceedance scale that can be sampled and carries
/// the threshold it was fitted above.
pub trait ExceedanceModel: Sync {
    fn dim(&self) -> usize;
    fn threshold(&self) -> Option<&[f64]>;
    fn sample(&self, n: usize, seed: u64) -> Result<Matrix>;
}

impl ExceedanceModel for GPDFlowModel {
    fn dim(&self) -> usize {
        GPDFlowModel::dim(self)
    }

    fn threshold(&self) -> Option<&[f64]> {
        GPDFlowModel::threshold(self)
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Matrix> {
        GPDFlowModel::sample(self, n, seed)
    }
}

impl<G: GeneratorSampler + Sync> ExceedanceModel for ParametricMgpd<G> {
    fn dim(&self) -> usize {
        self.margins.dim()
    }

    fn threshold(&self) -> Option<&[f64]> {
        Some(&self.threshold)
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Matrix> {
        ParametricMgpd::sample(self, n, seed)
    }
}

fn model_threshold<M: ExceedanceModel + ?Sized>(model: &M) -> Result<&[f64]> {
    model
        .threshold()
        .ok_or_else(|| Error::Precondition("model carries no threshold".into()))
}

/// Independent per-replicate seeds derived from one master seed.
pub fn replicate_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Samples per replicate.
    pub n_mc: usize,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub jobs: usize,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 || self.replicates == 0 {
            return Err(Error::Input("Monte Carlo size and replicates must be positive".into()));
        }
        check_level("band level", self.level)
    }
}

/// Runs `f` over `seeds` on up to `jobs` threads, keeping input order.
pub fn par_map<T: Send>(seeds: &[u64], jobs: usize, f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let jobs = jobs.max(1).min(seeds.len().max(1));
    if jobs == 1 {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    let chunk = seeds.len().div_ceil(jobs);
    std::thread::scope(|sc| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                sc.spawn(move || part.iter().map(|&s| f(s)).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Mean over replicates with a percentile band widened to contain the mean.
pub fn summarize_replicates(values: &[f64], level: f64) -> Result<RiskEstimate> {
    if values.is_empty() {
        return Err(Error::SampleSize("every replicate was dropped".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let s = sorted_copy(values);
    let lo_p = (1.0 - level) / 2.0;
    let lo = quantile_sorted(&s, lo_p).expect("non-empty");
    let hi = quantile_sorted(&s, 1.0 - lo_p).expect("non-empty");
    Ok(RiskEstimate {
        point: mean,
        level,
        lo: lo.min(mean),
        hi: hi.max(mean),
        replicates: values.len(),
    })
}

/// Model-based CoVaR on the original data scale.
///
/// `var_beta` holds the full-data `VaR_β` of every component. The
/// conditioning event `Y_i ≥ VaR_β(Y_i)` must lie inside the exceedance
/// region, i.e. `VaR_β(Y_i) ≥ τ_i` for the conditioner.
pub fn covar_model<M: ExceedanceModel + ?Sized>(
    model: &M,
    var_beta: &[f64],
    q: &CoVaRQuery,
    mc: &McConfig,
) -> Result<RiskEstimate> {
    q.validate(model.dim())?;
    mc.validate()?;
    let tau = model_threshold(model)?;
    if var_beta.len() != model.dim() {
        return Err(Error::Input(format!(
            "VaR vector has {} entries, model dimension is {}",
            var_beta.len(),
            model.dim()
        )));
    }
    let i = q.conditioner;
    let tau_star = var_beta[i] - tau[i];
    if !(tau_star >= 0.0) {
        return Err(Error::Precondition(format!(
            "VaR_beta of component {i} ({}) is below the model threshold ({})",
            var_beta[i], tau[i]
        )));
    }
    let seeds = replicate_seeds(mc.seed, mc.replicates);
    let results = par_map(&seeds, mc.jobs, |s| -> Result<Option<f64>> {
        let x = model.sample(mc.n_mc, s)?;
        let cond = conditional_target(&x, q, tau_star);
        if cond.is_empty() {
            return Ok(None);
        }
        Ok(Some(var(&cond, q.alpha)? + tau[q.target]))
    });
    let mut values = Vec::with_capacity(results.len());
    for (k, r) in results.into_iter().enumerate() {
        match r? {
            Some(v) => values.push(v),
            None => warn!("replicate {k}: empty conditioning set, dropped"),
        }
    }
    summarize_replicates(&values, mc.level)
}

/// One row of a CoVaR table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoVaRRow {
    pub query: CoVaRQuery,
    pub estimate: RiskEstimate,
}

/// CSV with columns `alpha,beta,target,conditioner,point,lo,hi`.
pub fn write_covar_csv<W: Write>(rows: &[CoVaRRow], mut w: W) -> Result<()> {
    writeln!(w, "alpha,beta,target,conditioner,point,lo,hi")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.query.alpha,
            r.query.beta,
            r.query.target,
            r.query.conditioner,
            r.estimate.point,
            r.estimate.lo,
            r.estimate.hi
        )?;
    }
    Ok(())
}

/// Restriction on one component of an event, in original data units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Side {
    Any,
    Below(f64),
    Above(f64),
}

impl Side {
    fn admits(&self, y: f64) -> bool {
        match *self {
            Side::Any => true,
            Side::Below(l) => y < l,
            Side::Above(l) => y > l,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialProbability {
    /// `P(event ∩ union exceedance)`.
    pub probability: f64,
    /// Model Monte Carlo estimate of `P(event | union exceedance)`.
    pub conditional: f64,
    /// Empirical `P(union exceedance)` from the raw data.
    pub union: f64,
}

/// `P(event | ∪_j {Y_j > τ_j}) · P(∪_j {Y_j > τ_j})`, the first factor from
/// `n_mc` model samples and the second from the raw data.
///
/// For an event inside the exceedance region this is `P(event)`. An event
/// that cannot meet the exceedance region is rejected.
pub fn partial_exceedance_probability<M: ExceedanceModel + ?Sized>(
    model: &M,
    raw: &Matrix,
    event: &[Side],
    n_mc: usize,
    seed: u64,
) -> Result<PartialProbability> {
    let d = model.dim();
    let tau = model_threshold(model)?;
    if event.len() != d || raw.cols() != d {
        return Err(Error::Input(format!(
            "event has {} components and data {} columns, model dimension is {d}",
            event.len(),
            raw.cols()
        )));
    }
    if raw.rows() == 0 || n_mc == 0 {
        return Err(Error::Input("need raw data rows and a positive Monte Carlo size".into()));
    }
    let below_everywhere = event
        .iter()
        .zip(tau)
        .all(|(s, &t)| matches!(*s, Side::Below(l) if l <= t));
    if below_everywhere {
        return Err(Error::Precondition("event lies entirely below the model threshold".into()));
    }
    let union = raw
        .iter_rows()
        .filter(|r| r.iter().zip(tau).any(|(y, t)| y > t))
        .count() as f64
        / raw.rows() as f64;
    let x = model.sample(n_mc, seed)?;
    let hits = x
        .iter_rows()
        .filter(|r| {
            r.iter()
                .zip(tau)
                .zip(event)
                .all(|((x, t), s)| s.admits(x + t))
        })
        .count();
    let conditional = hits as f64 / n_mc as f64;
    Ok(PartialProbability {
        probability: conditional * union,
        conditional,
        union,
    })
}
