//! Plateau detection on the empirical χ̂(q) / ω̂(q) curves and threshold construction.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dependence::{empirical_chi_omega, validate_q_grid, DependenceReport};
use crate::error::{Error, Result};
use crate::model::ExceedanceDataset;
use crate::numerics::{quantile_sorted, sorted_copy, Matrix};

/// Sliding-window rule for "approximately constant".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    /// Grid points per window.
    pub window: usize,
    /// Allowed `max |value - mean| / |mean|` inside a window.
    pub rel_tol: f64,
    /// Trailing grid points never scored.
    pub min_tail: usize,
    /// Grid points with fewer expected marginal exceedances `(1-q) N` are not scored.
    pub min_expected_exceedances: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            window: 8,
            rel_tol: 0.05,
            min_tail: 5,
            min_expected_exceedances: 10.0,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Input("plateau window must be at least 2".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Input("plateau tolerance must be positive".into()));
        }
        if !(self.min_expected_exceedances >= 0.0) {
            return Err(Error::Input("minimum expected exceedances must be non-negative".into()));
        }
        Ok(())
    }
}

/// Outcome of [`detect_plateau`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plateau {
    pub q: f64,
    pub index: usize,
    pub found: bool,
}

fn window_ok(v: &[f64], tol: f64) -> bool {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let dev = v.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
    mean.is_finite() && dev <= tol * mean.abs()
}

/// Smallest grid point from which every scored window is flat.
///
/// `n` is the sample size behind the curve; with `Some(n)` the points where
/// `(1 - q) n` falls below `cfg.min_expected_exceedances` are left out.
/// A miss returns the last grid point with `found = false`.
pub fn detect_plateau(q: &[f64], values: &[f64], n: Option<usize>, cfg: &PlateauConfig) -> Result<Plateau> {
    cfg.validate()?;
    if q.len() != values.len() {
        return Err(Error::Input(format!(
            "curve has {} grid points and {} values",
            q.len(),
            values.len()
        )));
    }
    if q.len() < cfg.window + cfg.min_tail {
        return Err(Error::Input(format!(
            "curve has {} points, need at least window + tail = {}",
            q.len(),
            cfg.window + cfg.min_tail
        )));
    }
    let not_found = Plateau {
        q: *q.last().expect("non-empty"),
        index: q.len() - 1,
        found: false,
    };
    // last scored index (inclusive)
    let mut end = q.len() - cfg.min_tail;
    if let Some(n) = n {
        while end > 0 && (1.0 - q[end - 1]) * (n as f64) < cfg.min_expected_exceedances {
            end -= 1;
        }
    }
    if end < cfg.window {
        return Ok(not_found);
    }
    // good[k]: window starting at k is flat
    let starts = end - cfg.window + 1;
    let good: Vec<bool> = (0..starts)
        .map(|k| window_ok(&values[k..k + cfg.window], cfg.rel_tol))
        .collect();
    let mut first = None;
    for k in (0..starts).rev() {
        if !good[k] {
            break;
        }
        first = Some(k);
    }
    Ok(match first {
        Some(k) => Plateau {
            q: q[k],
            index: k,
            found: true,
        },
        None => not_found,
    })
}

/// Marginal empirical `q`-quantiles (ceiling-index convention).
pub fn marginal_quantiles(data: &Matrix, q: f64) -> Result<Vec<f64>> {
    if data.rows() == 0 {
        return Err(Error::Data("no rows".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Input(format!("quantile level {q} outside (0, 1)")));
    }
    Ok((0..data.cols())
        .map(|j| quantile_sorted(&sorted_copy(&data.column(j)), q).expect("non-empty"))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdResult {
    pub q_chi: f64,
    pub q_omega: f64,
    pub q_star: f64,
    pub threshold: Vec<f64>,
    /// Human-readable conditions such as a missing plateau.
    pub flags: Vec<String>,
    pub report: DependenceReport,
}

impl ThresholdResult {
    pub fn summary(&self) -> ThresholdSummary {
        ThresholdSummary {
            format_version: 1,
            q_chi: self.q_chi,
            q_omega: self.q_omega,
            q_star: self.q_star,
            threshold: self.threshold.clone(),
            flags: self.flags.clone(),
        }
    }
}

/// JSON summary of a threshold selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub format_version: u32,
    pub q_chi: f64,
    pub q_omega: f64,
    pub q_star: f64,
    pub threshold: Vec<f64>,
    pub flags: Vec<String>,
}

pub const CHI_PLATEAU_NOT_FOUND: &str = "chi_plateau_not_found";
pub const OMEGA_PLATEAU_NOT_FOUND: &str = "omega_plateau_not_found";
pub const Q_OVERRIDDEN: &str = "q_overridden";

/// Empirical curves, plateau starts `q_χ` and `q_ω`, `q* = max(q_χ, q_ω)`,
/// and the marginal `q*`-quantiles as threshold.
pub fn select_threshold(data: &Matrix, grid: &[f64], cfg: &PlateauConfig) -> Result<ThresholdResult> {
    cfg.validate()?;
    validate_q_grid(grid)?;
    if data.rows() < 100 {
        warn!("threshold selection on only {} rows", data.rows());
    }
    let report = empirical_chi_omega(data, grid)?;
    let n = Some(report.n);
    let pc = detect_plateau(grid, &report.chi, n, cfg)?;
    let po = detect_plateau(grid, &report.omega, n, cfg)?;
    let mut flags = Vec::new();
    if !pc.found {
        warn!("no chi plateau found; using q = {}", pc.q);
        flags.push(CHI_PLATEAU_NOT_FOUND.to_string());
    }
    if !po.found {
        warn!("no omega plateau found; using q = {}", po.q);
        flags.push(OMEGA_PLATEAU_NOT_FOUND.to_string());
    }
    let q_star = pc.q.max(po.q);
    Ok(ThresholdResult {
        q_chi: pc.q,
        q_omega: po.q,
        q_star,
        threshold: marginal_quantiles(data, q_star)?,
        flags,
        report,
    })
}

/// Skips detection and uses a caller-supplied `q*`.
pub fn threshold_at(data: &Matrix, grid: &[f64], q_star: f64) -> Result<ThresholdResult> {
    validate_q_grid(grid)?;
    let report = empirical_chi_omega(data, grid)?;
    Ok(ThresholdResult {
        q_chi: q_star,
        q_omega: q_star,
        q_star,
        threshold: marginal_quantiles(data, q_star)?,
        flags: vec![Q_OVERRIDDEN.to_string()],
        report,
    })
}

/// Rows with at least one component above its threshold, shifted by `-τ`.
pub fn make_exceedance_dataset(data: &Matrix, threshold: &[f64]) -> Result<ExceedanceDataset> {
    if threshold.len() != data.cols() {
        return Err(Error::Input(format!(
            "threshold has {} entries, data has {} columns",
            threshold.len(),
            data.cols()
        )));
    }
    let mut out = Matrix::zeros(0, data.cols());
    let mut shifted = vec![0.0; data.cols()];
    for row in data.iter_rows() {
        if row.iter().zip(threshold).any(|(y, t)| y > t) {
            for ((s, y), t) in shifted.iter_mut().zip(row).zip(threshold) {
                *s = y - t;
            }
            out.push_row(&shifted);
        }
    }
    if out.rows() == 0 {
        return Err(Error::EmptyExceedance);
    }
    ExceedanceDataset::new(out, threshold.to_vec())
}
