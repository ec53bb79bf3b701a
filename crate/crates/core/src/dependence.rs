//! Tail dependence: generator-based χ and ω, the stable tail dependence
//! function, the tail copula, and empirical q-indexed curves with bootstrap bands.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{quantile_sorted, sorted_copy, Matrix};

/// Default number of generator draws for Monte Carlo χ / ω.
pub const DEFAULT_MC_DRAWS: usize = 1_000_000;

/// Monte Carlo value with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

fn mean_and_se(v: &[f64]) -> Estimate {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Estimate {
        value: mean,
        std_error: (var / n).sqrt(),
    }
}

/// Generator draws `T` with the normalized `V_j = W_j / mean(W_j)`,
/// `W = exp(T - max T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSamples {
    t: Matrix,
    v: Matrix,
}

impl GeneratorSamples {
    pub fn from_t(t: Matrix) -> Result<Self> {
        let (m, d) = t.shape();
        if m == 0 || d == 0 {
            return Err(Error::Input("need at least one generator draw".into()));
        }
        if !t.is_finite() {
            return Err(Error::Input("generator draws must be finite".into()));
        }
        let mut w = t.clone();
        let mut sums = vec![0.0; d];
        for r in 0..m {
            let row = w.row_mut(r);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (v, s) in row.iter_mut().zip(sums.iter_mut()) {
                *v = (*v - mx).exp();
                *s += *v;
            }
        }
        if let Some(j) = sums.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::DegenerateGenerator { column: j });
        }
        let means: Vec<f64> = sums.iter().map(|s| s / m as f64).collect();
        for r in 0..m {
            for (v, mu) in w.row_mut(r).iter_mut().zip(&means) {
                *v /= mu;
            }
        }
        Ok(Self { t, v: w })
    }

    pub fn t(&self) -> &Matrix {
        &self.t
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.t.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.t.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.t.cols()
    }

    /// Restriction to a subset of components (renormalized).
    pub fn select(&self, cols: &[usize]) -> Result<Self> {
        if cols.iter().any(|&c| c >= self.dim()) {
            return Err(Error::Input(format!(
                "component index out of range for dimension {}",
                self.dim()
            )));
        }
        Self::from_t(self.t.select_columns(cols))
    }

    /// `χ = E min_j V_j`.
    pub fn chi(&self) -> Estimate {
        let mins: Vec<f64> = self
            .v
            .iter_rows()
            .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        mean_and_se(&mins)
    }

    /// `ω = E max_j V_j`.
    pub fn omega(&self) -> Estimate {
        let maxs: Vec<f64> = self
            .v
            .iter_rows()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        mean_and_se(&maxs)
    }

    /// Stable tail dependence function `ℓ(x) = E max_j x_j V_j`.
    pub fn stdf(&self, x: &[f64]) -> Result<Estimate> {
        self.weighted(x, f64::NEG_INFINITY, f64::max)
    }

    /// Tail copula `R(x) = E min_j x_j V_j`.
    pub fn tail_copula(&self, x: &[f64]) -> Result<Estimate> {
        self.weighted(x, f64::INFINITY, f64::min)
    }

    fn weighted(&self, x: &[f64], init: f64, op: fn(f64, f64) -> f64) -> Result<Estimate> {
        if x.len() != self.dim() {
            return Err(Error::Input(format!(
                "argument has {} entries, generator dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Input("stdf / tail copula arguments must be finite and non-negative".into()));
        }
        let vals: Vec<f64> = self
            .v
            .iter_rows()
            .map(|r| r.iter().zip(x).fold(init, |acc, (v, w)| op(acc, v * w)))
            .collect();
        Ok(mean_and_se(&vals))
    }
}

pub fn chi_from_generator(t: &Matrix) -> Result<Estimate> {
    Ok(GeneratorSamples::from_t(t.clone())?.chi())
}

pub fn omega_from_generator(t: &Matrix) -> Result<Estimate> {
    Ok(GeneratorSamples::from_t(t.clone())?.omega())
}

/// `2μ/(1+μ)` with `μ = E exp(-|T_1 - T_2|)`; the standard error uses the delta method.
pub fn chi_bivariate_exchangeable(t: &Matrix) -> Result<Estimate> {
    if t.cols() != 2 || t.rows() == 0 {
        return Err(Error::Input(format!(
            "need an m x 2 matrix of pair draws, got {} x {}",
            t.rows(),
            t.cols()
        )));
    }
    let e: Vec<f64> = t.iter_rows().map(|r| (-(r[0] - r[1]).abs()).exp()).collect();
    let mu = mean_and_se(&e);
    let m = mu.value;
    Ok(Estimate {
        value: 2.0 * m / (1.0 + m),
        std_error: 2.0 / (1.0 + m).powi(2) * mu.std_error,
    })
}

/// Pairwise `χ_{ij}` for all `i < j`.
pub fn pairwise_chi(samples: &GeneratorSamples) -> Result<Vec<(usize, usize, Estimate)>> {
    let d = samples.dim();
    let mut out = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            out.push((i, j, samples.select(&[i, j])?.chi()));
        }
    }
    Ok(out)
}

/// Grid `0.50, 0.505, ..., 0.995`.
pub fn default_q_grid() -> Vec<f64> {
    (0..100).map(|k| (500.0 + 5.0 * k as f64) / 1000.0).collect()
}

pub fn validate_q_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Input("q grid is empty".into()));
    }
    if grid.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
        return Err(Error::Input("q grid values must lie in (0, 1)".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("q grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Percentile bootstrap bands for both curves.
#[derive(Clone, Debug, PartialEq)]
pub struct Bands {
    pub level: f64,
    pub replicates: usize,
    pub chi_lo: Vec<f64>,
    pub chi_hi: Vec<f64>,
    pub omega_lo: Vec<f64>,
    pub omega_hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DependenceReport {
    pub q: Vec<f64>,
    pub chi: Vec<f64>,
    pub omega: Vec<f64>,
    /// `(1 - q) N < 1`: fewer than one expected marginal exceedance.
    pub sparse: Vec<bool>,
    pub n: usize,
    pub bands: Option<Bands>,
}

impl DependenceReport {
    /// CSV with columns `q,chi,chi_lo,chi_hi,omega,omega_lo,omega_hi`;
    /// band columns are empty when no bootstrap was run.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "q,chi,chi_lo,chi_hi,omega,omega_lo,omega_hi")?;
        for k in 0..self.q.len() {
            let (cl, ch, ol, oh) = match &self.bands {
                Some(b) => (
                    b.chi_lo[k].to_string(),
                    b.chi_hi[k].to_string(),
                    b.omega_lo[k].to_string(),
                    b.omega_hi[k].to_string(),
                ),
                None => Default::default(),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.q[k], self.chi[k], cl, ch, self.omega[k], ol, oh
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Strict empirical cdf values `F̂_j(y_ij) = #{k : y_kj < y_ij} / N`.
pub fn empirical_ranks(data: &Matrix) -> Matrix {
    let (n, d) = data.shape();
    let mut out = Matrix::zeros(n, d);
    let mut idx: Vec<usize> = Vec::with_capacity(n);
    for j in 0..d {
        idx.clear();
        idx.extend(0..n);
        idx.sort_by(|&a, &b| data.get(a, j).total_cmp(&data.get(b, j)));
        let mut start = 0;
        while start < n {
            let v = data.get(idx[start], j);
            let mut end = start + 1;
            while end < n && data.get(idx[end], j) == v {
                end += 1;
            }
            let f = start as f64 / n as f64;
            for &i in &idx[start..end] {
                out.set(i, j, f);
            }
            start = end;
        }
    }
    out
}

fn count_above(sorted: &[f64], q: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v <= q)
}

fn curves_from_ranks(ranks: &Matrix, grid: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = ranks.rows();
    let mut mins = Vec::with_capacity(n);
    let mut maxs = Vec::with_capacity(n);
    for r in ranks.iter_rows() {
        mins.push(r.iter().copied().fold(f64::INFINITY, f64::min));
        maxs.push(r.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    mins.sort_by(f64::total_cmp);
    maxs.sort_by(f64::total_cmp);
    let mut chi = Vec::with_capacity(grid.len());
    let mut omega = Vec::with_capacity(grid.len());
    for &q in grid {
        let denom = n as f64 * (1.0 - q);
        chi.push(count_above(&mins, q) as f64 / denom);
        omega.push(count_above(&maxs, q) as f64 / denom);
    }
    (chi, omega)
}

fn check_data(data: &Matrix, min_rows: usize) -> Result<()> {
    if data.cols() == 0 {
        return Err(Error::Input("data has no columns".into()));
    }
    if data.rows() < min_rows {
        return Err(Error::SampleSize(format!(
            "need at least {min_rows} rows, got {}",
            data.rows()
        )));
    }
    if !data.is_finite() {
        return Err(Error::Data("data must be finite".into()));
    }
    Ok(())
}

/// Minimum number of rows accepted by the empirical estimators.
pub const MIN_ROWS: usize = 20;

/// `χ̂(q)` and `ω̂(q)` over `grid`, from the rows of `data`.
pub fn empirical_chi_omega(data: &Matrix, grid: &[f64]) -> Result<DependenceReport> {
    check_data(data, MIN_ROWS)?;
    validate_q_grid(grid)?;
    let n = data.rows();
    let (chi, omega) = curves_from_ranks(&empirical_ranks(data), grid);
    Ok(DependenceReport {
        q: grid.to_vec(),
        chi,
        omega,
        sparse: grid.iter().map(|q| (1.0 - q) * (n as f64) < 1.0).collect(),
        n,
        bands: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 200,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Percentile bands from row resamples. Bands are widened where needed so
/// they always contain the point estimate.
pub fn bootstrap_bands(
    data: &Matrix,
    grid: &[f64],
    report: &DependenceReport,
    cfg: &BootstrapConfig,
) -> Result<Bands> {
    check_data(data, MIN_ROWS)?;
    validate_q_grid(grid)?;
    if cfg.replicates < 100 {
        return Err(Error::Input(format!(
            "bootstrap needs at least 100 replicates, got {}",
            cfg.replicates
        )));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::Input("band level must lie in (0, 1)".into()));
    }
    if report.q != grid {
        return Err(Error::Input("report grid does not match".into()));
    }
    let n = data.rows();
    let g = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut chi_reps = vec![Vec::with_capacity(cfg.replicates); g];
    let mut omega_reps = vec![Vec::with_capacity(cfg.replicates); g];
    let mut idx = vec![0usize; n];
    for _ in 0..cfg.replicates {
        for i in idx.iter_mut() {
            *i = rng.gen_range(0..n);
        }
        let ranks = empirical_ranks(&data.select_rows(&idx));
        let (c, o) = curves_from_ranks(&ranks, grid);
        for k in 0..g {
            chi_reps[k].push(c[k]);
            omega_reps[k].push(o[k]);
        }
    }
    let lo_p = (1.0 - cfg.level) / 2.0;
    let hi_p = 1.0 - lo_p;
    let band = |reps: &[f64], point: f64| {
        let s = sorted_copy(reps);
        let lo = quantile_sorted(&s, lo_p).expect("replicates");
        let hi = quantile_sorted(&s, hi_p).expect("replicates");
        (lo.min(point), hi.max(point))
    };
    let mut b = Bands {
        level: cfg.level,
        replicates: cfg.replicates,
        chi_lo: Vec::with_capacity(g),
        chi_hi: Vec::with_capacity(g),
        omega_lo: Vec::with_capacity(g),
        omega_hi: Vec::with_capacity(g),
    };
    for k in 0..g {
        let (l, h) = band(&chi_reps[k], report.chi[k]);
        b.chi_lo.push(l);
        b.chi_hi.push(h);
        let (l, h) = band(&omega_reps[k], report.omega[k]);
        b.omega_lo.push(l);
        b.omega_hi.push(h);
    }
    Ok(b)
}

/// Curves plus bootstrap bands.
pub fn empirical_chi_omega_with_bands(
    data: &Matrix,
    grid: &[f64],
    cfg: &BootstrapConfig,
) -> Result<DependenceReport> {
    let mut r = empirical_chi_omega(data, grid)?;
    r.bands = Some(bootstrap_bands(data, grid, &r, cfg)?);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp1};

    fn gumbel_pair(m: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..2 * m)
            .map(|_| {
                let e: f64 = Exp1.sample(&mut rng);
                -e.ln()
            })
            .collect();
        Matrix::from_vec(m, 2, v).unwrap()
    }

    #[test]
    fn comonotone_generator() {
        let t = Matrix::from_vec(3, 2, vec![0.1, 0.1, -2.0, -2.0, 5.0, 5.0]).unwrap();
        let g = GeneratorSamples::from_t(t).unwrap();
        assert!((g.chi().value - 1.0).abs() < 1e-14);
        assert!((g.omega().value - 1.0).abs() < 1e-14);
        let x = [0.3, 1.7];
        assert!((g.stdf(&x).unwrap().value - 1.7).abs() < 1e-12);
        assert!((g.tail_copula(&x).unwrap().value - 0.3).abs() < 1e-12);
        assert!((chi_bivariate_exchangeable(g.t()).unwrap().value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn iid_gumbel_pair() {
        let t = gumbel_pair(200_000, 1);
        let g = GeneratorSamples::from_t(t).unwrap();
        let mu = 2.0 * 2f64.ln() - 1.0;
        let truth = 2.0 * mu / (1.0 + mu);
        let c = g.chi();
        assert!((c.value - truth).abs() < 4.0 * c.std_error, "{c:?} vs {truth}");
        let e = chi_bivariate_exchangeable(g.t()).unwrap();
        assert!((e.value - truth).abs() < 4.0 * e.std_error);
        let o = g.omega();
        assert!((c.value + o.value - 2.0).abs() < 1e-10);
    }

    #[test]
    fn stdf_margins_and_identity() {
        let g = GeneratorSamples::from_t(gumbel_pair(5000, 2)).unwrap();
        assert!((g.stdf(&[1.0, 0.0]).unwrap().value - 1.0).abs() < 1e-12);
        assert!((g.stdf(&[0.0, 1.0]).unwrap().value - 1.0).abs() < 1e-12);
        let x = [0.4, 2.5];
        let s = g.stdf(&x).unwrap().value + g.tail_copula(&x).unwrap().value;
        assert!((s - 2.9).abs() < 1e-12);
        assert!(matches!(g.stdf(&[-1.0, 0.0]), Err(Error::Input(_))));
    }

    #[test]
    fn degenerate_column() {
        let t = Matrix::from_vec(2, 2, vec![0.0, -1e4, 0.0, -1e4]).unwrap();
        assert_eq!(
            chi_from_generator(&t).unwrap_err(),
            Error::DegenerateGenerator { column: 1 }
        );
    }

    #[test]
    fn strict_ranks_with_ties() {
        let x = Matrix::from_vec(4, 1, vec![2.0, 1.0, 2.0, 3.0]).unwrap();
        let r = empirical_ranks(&x);
        assert_eq!(r.column(0), vec![0.25, 0.0, 0.25, 0.75]);
    }

    #[test]
    fn comonotone_curves() {
        let n = 1000;
        let col: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64).collect();
        let data = Matrix::from_vec(n, 2, col.iter().flat_map(|&v| [v, v]).collect()).unwrap();
        let r = empirical_chi_omega(&data, &default_q_grid()).unwrap();
        for k in 0..r.q.len() {
            assert_eq!(r.chi[k], r.omega[k]);
            assert!((r.chi[k] - 1.0).abs() < 0.25, "q {} chi {}", r.q[k], r.chi[k]);
        }
        // strict ranks: 99 of 1000 values exceed q = 0.9
        assert!((r.chi[80] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn grid_validation() {
        assert_eq!(default_q_grid().len(), 100);
        assert_eq!(*default_q_grid().last().unwrap(), 0.995);
        assert!(validate_q_grid(&[0.5, 0.5]).is_err());
        assert!(validate_q_grid(&[0.0, 0.5]).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let data = gumbel_pair(100, 3);
        let r = empirical_chi_omega(&data, &[0.5, 0.9]).unwrap();
        let s = r.to_csv_string();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[0], "q,chi,chi_lo,chi_hi,omega,omega_lo,omega_hi");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.5,"));
    }
}
