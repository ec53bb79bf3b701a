//! Synthetic data: parametric mGPD generators, the Gumbel copula with Gaussian
//! margins, and closed-form reference quantities.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Open01};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mgpd::{sample_standardized, GeneratorSampler, MarginalParams};
use crate::numerics::Matrix;

/// Independent components `T_j = -β_j + a_j log U_j`, `U_j ~ U(0,1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseExponentialGen {
    a: Vec<f64>,
    beta: Vec<f64>,
}

impl ReverseExponentialGen {
    pub fn new(a: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if a.len() != beta.len() || a.is_empty() {
            return Err(Error::Parameter("a and beta must have equal, nonzero length".into()));
        }
        if let Some(j) = a.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter(format!("a[{j}] = {} must be positive", a[j])));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Parameter("beta must be finite".into()));
        }
        Ok(Self { a, beta })
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Leading `d` components of the five-dimensional simulation setting.
    pub fn scenario(d: usize) -> Result<Self> {
        let a = [2.0, 0.5, 1.0, 5.0, 1.5];
        let beta = [1.0, 2.0, 3.0, 4.0, 5.0];
        if d == 0 || d > 5 {
            return Err(Error::Parameter(format!("scenario generator has 1..=5 components, asked for {d}")));
        }
        Self::new(a[..d].to_vec(), beta[..d].to_vec())
    }
}

impl GeneratorSampler for ReverseExponentialGen {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        for (j, v) in out.iter_mut().enumerate() {
            let u: f64 = Open01.sample(&mut *rng);
            *v = -self.beta[j] + self.a[j] * u.ln();
        }
    }

    fn log_density(&self, t: &[f64]) -> Option<f64> {
        let mut acc = 0.0;
        for (j, &tj) in t.iter().enumerate() {
            let e = tj + self.beta[j];
            if e > 0.0 {
                return Some(f64::NEG_INFINITY);
            }
            acc += e / self.a[j] - self.a[j].ln();
        }
        Some(acc)
    }
}

/// Independent components with density `α exp(-αt) exp(-exp(-αt))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GumbelGen {
    alpha: Vec<f64>,
}

impl GumbelGen {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Parameter("alpha must be nonempty".into()));
        }
        if let Some(j) = alpha.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter(format!("alpha[{j}] = {} must be positive", alpha[j])));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
}

impl GeneratorSampler for GumbelGen {
    fn dim(&self) -> usize {
        self.alpha.len()
    }

    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        for (j, v) in out.iter_mut().enumerate() {
            let e: f64 = Exp1.sample(&mut *rng);
            *v = -e.ln() / self.alpha[j];
        }
    }

    fn log_density(&self, t: &[f64]) -> Option<f64> {
        Some(
            t.iter()
                .zip(&self.alpha)
                .map(|(&t, &a)| a.ln() - a * t - (-a * t).exp())
                .sum(),
        )
    }
}

/// T-representation draws mapped through the marginal transform.
pub fn sample_parametric_mgpd<G: GeneratorSampler + ?Sized>(
    gen: &G,
    margins: &MarginalParams,
    n: usize,
    seed: u64,
) -> Result<Matrix> {
    if gen.dim() != margins.dim() {
        return Err(Error::Input(format!(
            "generator has dimension {}, margins {}",
            gen.dim(),
            margins.dim()
        )));
    }
    let z = sample_standardized(gen, n, seed);
    let mut out = Matrix::zeros(0, margins.dim());
    for row in z.iter_rows() {
        out.push_row(&margins.unstandardize(row)?);
    }
    Ok(out)
}

/// Parametric mGPD on the exceedance scale: a generator, margins and the
/// threshold the exceedances are measured from.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricMgpd<G> {
    pub generator: G,
    pub margins: MarginalParams,
    pub threshold: Vec<f64>,
}

impl<G: GeneratorSampler> ParametricMgpd<G> {
    pub fn new(generator: G, margins: MarginalParams, threshold: Vec<f64>) -> Result<Self> {
        if generator.dim() != margins.dim() || threshold.len() != margins.dim() {
            return Err(Error::Input("generator, margins and threshold dimensions differ".into()));
        }
        Ok(Self {
            generator,
            margins,
            threshold,
        })
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix> {
        sample_parametric_mgpd(&self.generator, &self.margins, n, seed)
    }
}

/// Bivariate Gumbel copula with Gaussian margins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GumbelCopulaModel {
    pub theta: f64,
    /// `(mean, standard deviation)` per margin.
    pub margins: [(f64, f64); 2],
}

impl GumbelCopulaModel {
    pub fn new(theta: f64, margins: [(f64, f64); 2]) -> Result<Self> {
        if !(theta >= 1.0 && theta.is_finite()) {
            return Err(Error::Parameter(format!("theta must satisfy theta >= 1, got {theta}")));
        }
        for (k, (mu, s)) in margins.iter().enumerate() {
            if !mu.is_finite() || !(*s > 0.0 && s.is_finite()) {
                return Err(Error::Parameter(format!(
                    "margin {k}: need a finite mean and positive standard deviation"
                )));
            }
        }
        Ok(Self { theta, margins })
    }

    /// `θ = 1.3`, margins `N(1, 3²)` and `N(2, 5²)`.
    pub fn scenario() -> Self {
        Self {
            theta: 1.3,
            margins: [(1.0, 3.0), (2.0, 5.0)],
        }
    }

    fn normal(&self, k: usize) -> Normal {
        let (mu, s) = self.margins[k];
        Normal::new(mu, s).expect("validated margin")
    }

    /// Marginal quantile `F_k^{-1}(p)`.
    pub fn marginal_quantile(&self, k: usize, p: f64) -> f64 {
        self.normal(k).inverse_cdf(p)
    }

    pub fn marginal_cdf(&self, k: usize, y: f64) -> f64 {
        self.normal(k).cdf(y)
    }

    /// Joint density of `(Y_1, Y_2)`.
    pub fn joint_density(&self, y: [f64; 2]) -> f64 {
        let (n0, n1) = (self.normal(0), self.normal(1));
        let u = n0.cdf(y[0]);
        let v = n1.cdf(y[1]);
        gumbel_copula_density(u, v, self.theta) * n0.pdf(y[0]) * n1.pdf(y[1])
    }
}

/// Positive-stable frailty sampling of the Gumbel copula, then Gaussian margins.
pub fn sample_gumbel_copula(model: &GumbelCopulaModel, n: usize, seed: u64) -> Result<Matrix> {
    let model = GumbelCopulaModel::new(model.theta, model.margins)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = sample_gumbel_copula_uniform(model.theta, n, &mut rng);
    let (n0, n1) = (model.normal(0), model.normal(1));
    let mut data = Vec::with_capacity(2 * n);
    for row in u.iter_rows() {
        data.push(n0.inverse_cdf(row[0]));
        data.push(n1.inverse_cdf(row[1]));
    }
    Ok(Matrix::from_raw(n, 2, data))
}

/// Copula-scale draws `(U_1, U_2)` for `θ >= 1`.
pub fn sample_gumbel_copula_uniform<R: Rng + ?Sized>(theta: f64, n: usize, rng: &mut R) -> Matrix {
    let alpha = 1.0 / theta;
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let s = if alpha == 1.0 {
            1.0
        } else {
            // Laplace transform of S is exp(-t^alpha)
            let w: f64 = Exp1.sample(rng);
            let v: f64 = Open01.sample(rng);
            let v = std::f64::consts::PI * v;
            (alpha * v).sin() / v.sin().powf(1.0 / alpha)
                * (((1.0 - alpha) * v).sin() / w).powf((1.0 - alpha) / alpha)
        };
        for _ in 0..2 {
            let e: f64 = Exp1.sample(rng);
            let u = (-(e / s).powf(alpha)).exp();
            data.push(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON));
        }
    }
    Matrix::from_raw(n, 2, data)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Input(format!("{name} = {v} must lie in [0, 1]")));
    }
    Ok(())
}

/// `C(u, v) = exp{-[(-log u)^θ + (-log v)^θ]^{1/θ}}`.
pub fn gumbel_copula_cdf(u: f64, v: f64, theta: f64) -> Result<f64> {
    check_unit("u", u)?;
    check_unit("v", v)?;
    if !(theta >= 1.0) {
        return Err(Error::Parameter(format!("theta must satisfy theta >= 1, got {theta}")));
    }
    if u == 0.0 || v == 0.0 {
        return Ok(0.0);
    }
    let a = (-u.ln()).powf(theta) + (-v.ln()).powf(theta);
    Ok((-a.powf(1.0 / theta)).exp())
}

/// Copula density `∂²C/∂u∂v` on `(0,1)²`.
pub fn gumbel_copula_density(u: f64, v: f64, theta: f64) -> f64 {
    let x = -u.ln();
    let y = -v.ln();
    let s = x.powf(theta) + y.powf(theta);
    let a = s.powf(1.0 / theta);
    let c = (-a).exp();
    c / (u * v) * (x * y).powf(theta - 1.0) * s.powf(1.0 / theta - 2.0) * (a + theta - 1.0)
}

/// `P(U_1 < α, U_2 > 0.99) = α - C(α, 0.99; θ)`.
pub fn theoretical_partial_prob(alpha: f64, theta: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Input(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(alpha - gumbel_copula_cdf(alpha, 0.99, theta)?)
}

/// Density of `Y - τ` given that some component of `Y` exceeds `τ`.
/// Zero when no component of `x` is positive.
pub fn theoretical_exceedance_density(model: &GumbelCopulaModel, x: [f64; 2], tau: [f64; 2]) -> Result<f64> {
    if x.iter().chain(&tau).any(|v| !v.is_finite()) {
        return Err(Error::Input("points must be finite".into()));
    }
    if x[0] <= 0.0 && x[1] <= 0.0 {
        return Ok(0.0);
    }
    let p_below = gumbel_copula_cdf(model.marginal_cdf(0, tau[0]), model.marginal_cdf(1, tau[1]), model.theta)?;
    let denom = 1.0 - p_below;
    Ok(model.joint_density([x[0] + tau[0], x[1] + tau[1]]) / denom)
}

/// `r_t = -log(P_t / P_{t-1})`.
pub fn negative_log_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(Error::Data("need at least two prices".into()));
    }
    if let Some(i) = prices.iter().position(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::Data(format!("price at index {i} is not positive: {}", prices[i])));
    }
    Ok(prices.windows(2).map(|w| -(w[1] / w[0]).ln()).collect())
}
