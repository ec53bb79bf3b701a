//! The GPDFlow distribution: a multivariate GPD whose generator is a Real NVP flow.

mod io;
mod loss;
mod train;

pub use io::{from_json_str, load, save, to_json_string, FORMAT_VERSION};
pub use loss::{
    loss_and_grad, loss_and_grad_with_rules, loss_value, loss_value_with_rules, place_rules, LossEval, ModelParams,
};
pub use train::{fit, initial_params, ArchSpec, FitLog, TrainConfig, DEFAULT_LR, DEFAULT_LR_FINAL_FACTOR, DEFAULT_SPIKE_TOLERANCE};

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::mgpd::{
    check_support, log_density_standardized_batch, unstandardize_component, MarginalParams,
    QuadratureConfig,
};
use crate::numerics::Matrix;
use crate::realnvp::FlowNetwork;

/// Threshold exceedances: rows of `data - τ` with at least one positive entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ExceedanceDataset {
    observations: Matrix,
    threshold: Vec<f64>,
    source: Option<String>,
}

impl ExceedanceDataset {
    pub fn new(observations: Matrix, threshold: Vec<f64>) -> Result<Self> {
        if observations.rows() == 0 {
            return Err(Error::EmptyExceedance);
        }
        if threshold.len() != observations.cols() {
            return Err(Error::Input(format!(
                "threshold has {} entries, data has {} columns",
                threshold.len(),
                observations.cols()
            )));
        }
        if !observations.is_finite() || threshold.iter().any(|t| !t.is_finite()) {
            return Err(Error::Data("exceedance data must be finite".into()));
        }
        for (i, row) in observations.iter_rows().enumerate() {
            if !row.iter().any(|&v| v > 0.0) {
                return Err(Error::Data(format!("row {i} has no positive component")));
            }
        }
        Ok(Self {
            observations,
            threshold,
            source: None,
        })
    }

    /// Exceedances whose threshold is unknown or irrelevant (recorded as zero).
    pub fn from_exceedances(observations: Matrix) -> Result<Self> {
        let d = observations.cols();
        Self::new(observations, vec![0.0; d])
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn observations(&self) -> &Matrix {
        &self.observations
    }

    pub fn threshold(&self) -> &[f64] {
        &self.threshold
    }

    pub fn source(&self) -> Option<&str> {
        self.source.as_deref()
    }

    pub fn len(&self) -> usize {
        self.observations.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.observations.cols()
    }
}

/// Information about how a model was fitted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitMetadata {
    pub epochs_run: usize,
    pub final_loss: Option<f64>,
    pub seed: Option<u64>,
}

/// A fitted (or hand-built) GPDFlow distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct GPDFlowModel {
    margins: MarginalParams,
    flow: FlowNetwork,
    quad: QuadratureConfig,
    threshold: Option<Vec<f64>>,
    meta: FitMetadata,
}

const SAMPLE_CHUNK: usize = 8192;

/// `unstandardize_component` clamped to the finite range. With `γ < 0` a very
/// negative `z` maps below `-f64::MAX`; such draws lie far under the
/// threshold and are returned as `f64::MIN`.
fn sample_component(z: f64, sigma: f64, gamma: f64) -> f64 {
    unstandardize_component(z, sigma, gamma).clamp(f64::MIN, f64::MAX)
}

impl GPDFlowModel {
    pub fn new(margins: MarginalParams, flow: FlowNetwork, quad: QuadratureConfig) -> Result<Self> {
        if margins.dim() != flow.dim() {
            return Err(Error::Input(format!(
                "margins have dimension {}, flow has {}",
                margins.dim(),
                flow.dim()
            )));
        }
        quad.validate()?;
        Ok(Self {
            margins,
            flow,
            quad,
            threshold: None,
            meta: FitMetadata::default(),
        })
    }

    pub fn with_threshold(mut self, threshold: Vec<f64>) -> Result<Self> {
        if threshold.len() != self.dim() {
            return Err(Error::Input(format!(
                "threshold has {} entries, model dimension is {}",
                threshold.len(),
                self.dim()
            )));
        }
        self.threshold = Some(threshold);
        Ok(self)
    }

    pub fn with_metadata(mut self, meta: FitMetadata) -> Self {
        self.meta = meta;
        self
    }

    pub fn dim(&self) -> usize {
        self.margins.dim()
    }

    pub fn margins(&self) -> &MarginalParams {
        &self.margins
    }

    pub fn flow(&self) -> &FlowNetwork {
        &self.flow
    }

    pub fn quadrature(&self) -> &QuadratureConfig {
        &self.quad
    }

    pub fn threshold(&self) -> Option<&[f64]> {
        self.threshold.as_deref()
    }

    pub fn metadata(&self) -> &FitMetadata {
        &self.meta
    }

    /// `log f(x)` on the exceedance scale.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let m = Matrix::from_rows(&[x.to_vec()])?;
        self.log_density_batch(&m)?.pop().expect("one row")
    }

    /// Per-row log-densities; off-support rows carry their own error.
    pub fn log_density_batch(&self, x: &Matrix) -> Result<Vec<Result<f64>>> {
        if x.cols() != self.dim() {
            return Err(Error::Input(format!(
                "data has {} columns, model dimension is {}",
                x.cols(),
                self.dim()
            )));
        }
        let mut out: Vec<Option<Result<f64>>> = (0..x.rows()).map(|_| None).collect();
        let mut keep = Vec::new();
        let mut zs = Vec::new();
        let mut jac = Vec::new();
        for (i, row) in x.iter_rows().enumerate() {
            let prep = self
                .margins
                .log_jacobian(row)
                .and_then(|lj| Ok((lj, self.margins.standardize(row)?)))
                .and_then(|(lj, z)| check_support(&z).map(|_| (lj, z)));
            match prep {
                Ok((lj, z)) => {
                    keep.push(i);
                    jac.push(lj);
                    zs.push(z.into_inner());
                }
                Err(e) => out[i] = Some(Err(e)),
            }
        }
        if !keep.is_empty() {
            let zm = Matrix::from_raw(keep.len(), self.dim(), zs.concat());
            let eval = |t: &Matrix| self.flow.log_density_batch(t);
            let lh = log_density_standardized_batch(&zm, &eval, &self.quad)?;
            for ((i, l), j) in keep.into_iter().zip(lh).zip(jac) {
                out[i] = Some(l.map(|v| v - j));
            }
        }
        Ok(out.into_iter().map(|o| o.expect("each row resolved")).collect())
    }

    /// `n` draws on the exceedance scale.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix> {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n * d);
        let mut saturated = 0usize;
        let mut left = n;
        while left > 0 {
            let m = left.min(SAMPLE_CHUNK);
            let u: Vec<f64> = (0..m * d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let e: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut rng)).collect();
            let (t, _) = self.flow.forward_batch(&Matrix::from_raw(m, d, u))?;
            for (r, row) in t.iter_rows().enumerate() {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for (j, &tj) in row.iter().enumerate() {
                    let z = e[r] + (tj - mx);
                    let x = sample_component(z, self.margins.sigma()[j], self.margins.gamma()[j]);
                    if x == f64::MIN || x == f64::MAX {
                        saturated += 1;
                    }
                    out.push(x);
                }
            }
            left -= m;
        }
        if saturated > 0 {
            warn!("{saturated} sampled components beyond the f64 range were saturated");
        }
        Ok(Matrix::from_raw(n, d, out))
    }

    /// `n` generator draws `T = g(U)`.
    pub fn sample_generator(&self, n: usize, seed: u64) -> Result<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Matrix::zeros(0, self.dim());
        let mut left = n;
        while left > 0 {
            let m = left.min(SAMPLE_CHUNK);
            let t = self.flow.sample_batch(m, &mut rng)?;
            for row in t.iter_rows() {
                out.push_row(row);
            }
            left -= m;
        }
        Ok(out)
    }
}
