use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, loss_value, ModelParams};
use super::{ExceedanceDataset, FitMetadata, GPDFlowModel};
use crate::error::{Error, Result};
use crate::mgpd::QuadratureConfig;
use crate::numerics::{Adam, AdamConfig};
use crate::realnvp::FlowNetwork;

/// Flow architecture: `layers` coupling layers whose networks have the given
/// hidden widths (one layer of `4d` units when unset).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layers: usize,
    pub hidden: Option<Vec<usize>>,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            layers: 16,
            hidden: None,
        }
    }
}

impl ArchSpec {
    pub fn hidden_for(&self, d: usize) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| vec![4 * d])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub lambda: f64,
    pub quad: QuadratureConfig,
    pub seed: u64,
    pub init_gamma: f64,
    /// Step size at the last epoch relative to `adam.lr`; the rate decays
    /// geometrically in between (1 keeps it constant).
    pub lr_final_factor: f64,
    /// An epoch whose loss exceeds the best so far by more than this share
    /// of its magnitude restores the best parameters, resets the optimizer
    /// and halves the step size. `f64::INFINITY` disables the guard.
    pub spike_tolerance: f64,
}

/// Default learning rate for the full-batch loop.
pub const DEFAULT_LR: f64 = 3e-2;

pub const DEFAULT_LR_FINAL_FACTOR: f64 = 0.1;

pub const DEFAULT_SPIKE_TOLERANCE: f64 = 0.25;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            adam: AdamConfig::with_lr(DEFAULT_LR),
            lambda: 1e4,
            quad: QuadratureConfig::default(),
            seed: 0,
            init_gamma: 0.05,
            lr_final_factor: DEFAULT_LR_FINAL_FACTOR,
            spike_tolerance: DEFAULT_SPIKE_TOLERANCE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Input("epochs must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Input("penalty weight must be non-negative".into()));
        }
        if !(self.lr_final_factor > 0.0 && self.lr_final_factor <= 1.0) {
            return Err(Error::Input("final learning-rate factor must lie in (0, 1]".into()));
        }
        if !(self.spike_tolerance > 0.0) {
            return Err(Error::Input("spike tolerance must be positive".into()));
        }
        self.adam.validate()?;
        self.quad.validate()
    }
}

/// Per-epoch loss record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitLog {
    /// Loss evaluated at the start of each epoch, before its update.
    pub losses: Vec<f64>,
    /// Loss of the returned parameters.
    pub final_loss: f64,
    /// Times the spike guard restored the best parameters.
    pub restarts: usize,
}

/// Starting point: `σ_j` = mean of the positive exceedances in margin `j`.
pub fn initial_params(
    data: &ExceedanceDataset,
    arch: &ArchSpec,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    let d = data.dim();
    let x = data.observations();
    let mut sigma = Vec::with_capacity(d);
    for j in 0..d {
        let pos: Vec<f64> = x.column(j).into_iter().filter(|v| *v > 0.0).collect();
        let s = if pos.is_empty() {
            1.0
        } else {
            pos.iter().sum::<f64>() / pos.len() as f64
        };
        sigma.push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let flow = FlowNetwork::new(d, arch.layers, &arch.hidden_for(d), &mut rng)?;
    ModelParams::new(&sigma, &vec![cfg.init_gamma; d], flow)
}

/// Full-batch maximum likelihood with Adam.
pub fn fit(
    data: &ExceedanceDataset,
    arch: &ArchSpec,
    cfg: &TrainConfig,
) -> Result<(GPDFlowModel, FitLog)> {
    cfg.validate()?;
    let mut p = initial_params(data, arch, cfg)?;
    let x = data.observations();
    let mut opt = Adam::new(cfg.adam, &p.slot_shapes())?;
    let mut log = FitLog::default();
    let mut lr_scale = 1.0;
    let mut best: Option<(f64, ModelParams)> = None;
    for epoch in 0..cfg.epochs {
        let mut lr = cfg.adam.lr * lr_scale;
        if cfg.epochs > 1 && cfg.lr_final_factor != 1.0 {
            let frac = epoch as f64 / (cfg.epochs - 1) as f64;
            lr *= cfg.lr_final_factor.powf(frac);
        }
        opt.set_lr(lr)?;
        let e = loss_and_grad(&p, x, cfg.lambda, &cfg.quad).map_err(|err| Error::Training {
            epoch,
            reason: err.to_string(),
        })?;
        debug!("epoch {epoch}: loss {:.6}", e.value);
        log.losses.push(e.value);
        match &best {
            Some((b, bp)) if e.value > b + cfg.spike_tolerance * b.abs() => {
                warn!("epoch {epoch}: loss {:.4} jumped above best {b:.4}; restoring best parameters", e.value);
                p = bp.clone();
                opt = Adam::new(cfg.adam, &p.slot_shapes())?;
                lr_scale *= 0.5;
                log.restarts += 1;
                continue;
            }
            Some((b, _)) if e.value >= *b => {}
            _ => best = Some((e.value, p.clone())),
        }
        let mut slots = p.slots_mut();
        opt.step(&mut slots, &e.grads).map_err(|err| Error::Training {
            epoch,
            reason: err.to_string(),
        })?;
    }
    log.final_loss = loss_value(&p, x, cfg.lambda, &cfg.quad).map_err(|err| Error::Training {
        epoch: cfg.epochs,
        reason: err.to_string(),
    })?;
    let margins = p.margins().map_err(|err| Error::Training {
        epoch: cfg.epochs,
        reason: err.to_string(),
    })?;
    let model = GPDFlowModel::new(margins, p.flow, cfg.quad.clone())?
        .with_threshold(data.threshold().to_vec())?
        .with_metadata(FitMetadata {
            epochs_run: cfg.epochs,
            final_loss: Some(log.final_loss),
            seed: Some(cfg.seed),
        });
    Ok((model, log))
}
