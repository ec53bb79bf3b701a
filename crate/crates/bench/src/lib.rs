//! Shared fixtures for the benchmarks.

use gpdflow::mgpd::MarginalParams;
use gpdflow::model::{initial_params, ArchSpec, ExceedanceDataset, ModelParams, TrainConfig};
use gpdflow::simulate::{sample_parametric_mgpd, ReverseExponentialGen};
use gpdflow::{GPDFlowModel, Matrix};

/// Simulated exceedances of the reverse-exponential scenario in `d` dimensions.
pub fn scenario_data(d: usize, n: usize, seed: u64) -> ExceedanceDataset {
    let gen = ReverseExponentialGen::scenario(d).expect("d <= 5");
    let sigma = [0.5, 1.2, 1.0, 1.5, 0.8][..d].to_vec();
    let gamma = [-0.1, 0.2, 0.0, 0.15, -0.05][..d].to_vec();
    let m = MarginalParams::new(sigma, gamma).expect("valid margins");
    let x: Matrix = sample_parametric_mgpd(&gen, &m, n, seed).expect("sampling");
    ExceedanceDataset::from_exceedances(x).expect("exceedances")
}

/// Starting parameters for a fit with `layers` coupling layers.
pub fn start_params(data: &ExceedanceDataset, layers: usize) -> (ModelParams, TrainConfig) {
    let cfg = TrainConfig::default();
    let arch = ArchSpec {
        layers,
        hidden: None,
    };
    (initial_params(data, &arch, &cfg).expect("init"), cfg)
}

/// A model with random (non-identity) flow weights.
pub fn random_model(d: usize, layers: usize, seed: u64) -> GPDFlowModel {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let flow = gpdflow::FlowNetwork::random(d, layers, &[4 * d], 0.3, &mut rng).expect("flow");
    let m = MarginalParams::new(vec![1.0; d], vec![0.1; d]).expect("margins");
    GPDFlowModel::new(m, flow, gpdflow::QuadratureConfig::default())
        .expect("model")
        .with_threshold(vec![0.0; d])
        .expect("threshold")
}
