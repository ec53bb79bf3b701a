#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dependence;
pub mod error;
pub mod mgpd;
pub mod model;
pub mod numerics;
pub mod realnvp;
pub mod risk;
pub mod simulate;
pub mod threshold;

pub use dependence::{DependenceReport, Estimate, GeneratorSamples};
pub use error::{Error, Result};
pub use mgpd::{GeneratorSampler, MarginalParams, QuadratureConfig};
pub use model::{ArchSpec, ExceedanceDataset, GPDFlowModel, TrainConfig};
pub use numerics::{Adam, AdamConfig, Matrix, Mlp, Tape, Var};
pub use realnvp::FlowNetwork;
pub use risk::{CoVaRQuery, ExceedanceModel, RiskEstimate};
pub use threshold::{PlateauConfig, ThresholdResult};
