//! MPPI path tracking for a kinematic bicycle, with an optional learned
//! control-affine residual in the prediction model.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod dynamics;
pub mod error;
pub mod icode;
pub mod metrics;
pub mod mppi;
pub mod paths;
pub mod rng;
pub mod simulation;
pub mod training;

pub use dynamics::{
    ControlInput, DisturbanceConfig, Dynamics, NominalModel, Plant, StateDerivative, VehicleConfig, VehicleState,
};
pub use error::{Error, Result};
pub use icode::{IcodeModel, NetworkParams, PredictionModel};
pub use metrics::{TrackingRmse, DistributionSummary, RateHistogram};
pub use mppi::{CostConfig, MppiConfig, MppiController};
pub use paths::{PathPoint, ReferencePath};
pub use rng::StreamKey;
pub use simulation::{run_episode, EpisodeRecord, EpisodeSpec};
pub use training::{TrainConfig, Transition, TransitionSource};
