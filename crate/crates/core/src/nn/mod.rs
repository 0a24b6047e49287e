//! Layers, optimizers, schedulers and spectral normalization.

mod check;
mod layers;
mod optim;
mod param;
mod schedule;
pub mod spectral;

pub use check::{check_params, Module, ParamCheck};
pub use layers::{
    apply_updates, uniform_init, BatchNorm1d, Conv1d, ConvTranspose1d, Linear, Mode,
    SpectralLinear, StateUpdate,
};
pub use optim::{sgd_step, AdamConfig, AdamState};
pub use param::{Param, ParamId, ParamSet};
pub use schedule::{EarlyStopper, PlateauScheduler, StopDecision};
pub use spectral::{power_iteration, spectral_normalize, SpectralNormState};
