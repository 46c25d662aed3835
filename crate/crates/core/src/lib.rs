pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod lina;
pub mod linalg;
pub mod mdlina;
pub mod measurement;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod synth;
pub mod triad;

pub use data::{augment, standardize, AugmentedDataset, DomainDataset, MultiDomainDataset};
pub use error::{Error, Result};
pub use params::{Hyperparams, PenaltyMode};
