// Validation checks are written as negated comparisons so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod combine;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod hyperfit;
pub mod imis;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod numeric;
pub mod params;
pub mod posterior;
pub mod priors;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{project_epidemic, DemographicSchedule, Projection};
pub use params::Theta;
