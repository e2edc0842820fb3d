#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimate;
pub mod gauss;
pub mod losses;
pub mod model;
pub mod quadrature;
pub mod simulate;
pub mod theory;

pub use error::{Error, Result};
pub use gauss::{expectations, normal_cdf, Expectations};
pub use losses::{Loss, LossKind};
pub use model::PopulationModel;
