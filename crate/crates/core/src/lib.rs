//! Generalized low rank models: fitting `X Y` to heterogeneous, partially
//! observed tables under per-entry losses and per-row / per-column
//! regularizers.

pub mod analysis;
pub mod data;
pub mod error;
pub mod fit;
pub mod init;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod persist;
pub mod regularizers;
pub mod select;
pub mod synth;

pub use data::{Column, DataTable, FeatureKind, Value};
pub use error::{GlrmError, Result};
pub use losses::LossSpec;
pub use model::{Factors, GlrmProblem, ModelSpec};
pub use regularizers::RegSpec;
