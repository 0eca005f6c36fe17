//! Kernel methods for learning operators between function spaces.
//!
//! The learned operator is the composition `chi . f . phi`: a measurement
//! map `phi` turning an input function into a vector, a vector-valued kernel
//! ridge regressor `f` with a diagonal kernel `S(U, U') I`, and an optimal
//! recovery map `chi` turning predicted output measurements back into a
//! function.
//!
//! * [`kernels`]: scalar kernels and Gram matrices.
//! * [`recovery`]: measurement operators, Cholesky preconditioners, recovery maps.
//! * [`regression`]: kernel ridge regression, GP posterior variance, tuning.
//! * [`preprocess`]: PCA of measurement vectors.
//! * [`operator`]: the assembled operator, mesh-invariant evaluation, UQ.
//! * [`data`]: synthetic PDE benchmarks and the on-disk dataset container.
//! * [`metrics`]: relative L2 errors and inference FLOP counts.

pub mod data;
pub mod error;
pub mod kernels;
pub mod metrics;
pub mod operator;
pub mod preprocess;
pub mod recovery;
pub mod regression;

pub use error::{Error, Result};
pub use kernels::{KernelSpec, ScalarKernel};
pub use operator::{OperatorConfig, OperatorModel};
pub use recovery::{FunctionSamples, MeasurementOperator, RecoveryMap};
pub use regression::TrainedRegressor;
