//! Transfer-tensor analysis of noisy qubit dynamics.

pub mod error;
pub mod liouville;
pub mod mapfile;
pub mod models;
pub mod multiqubit;
pub mod noise;
pub mod nonmarkov;
pub mod propagator;
pub mod qpt;
pub mod quadrature;
pub mod spectroscopy;
pub mod ttm;

pub use error::{Error, Result};
pub use liouville::{Axis, ChoiMatrix, DensityMatrix, Superoperator, C64, CMatrix};
pub use noise::{CorrelationShape, NoiseChannel, NoiseSpec};
pub use propagator::{MapSeries, SystemSpec};
pub use ttm::{KernelSeries, TransferTensorSeries};
