//! Reference noise models used by the presets and the end-to-end checks.
//!
//! All correlations are exponential with unit decay rate unless noted.

use nalgebra::DVector;

use crate::liouville::{Axis, DensityMatrix, C64};
use crate::noise::{CrossCovariance, NoiseChannel, NoiseSpec};
use crate::propagator::SystemSpec;

/// Default correlation decay rate.
pub const DECAY_RATE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub name: &'static str,
    pub system: SystemSpec,
    pub noise: NoiseSpec,
    pub dt: f64,
}

/// Strongly non-Markovian pure dephasing, `H_s = 0.1σz`, `C(0) = 4`.
pub fn single_qubit_dephasing() -> Model {
    Model {
        name: "single-qubit dephasing",
        system: SystemSpec::qubit(0.1),
        noise: NoiseSpec::single(0, Axis::Z, 4.0, DECAY_RATE, 0.0),
        dt: 0.2,
    }
}

/// Weak dephasing on a slow qubit, `H_s = 0.02σz`, `C_zz(0) = variance`.
pub fn weak_dephasing(variance: f64) -> Model {
    Model {
        name: "weak dephasing",
        system: SystemSpec::qubit(0.02),
        noise: NoiseSpec::single(0, Axis::Z, variance, DECAY_RATE, 0.0),
        dt: 0.04,
    }
}

/// Transverse noise, `H_s = 0.02σz`, `C_xx(0) = 0.01`.
pub fn transverse_noise() -> Model {
    Model {
        name: "transverse noise",
        system: SystemSpec::qubit(0.02),
        noise: NoiseSpec::single(0, Axis::X, 0.01, DECAY_RATE, 0.0),
        dt: 0.04,
    }
}

fn two_channels(cross: f64) -> NoiseSpec {
    let mut noise = NoiseSpec::single(0, Axis::Z, 1.0, DECAY_RATE, 0.0);
    noise.channels.push(NoiseChannel { qubit: 1, ..noise.channels[0].clone() });
    if cross != 0.0 {
        noise.cross.push(CrossCovariance { a: 0, b: 1, value: cross });
    }
    noise
}

/// Coupled qubits, `ω_12 = 0.05`, under independent unit-variance noise.
pub fn coupled_pair() -> Model {
    Model { name: "coupled pair", system: SystemSpec::pair(0.1, 0.1, 0.05), noise: two_channels(0.0), dt: 0.2 }
}

/// Uncoupled qubits under fully correlated unit-variance noise.
pub fn correlated_pair() -> Model {
    Model { name: "correlated pair", system: SystemSpec::pair(0.1, 0.1, 0.0), noise: two_channels(1.0), dt: 0.2 }
}

/// Slow dephasing noise for the decoupling comparison.
pub fn slow_dephasing() -> Model {
    Model {
        name: "slow dephasing",
        system: SystemSpec::qubit(0.1),
        noise: NoiseSpec::single(0, Axis::Z, 1.0, 0.05, 0.0),
        dt: 0.4,
    }
}

fn ket(amplitudes: &[f64]) -> DensityMatrix {
    let norm = amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt();
    let psi = DVector::from_iterator(amplitudes.len(), amplitudes.iter().map(|&a| C64::from(a / norm)));
    DensityMatrix::from_ket(&psi).expect("normalized ket")
}

/// `(|0⟩ + |1⟩)/√2`.
pub fn plus_state() -> DensityMatrix {
    ket(&[1.0, 1.0])
}

/// `(|00⟩ + |10⟩)/√2`, a product state.
pub fn product_pair_state() -> DensityMatrix {
    ket(&[1.0, 0.0, 1.0, 0.0])
}

/// `(|01⟩ + |10⟩)/√2`, a Bell state.
pub fn bell_pair_state() -> DensityMatrix {
    ket(&[0.0, 1.0, 1.0, 0.0])
}
