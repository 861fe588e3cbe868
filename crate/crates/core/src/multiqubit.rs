//! Two-qubit collective decoherence: separable versus correlated transfer
//! tensors and the split of the correlated part into coherent coupling and
//! correlated-noise kernel.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liouville::{choi_product, factorize_bipartite, Superoperator};
use crate::noise::{CorrelationShape, NoiseSpec};
use crate::propagator::MapSeries;
use crate::ttm::{build_ttms, norm_profile, TransferTensorSeries};

#[derive(Clone, Debug, PartialEq)]
pub struct UnraveledSeries {
    pub dt: f64,
    pub full: TransferTensorSeries,
    /// Tensors of the product maps `E_{n,1} ⊗ E_{n,2}`.
    pub separable: TransferTensorSeries,
    /// `full − separable`, tensor by tensor.
    pub correlated: Vec<Superoperator>,
}

impl UnraveledSeries {
    /// CSV with columns `n,full,separable,correlated` of Frobenius norms.
    pub fn write_norms_csv(&self, writer: impl Write) -> Result<()> {
        let full = norm_profile(&self.full, false);
        let sep = norm_profile(&self.separable, false);
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "full", "separable", "correlated"])?;
        for (n, ((f, s), c)) in full.iter().zip(&sep).zip(&self.correlated).enumerate() {
            w.write_record([(n + 1).to_string(), f.to_string(), s.to_string(), c.frobenius_norm().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Product part of a two-qubit map, built from its normalized partial
/// traces.
pub fn separable_part(map: &Superoperator) -> Result<Superoperator> {
    let f = factorize_bipartite(&map.to_choi())?;
    Ok(Superoperator::from_choi(&choi_product(&f.first, &f.second)?))
}

pub fn unravel(maps: &MapSeries) -> Result<UnraveledSeries> {
    if maps.dim() != 4 {
        return Err(Error::UnsupportedDimension(maps.dim()));
    }
    let full = build_ttms(maps)?;
    let product_maps = maps.maps.iter().map(separable_part).collect::<Result<Vec<_>>>()?;
    let separable = build_ttms(&MapSeries::new(maps.dt, product_maps)?)?;
    let correlated = full.tensors.iter().zip(&separable.tensors).map(|(a, b)| a - b).collect();
    Ok(UnraveledSeries { dt: maps.dt, full, separable, correlated })
}

/// Generator and kernel contributions recovered from correlated first
/// tensors at steps `dt` and `2dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Isolation {
    /// `δL·dt = (4δT₁ − δT₁')/2`.
    pub generator_dt: Superoperator,
    /// `δK(t₁)·dt² = −(2δT₁ − δT₁')/2`.
    pub kernel_dt2: Superoperator,
}

/// Splits the correlated first tensor assuming `δT₁ ≈ δL dt + δK dt²` at
/// both step sizes with the same kernel value, which needs `dt` well below
/// the noise correlation time.
pub fn isolate_generator_kernel(dt1: &Superoperator, dt1_double: &Superoperator) -> Result<Isolation> {
    if dt1.dim() != dt1_double.dim() {
        return Err(Error::DimensionMismatch { expected: dt1.dim(), found: dt1_double.dim() });
    }
    let generator_dt = (&dt1.scale(4.0) - dt1_double).scale(0.5);
    let kernel_dt2 = (&dt1.scale(2.0) - dt1_double).scale(-0.5);
    Ok(Isolation { generator_dt, kernel_dt2 })
}

/// Fraction of the shortest noise correlation time that `dt` may reach
/// before the isolation is flagged.
pub const VALIDITY_FRACTION: f64 = 0.1;

/// Warning when `dt` is not small against the correlation time of `noise`.
pub fn isolation_validity(noise: &NoiseSpec, dt: f64) -> Option<String> {
    let tau = noise.channels.iter().map(|c| correlation_time(&c.shape)).fold(f64::INFINITY, f64::min);
    (dt > VALIDITY_FRACTION * tau).then(|| {
        format!("dt = {dt} is not small against the noise correlation time {tau:.3}; the kernel split is approximate")
    })
}

fn correlation_time(shape: &CorrelationShape) -> f64 {
    match shape {
        CorrelationShape::ModulatedExponential { decay_rate, .. } => 1.0 / decay_rate,
        CorrelationShape::Tabulated { dt, values } => {
            let c0 = values.first().copied().unwrap_or(0.0);
            values.iter().position(|&v| v.abs() < c0.abs() / std::f64::consts::E).map_or(f64::INFINITY, |n| n as f64 * dt)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    CouplingDominated,
    NoiseDominated,
    Mixed,
    /// Both correlated contributions vanish.
    Separable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::CouplingDominated => "coupling-dominated",
            Verdict::NoiseDominated => "noise-dominated",
            Verdict::Mixed => "mixed",
            Verdict::Separable => "separable",
        })
    }
}

/// Below this Frobenius norm a correlated contribution counts as absent.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectiveReport {
    pub generator_norm: f64,
    pub kernel_norm: f64,
    /// `generator_norm / kernel_norm`; infinite when the kernel part
    /// vanishes.
    pub ratio: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub full_norms: Vec<f64>,
    pub separable_norms: Vec<f64>,
    pub correlated_norms: Vec<f64>,
    pub notes: Vec<String>,
}

pub fn collective_report(u: &UnraveledSeries, iso: &Isolation, threshold: f64) -> CollectiveReport {
    let generator_norm = iso.generator_dt.frobenius_norm();
    let kernel_norm = iso.kernel_dt2.frobenius_norm();
    let ratio = if kernel_norm > 0.0 { generator_norm / kernel_norm } else if generator_norm > 0.0 { f64::INFINITY } else { 0.0 };
    let verdict = if generator_norm < ZERO_NORM && kernel_norm < ZERO_NORM {
        Verdict::Separable
    } else if ratio >= threshold {
        Verdict::CouplingDominated
    } else if ratio <= 1.0 / threshold {
        Verdict::NoiseDominated
    } else {
        Verdict::Mixed
    };
    let notes = vec![
        "generator part is attributed to direct qubit-qubit coupling".to_string(),
        "kernel part bounds the correlated noise but may also contain coupling contributions".to_string(),
    ];
    CollectiveReport {
        generator_norm,
        kernel_norm,
        ratio,
        threshold,
        verdict,
        full_norms: norm_profile(&u.full, false),
        separable_norms: norm_profile(&u.separable, false),
        correlated_norms: u.correlated.iter().map(Superoperator::frobenius_norm).collect(),
        notes,
    }
}

impl CollectiveReport {
    /// `key = value` lines.
    pub fn write_text(&self, mut writer: impl Write) -> Result<()> {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        writeln!(writer, "generator_norm = {:e}", self.generator_norm)?;
        writeln!(writer, "kernel_norm = {:e}", self.kernel_norm)?;
        writeln!(writer, "ratio = {:e}", self.ratio)?;
        writeln!(writer, "threshold = {}", self.threshold)?;
        writeln!(writer, "verdict = {}", self.verdict)?;
        writeln!(writer, "full_norms = {}", list(&self.full_norms))?;
        writeln!(writer, "separable_norms = {}", list(&self.separable_norms))?;
        writeln!(writer, "correlated_norms = {}", list(&self.correlated_norms))?;
        for n in &self.notes {
            writeln!(writer, "note = {n}")?;
        }
        Ok(())
    }
}
