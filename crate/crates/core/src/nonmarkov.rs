//! Bloch-volume non-Markovianity diagnostics for single-qubit dynamics.
//!
//! A zero measure does not certify Markovian dynamics: the volume ignores
//! the affine shift of the Bloch ball, so memory that only moves its centre
//! goes undetected.

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::liouville::bloch_affine;
use crate::propagator::MapSeries;
use crate::ttm::{predict_maps, TransferTensorSeries};

/// Caveat attached to emitted measures.
pub const SHIFT_CAVEAT: &str = "volume measure is blind to memory carried only by the Bloch shift vector";

/// Bloch volume `V(t_n)` for `n = 0..=K`, with `V(t_0) = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSeries {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl VolumeSeries {
    /// Indices where `|V| > 1` beyond `tol`, which a physical trace-preserving
    /// qubit process cannot produce.
    pub fn unphysical_points(&self, tol: f64) -> Vec<usize> {
        self.values.iter().enumerate().filter(|(_, v)| v.abs() > 1.0 + tol).map(|(n, _)| n).collect()
    }

    /// Running measure after each point.
    pub fn cumulative_measure(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for w in self.values.windows(2) {
            acc += (w[1] - w[0]).max(0.0);
            out.push(acc / self.values[0]);
        }
        out
    }

    /// CSV with columns `time,volume,cumulative_measure`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "volume", "cumulative_measure"])?;
        for (n, (v, c)) in self.values.iter().zip(self.cumulative_measure()).enumerate() {
            w.write_record([(n as f64 * self.dt).to_string(), v.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn volume_series(maps: &MapSeries) -> Result<VolumeSeries> {
    if maps.dim() != 2 {
        return Err(Error::UnsupportedDimension(maps.dim()));
    }
    let mut values = vec![1.0];
    for m in &maps.maps {
        values.push(bloch_affine(m)?.volume());
    }
    Ok(VolumeSeries { dt: maps.dt, values })
}

/// Sum of positive forward differences divided by `V(0)`.
pub fn volume_measure(vs: &VolumeSeries) -> Result<f64> {
    if vs.values.len() < 2 {
        return Err(invalid("volume series needs at least two points"));
    }
    if vs.values[0] == 0.0 {
        return Err(invalid("initial volume is zero"));
    }
    Ok(*vs.cumulative_measure().last().unwrap())
}

/// Volume series and measure over maps propagated past the measured window.
pub fn extended_volume_measure(ttms: &TransferTensorSeries, k_trunc: usize, n_total: usize) -> Result<(VolumeSeries, f64)> {
    let maps = predict_maps(ttms, k_trunc, n_total)?;
    let vs = volume_series(&maps)?;
    let measure = volume_measure(&vs)?;
    Ok((vs, measure))
}
