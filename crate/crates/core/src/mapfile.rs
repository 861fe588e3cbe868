//! JSON interchange format for map, tensor and kernel series.
//!
//! Each record carries `dim`, `dt`, `time_index`, the vectorization
//! convention and the `d²×d²` entries in row-major order as `[re, im]`
//! pairs. Floats round-trip bit-exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::liouville::{CMatrix, Superoperator, C64};
use crate::propagator::MapSeries;
use crate::ttm::{KernelSeries, Source, TransferTensorSeries};

pub const CONVENTION: &str = "row-major-vec";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    DynamicalMaps,
    TransferTensors,
    MemoryKernel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapRecord {
    pub dim: usize,
    pub dt: f64,
    pub time_index: usize,
    pub convention: String,
    pub entries: Vec<[f64; 2]>,
}

impl MapRecord {
    pub fn new(s: &Superoperator, dt: f64, time_index: usize) -> Self {
        let m = s.matrix();
        let n = m.nrows();
        let entries = (0..n * n).map(|k| m[(k / n, k % n)]).map(|z| [z.re, z.im]).collect();
        Self { dim: s.dim(), dt, time_index, convention: CONVENTION.to_string(), entries }
    }

    pub fn to_superoperator(&self) -> Result<Superoperator> {
        if self.convention != CONVENTION {
            return Err(invalid(format!("unsupported convention {:?}", self.convention)));
        }
        let n = self.dim * self.dim;
        if self.entries.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: self.entries.len() });
        }
        let m = CMatrix::from_fn(n, n, |r, c| {
            let [re, im] = self.entries[r * n + c];
            C64::new(re, im)
        });
        Superoperator::new(self.dim, m)
    }
}

/// A series of records plus free-form provenance metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub kind: SeriesKind,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub records: Vec<MapRecord>,
    /// System Liouvillian a kernel was extracted against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<MapRecord>,
}

impl MapDocument {
    pub fn from_maps(maps: &MapSeries) -> Self {
        let records = maps.maps.iter().enumerate().map(|(k, m)| MapRecord::new(m, maps.dt, k + 1)).collect();
        Self { kind: SeriesKind::DynamicalMaps, metadata: BTreeMap::new(), records, generator: None }
    }

    pub fn from_ttms(ttms: &TransferTensorSeries) -> Self {
        let records = ttms.tensors.iter().enumerate().map(|(k, m)| MapRecord::new(m, ttms.dt, k + 1)).collect();
        Self { kind: SeriesKind::TransferTensors, metadata: BTreeMap::new(), records, generator: None }
    }

    pub fn from_kernels(ks: &KernelSeries) -> Self {
        let records = ks
            .times
            .iter()
            .zip(&ks.kernels)
            .map(|(&t, k)| MapRecord::new(k, ks.dt, (t / ks.dt).round() as usize))
            .collect();
        Self {
            kind: SeriesKind::MemoryKernel,
            metadata: BTreeMap::new(),
            records,
            generator: Some(MapRecord::new(&ks.ls, ks.dt, 0)),
        }
    }

    fn expect(&self, kind: SeriesKind) -> Result<()> {
        if self.kind != kind {
            return Err(invalid(format!("expected {kind:?}, found {:?}", self.kind)));
        }
        Ok(())
    }

    fn dt(&self) -> Result<f64> {
        let dt = self.records.first().map_or(0.0, |r| r.dt);
        if self.records.iter().any(|r| r.dt != dt) {
            return Err(invalid("records disagree on dt"));
        }
        Ok(dt)
    }

    /// Records must be consecutive, starting at `first`.
    fn ordered(&self, first: usize) -> Result<Vec<Superoperator>> {
        self.records
            .iter()
            .enumerate()
            .map(|(k, r)| {
                if r.time_index != k + first {
                    return Err(invalid(format!("record {k} has time_index {}, expected {}", r.time_index, k + first)));
                }
                r.to_superoperator()
            })
            .collect()
    }

    pub fn to_maps(&self) -> Result<MapSeries> {
        self.expect(SeriesKind::DynamicalMaps)?;
        MapSeries::new(self.dt()?, self.ordered(1)?)
    }

    pub fn to_ttms(&self) -> Result<TransferTensorSeries> {
        self.expect(SeriesKind::TransferTensors)?;
        Ok(TransferTensorSeries { dt: self.dt()?, tensors: self.ordered(1)?, source: Source::Ingested })
    }

    pub fn to_kernels(&self) -> Result<KernelSeries> {
        self.expect(SeriesKind::MemoryKernel)?;
        let first = self.records.first().map_or(0, |r| r.time_index);
        let dt = self.dt()?;
        let kernels = self.ordered(first)?;
        let ls = self.generator.as_ref().ok_or_else(|| invalid("kernel document without generator"))?.to_superoperator()?;
        let times = (0..kernels.len()).map(|k| (k + first) as f64 * dt).collect();
        Ok(KernelSeries { dt, times, kernels, ls })
    }

    pub fn write(&self, writer: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn read(reader: impl Read) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }
}
