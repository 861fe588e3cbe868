//! Shared benchmark inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttm_core::liouville::random_channel;
use ttm_core::spectroscopy::CorrelationSeries;
use ttm_core::{Axis, MapSeries, C64};

/// `k` random CPTP maps on `dim` levels, reproducible from `seed`.
pub fn random_maps(dim: usize, k: usize, seed: u64) -> MapSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let maps = (0..k).map(|_| random_channel(dim, 2, &mut rng)).collect();
    MapSeries::new(0.1, maps).expect("nonempty series")
}

/// Unit exponential correlation sampled at `len` points.
pub fn lorentzian(len: usize, dt: f64) -> CorrelationSeries {
    let values: Vec<C64> = (0..len).map(|n| C64::from((-(n as f64) * dt).exp())).collect();
    CorrelationSeries::single(Axis::Z, Axis::Z, dt, &values)
}
