#![allow(dead_code)]

use eqtri::manifold::TrianglePoint;
use eqtri::objective::{true_ranges, BeaconSet, MeasurementSet};
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const SIDE: f64 = 0.1;

/// Transmitter triple of the reference experiment, with the apex height kept
/// exact so the point is feasible.
pub fn paper_truth() -> TrianglePoint {
    TrianglePoint::from_vertices(
        Vector3::new(2.0, 2.0, 1.0),
        Vector3::new(2.1, 2.0, 1.0),
        Vector3::new(2.05, 2.0, 1.0 + 3f64.sqrt() / 20.0),
        SIDE,
    )
    .unwrap()
}

pub fn beacons() -> BeaconSet {
    BeaconSet::room_corners()
}

pub fn exact_measurements(x: &Matrix3<f64>) -> MeasurementSet {
    MeasurementSet::exact(&beacons(), x).unwrap()
}

pub fn noisy_measurements(x: &Matrix3<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> MeasurementSet {
    let noise = Normal::new(0.0, sigma).unwrap();
    let r = true_ranges(&beacons(), x).map(|row| row.map(|r| r + noise.sample(rng)));
    MeasurementSet::new(&beacons(), r).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_vertex_error(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (0..3)
        .map(|i| (a.column(i) - b.column(i)).norm())
        .fold(0.0, f64::max)
}
