//! Smooth costs over 3×3 transmitter matrices.
//!
//! The localization cost linearizes the range equations by subtracting the
//! squared beacon norms:
//!
//! ```text
//! y_i = ½(b² − r_i²),      A x_i − ½‖x_i‖² 1₄ = y_i   (noiseless)
//! f(X) = Σ_i ‖A x_i − ½‖x_i‖² 1₄ − y_i‖²
//! ```

use nalgebra::{Matrix3, Matrix4, Matrix4x3, Vector3, Vector4};

use crate::error::{Error, Result};

/// Maximum condition number of `[A | 1₄]` for a usable beacon layout.
pub const MAX_BEACON_CONDITION: f64 = 1e8;

/// Four receivers at known positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BeaconSet {
    positions: [Vector3<f64>; 4],
}

impl BeaconSet {
    /// Builds a beacon set, rejecting coplanar layouts.
    pub fn new(positions: [Vector3<f64>; 4]) -> Result<Self> {
        let set = Self { positions };
        let cond = set.affine_condition();
        if !(cond < MAX_BEACON_CONDITION) {
            return Err(Error::CoplanarBeacons(cond));
        }
        Ok(set)
    }

    /// Skips the coplanarity check; downstream solvers must handle rank loss.
    pub fn new_unchecked(positions: [Vector3<f64>; 4]) -> Self {
        Self { positions }
    }

    /// Room-corner layout used by the default scenario.
    pub fn room_corners() -> Self {
        Self::new([
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(4.0, 0.0, 3.0),
            Vector3::new(0.0, 4.0, 3.0),
            Vector3::new(4.0, 4.0, 0.0),
        ])
        .expect("corner beacons are not coplanar")
    }

    pub fn positions(&self) -> &[Vector3<f64>; 4] {
        &self.positions
    }

    pub fn position(&self, j: usize) -> Vector3<f64> {
        self.positions[j]
    }

    /// `A`, whose j-th row is `b_jᵀ`.
    pub fn a_matrix(&self) -> Matrix4x3<f64> {
        Matrix4x3::from_fn(|j, k| self.positions[j][k])
    }

    /// `b²`, the squared beacon norms.
    pub fn squared_norms(&self) -> Vector4<f64> {
        Vector4::from_fn(|j, _| self.positions[j].norm_squared())
    }

    /// `[A | 1₄]`.
    pub fn affine_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|j, k| if k < 3 { self.positions[j][k] } else { 1.0 })
    }

    pub fn affine_condition(&self) -> f64 {
        let sv = self.affine_matrix().singular_values();
        let max = sv.max();
        let min = sv.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Same layout shifted by `offset`.
    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        Self {
            positions: self.positions.map(|p| p + offset),
        }
    }
}

/// Measured ranges `r_ij` and the derived vectors `y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    ranges: [[f64; 4]; 3],
    y: [Vector4<f64>; 3],
}

impl MeasurementSet {
    pub fn new(beacons: &BeaconSet, ranges: [[f64; 4]; 3]) -> Result<Self> {
        if ranges
            .iter()
            .flatten()
            .any(|r| !(r.is_finite() && *r > 0.0))
        {
            return Err(Error::InvalidMeasurement(
                "ranges must be finite and positive",
            ));
        }
        let bsq = beacons.squared_norms();
        let y = ranges.map(|ri| Vector4::from_fn(|j, _| 0.5 * (bsq[j] - ri[j] * ri[j])));
        Ok(Self { ranges, y })
    }

    /// Exact ranges from known transmitter positions.
    pub fn exact(beacons: &BeaconSet, x: &Matrix3<f64>) -> Result<Self> {
        Self::new(beacons, true_ranges(beacons, x))
    }

    pub fn ranges(&self) -> &[[f64; 4]; 3] {
        &self.ranges
    }

    pub fn y(&self, i: usize) -> &Vector4<f64> {
        &self.y[i]
    }
}

/// Distances from each column of `x` to each beacon.
pub fn true_ranges(beacons: &BeaconSet, x: &Matrix3<f64>) -> [[f64; 4]; 3] {
    let mut r = [[0.0; 4]; 3];
    for (i, row) in r.iter_mut().enumerate() {
        for (j, rij) in row.iter_mut().enumerate() {
            *rij = (x.column(i) - beacons.position(j)).norm();
        }
    }
    r
}

/// A twice-differentiable cost on the ambient space of 3×3 matrices.
pub trait SmoothCost: Sync {
    fn value(&self, x: &Matrix3<f64>) -> f64;
    fn euclidean_gradient(&self, x: &Matrix3<f64>) -> Matrix3<f64>;
    /// Euclidean Hessian at `x` applied to `dir`.
    fn euclidean_hessian_apply(&self, x: &Matrix3<f64>, dir: &Matrix3<f64>) -> Matrix3<f64>;

    /// Estimate of the absolute rounding error in `value(x)`.
    fn value_roundoff(&self, x: &Matrix3<f64>) -> f64 {
        16.0 * f64::EPSILON * self.value(x).abs()
    }
}

/// The least-squares trilateration cost.
#[derive(Debug, Clone)]
pub struct LocalizationCost {
    a: Matrix4x3<f64>,
    y: [Vector4<f64>; 3],
}

pub fn localization_cost(beacons: &BeaconSet, meas: &MeasurementSet) -> LocalizationCost {
    LocalizationCost {
        a: beacons.a_matrix(),
        y: meas.y,
    }
}

impl LocalizationCost {
    #[inline]
    fn residual(&self, xi: &Vector3<f64>, i: usize) -> Vector4<f64> {
        self.a * xi - Vector4::repeat(0.5 * xi.norm_squared()) - self.y[i]
    }

    /// `∂r_i/∂x_i = A − 1₄ x_iᵀ`.
    #[inline]
    fn jacobian(&self, xi: &Vector3<f64>) -> Matrix4x3<f64> {
        Matrix4x3::from_fn(|j, k| self.a[(j, k)] - xi[k])
    }
}

impl SmoothCost for LocalizationCost {
    fn value(&self, x: &Matrix3<f64>) -> f64 {
        (0..3)
            .map(|i| self.residual(&x.column(i).into_owned(), i).norm_squared())
            .sum()
    }

    fn euclidean_gradient(&self, x: &Matrix3<f64>) -> Matrix3<f64> {
        let mut g = Matrix3::zeros();
        for i in 0..3 {
            let xi = x.column(i).into_owned();
            let r = self.residual(&xi, i);
            g.set_column(i, &(self.jacobian(&xi).transpose() * r * 2.0));
        }
        g
    }

    fn euclidean_hessian_apply(&self, x: &Matrix3<f64>, dir: &Matrix3<f64>) -> Matrix3<f64> {
        let mut h = Matrix3::zeros();
        for i in 0..3 {
            let xi = x.column(i).into_owned();
            let v = dir.column(i).into_owned();
            let r = self.residual(&xi, i);
            let jac = self.jacobian(&xi);
            // 2(JᵀJ v − (1ᵀ r) v)
            h.set_column(i, &((jac.transpose() * (jac * v) - v * r.sum()) * 2.0));
        }
        h
    }

    fn value_roundoff(&self, x: &Matrix3<f64>) -> f64 {
        // the residual cancels terms of size ‖A‖‖x‖ + ½‖x‖² + ‖y‖
        let a_norm = self.a.norm();
        (0..3)
            .map(|i| {
                let xi = x.column(i).into_owned();
                let n = xi.norm();
                let term = a_norm * n + n * n + self.y[i].norm();
                let r_err = 8.0 * f64::EPSILON * term;
                2.0 * self.residual(&xi, i).norm() * r_err + r_err * r_err
            })
            .sum::<f64>()
            + 16.0 * f64::EPSILON * self.value(x)
    }
}

/// `‖X − X̃₀‖²_F`, used to pull an unconstrained estimate onto the manifold.
#[derive(Debug, Clone)]
pub struct ProjectionCost {
    target: Matrix3<f64>,
}

pub fn projection_cost(target: Matrix3<f64>) -> ProjectionCost {
    ProjectionCost { target }
}

impl ProjectionCost {
    pub fn target(&self) -> &Matrix3<f64> {
        &self.target
    }
}

impl SmoothCost for ProjectionCost {
    fn value(&self, x: &Matrix3<f64>) -> f64 {
        (x - self.target).norm_squared()
    }

    fn euclidean_gradient(&self, x: &Matrix3<f64>) -> Matrix3<f64> {
        (x - self.target) * 2.0
    }

    fn euclidean_hessian_apply(&self, _x: &Matrix3<f64>, dir: &Matrix3<f64>) -> Matrix3<f64> {
        dir * 2.0
    }

    fn value_roundoff(&self, x: &Matrix3<f64>) -> f64 {
        let diff = x - self.target;
        let err = 4.0 * f64::EPSILON * (x.norm() + self.target.norm());
        2.0 * diff.norm() * err + err * err + 16.0 * f64::EPSILON * diff.norm_squared()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn paper_truth() -> Matrix3<f64> {
        Matrix3::from_columns(&[
            Vector3::new(2.0, 2.0, 1.0),
            Vector3::new(2.1, 2.0, 1.0),
            Vector3::new(2.05, 2.0, 1.0 + 3f64.sqrt() / 20.0),
        ])
    }

    fn random_matrix(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Matrix3<f64> {
        Matrix3::from_fn(|_, _| rng.random_range(lo..hi))
    }

    #[test]
    fn zero_cost_at_truth() {
        let beacons = BeaconSet::room_corners();
        let x = paper_truth();
        let cost = localization_cost(&beacons, &MeasurementSet::exact(&beacons, &x).unwrap());
        assert!(cost.value(&x) < 1e-24);
        assert!(cost.euclidean_gradient(&x).norm() < 1e-12);
    }

    #[test]
    fn coplanar_beacons_rejected() {
        let flat = [
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(4.0, 0.0, 3.0),
            Vector3::new(0.0, 4.0, 3.0),
            Vector3::new(4.0, 4.0, 3.0),
        ];
        assert!(matches!(
            BeaconSet::new(flat),
            Err(Error::CoplanarBeacons(_))
        ));
    }

    #[test]
    fn nonpositive_ranges_rejected() {
        let b = BeaconSet::room_corners();
        let mut r = true_ranges(&b, &paper_truth());
        r[1][2] = 0.0;
        assert!(MeasurementSet::new(&b, r).is_err());
    }

    #[test]
    fn localization_gradient_matches_central_differences() {
        let beacons = BeaconSet::room_corners();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy: [[f64; 4]; 3] = true_ranges(&beacons, &paper_truth())
            .map(|row| row.map(|r| r + rng.random_range(-0.01..0.01)));
        let cost = localization_cost(&beacons, &MeasurementSet::new(&beacons, noisy).unwrap());
        for _ in 0..20 {
            let x = random_matrix(&mut rng, 0.0, 4.0);
            let g = cost.euclidean_gradient(&x);
            let h = 1e-6;
            let fd = Matrix3::from_fn(|r, c| {
                let mut e = Matrix3::zeros();
                e[(r, c)] = h;
                (cost.value(&(x + e)) - cost.value(&(x - e))) / (2.0 * h)
            });
            assert!(
                (fd - g).norm() <= 1e-6 * g.norm().max(1.0),
                "{}",
                (fd - g).norm()
            );
        }
    }

    #[test]
    fn localization_hessian_matches_gradient_differences() {
        let beacons = BeaconSet::room_corners();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cost = localization_cost(
            &beacons,
            &MeasurementSet::exact(&beacons, &paper_truth()).unwrap(),
        );
        for _ in 0..20 {
            let x = random_matrix(&mut rng, 0.0, 4.0);
            let v = random_matrix(&mut rng, -1.0, 1.0);
            let hv = cost.euclidean_hessian_apply(&x, &v);
            let h = 1e-5;
            let fd = (cost.euclidean_gradient(&(x + v * h))
                - cost.euclidean_gradient(&(x - v * h)))
                / (2.0 * h);
            assert!((fd - hv).norm() <= 1e-5 * hv.norm().max(1.0));
        }
    }

    #[test]
    fn projection_cost_basics() {
        let t = paper_truth();
        let c = projection_cost(t);
        assert_eq!(c.value(&t), 0.0);
        assert_eq!(c.euclidean_gradient(&t), Matrix3::zeros());
        let v = Matrix3::identity();
        assert_eq!(c.euclidean_hessian_apply(&t, &v), v * 2.0);
    }

    #[test]
    fn cost_invariant_under_beacon_relabeling() {
        let beacons = BeaconSet::room_corners();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ranges = true_ranges(&beacons, &paper_truth())
            .map(|row| row.map(|r| r + rng.random_range(-0.01..0.01)));
        let cost = localization_cost(&beacons, &MeasurementSet::new(&beacons, ranges).unwrap());
        let perm = [2usize, 0, 3, 1];
        let pb = BeaconSet::new(perm.map(|j| beacons.position(j))).unwrap();
        let pr = ranges.map(|row| perm.map(|j| row[j]));
        let pcost = localization_cost(&pb, &MeasurementSet::new(&pb, pr).unwrap());
        for _ in 0..10 {
            let x = random_matrix(&mut rng, 0.0, 4.0);
            let (a, b) = (cost.value(&x), pcost.value(&x));
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
