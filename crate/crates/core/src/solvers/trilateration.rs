use nalgebra::{Matrix3, Matrix4, Matrix4x3, Vector3, Vector4};
use rand::Rng;

use crate::error::{Error, Result};
use crate::manifold::{random_point, TrianglePoint};
use crate::objective::{projection_cost, BeaconSet, MeasurementSet};

use super::{riemannian_steepest_descent, SolverConfig};

/// Default Gauss-Newton refinement passes per transmitter.
pub const GN_ITERATIONS: usize = 20;

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

/// Unconstrained per-transmitter trilateration.
///
/// Each transmitter is initialized by solving the 4×4 linear system
/// `A x − ½ s 1₄ = y_i` in `(x, s)`, treating `s = ‖x‖²` as a free unknown,
/// then refined by Gauss-Newton on the range residuals `r_ij − ‖x − b_j‖`.
/// The result is generally not on the triangle manifold.
pub fn gauss_newton_trilateration(
    beacons: &BeaconSet,
    meas: &MeasurementSet,
    iters: usize,
) -> Result<Matrix3<f64>> {
    let a = beacons.a_matrix();
    let lin = Matrix4::from_fn(|j, k| if k < 3 { a[(j, k)] } else { -0.5 });
    let svd = lin.svd(true, true);
    if svd.singular_values.min() <= RANK_TOL * svd.singular_values.max() {
        return Err(Error::SingularGeometry);
    }

    let mut out = Matrix3::zeros();
    for i in 0..3 {
        let sol = svd
            .solve(meas.y(i), 0.0)
            .map_err(|_| Error::SingularGeometry)?;
        let mut x = Vector3::new(sol[0], sol[1], sol[2]);
        for _ in 0..iters {
            let step = gauss_newton_step(beacons, &meas.ranges()[i], &x)?;
            x += step;
            if step.norm() <= 4.0 * f64::EPSILON * (1.0 + x.norm()) {
                break;
            }
        }
        out.set_column(i, &x);
    }
    Ok(out)
}

fn gauss_newton_step(
    beacons: &BeaconSet,
    ranges: &[f64; 4],
    x: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let mut jac = Matrix4x3::zeros();
    let mut res = Vector4::zeros();
    for j in 0..4 {
        let diff = x - beacons.position(j);
        let dist = diff.norm();
        if dist == 0.0 {
            return Err(Error::SingularGeometry);
        }
        jac.set_row(j, &(diff / dist).transpose());
        res[j] = ranges[j] - dist;
    }
    let svd = jac.svd(true, true);
    if svd.singular_values.min() <= RANK_TOL * svd.singular_values.max() {
        return Err(Error::SingularGeometry);
    }
    svd.solve(&res, 0.0).map_err(|_| Error::SingularGeometry)
}

/// Two-stage initialization: unconstrained Gauss-Newton, then the nearest
/// manifold point found by steepest descent on `‖X − X̃₀‖²` from a random
/// start.
pub fn improved_init<R: Rng + ?Sized>(
    beacons: &BeaconSet,
    meas: &MeasurementSet,
    side: f64,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<TrianglePoint> {
    let target = gauss_newton_trilateration(beacons, meas, GN_ITERATIONS)?;
    project_to_manifold(target, side, cfg, rng)
}

pub(crate) fn project_to_manifold<R: Rng + ?Sized>(
    target: Matrix3<f64>,
    side: f64,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<TrianglePoint> {
    let start = random_point(side, rng)?;
    let report = riemannian_steepest_descent(&projection_cost(target), &start, cfg)?;
    Ok(report.final_point)
}
