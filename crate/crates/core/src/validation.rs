//! Seeded property checks of the manifold geometry, run by `eqtri validate`
//! and the acceptance suite.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::manifold::{
    constraint_derivative, constraint_residual, inner, random_point, retract, riemannian_hessian,
    solve_normal_coeffs, tangent_project, TangentVec, TrianglePoint,
};
use crate::objective::{localization_cost, projection_cost, BeaconSet, MeasurementSet, SmoothCost};

/// Maps an ambient matrix to the tangent space at a point.
pub type Projector = fn(&TrianglePoint, &Matrix3<f64>) -> Result<TangentVec>;

pub const IDEMPOTENCE_TOL: f64 = 1e-12;
pub const SELF_ADJOINT_TOL: f64 = 1e-12;
pub const TANGENCY_TOL: f64 = 1e-10;
pub const RETRACTION_FEAS_TOL: f64 = 1e-12;
pub const RETRACTION_SLOPE: f64 = 2.0;
pub const RETRACTION_SLOPE_TOL: f64 = 0.1;
pub const GRADIENT_FD_TOL: f64 = 1e-5;
pub const HESSIAN_FD_TOL: f64 = 1e-5;
pub const HESSIAN_SYMMETRY_TOL: f64 = 1e-8;

const SIDE: f64 = 0.1;
const RETRACTION_STEPS: [f64; 3] = [1e-3, 1e-4, 1e-5];
const FD_STEPS: [f64; 4] = [1e-3, 1e-4, 1e-5, 1e-6];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn below(name: &'static str, worst: f64, tolerance: f64) -> Self {
        Self {
            name,
            worst,
            tolerance,
            passed: worst <= tolerance,
        }
    }
}

/// Projection with the normal component added instead of removed. Used to
/// confirm the suite notices a broken projector.
pub fn sign_flipped_projection(point: &TrianglePoint, z: &Matrix3<f64>) -> Result<TangentVec> {
    let c = solve_normal_coeffs(point, z)?;
    Ok(TangentVec::new_unchecked(
        *point,
        z + point.matrix() * c.u_matrix(),
    ))
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    Matrix3::from_fn(|_, _| rng.sample(StandardNormal))
}

fn unit_tangent<R: Rng + ?Sized>(
    proj: Projector,
    p: &TrianglePoint,
    rng: &mut R,
) -> Result<TangentVec> {
    let xi = proj(p, &gaussian(rng))?;
    Ok(xi.scaled(1.0 / xi.norm()))
}

/// Least-squares slope of `log err` against `log h`.
pub fn log_log_slope(h: &[f64], err: &[f64]) -> f64 {
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Costs exercised by the derivative checks: a projection cost with a random
/// target and a localization cost with random positive ranges.
fn test_costs<R: Rng + ?Sized>(rng: &mut R) -> Vec<Box<dyn SmoothCost>> {
    let beacons = BeaconSet::room_corners();
    let ranges = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(1.0..5.0)));
    let meas = MeasurementSet::new(&beacons, ranges).expect("positive ranges");
    vec![
        Box::new(projection_cost(gaussian(rng))),
        Box::new(localization_cost(&beacons, &meas)),
    ]
}

/// Runs every check at `points` seeded random manifold points.
pub fn geometry_suite(proj: Projector, points: usize, seed: u64) -> Vec<CheckResult> {
    let mut idem = 0.0f64;
    let mut adjoint = 0.0f64;
    let mut tangency = 0.0f64;
    let mut feas = 0.0f64;
    let mut slope_dev = 0.0f64;
    let mut grad_fd = 0.0f64;
    let mut hess_fd = 0.0f64;
    let mut hess_sym = 0.0f64;
    let mut errors = 0usize;

    for k in 0..points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        match check_point(proj, &mut rng) {
            Ok(m) => {
                idem = idem.max(m.idem);
                adjoint = adjoint.max(m.adjoint);
                tangency = tangency.max(m.tangency);
                feas = feas.max(m.feas);
                slope_dev = slope_dev.max((m.slope - RETRACTION_SLOPE).abs());
                grad_fd = grad_fd.max(m.grad_fd);
                hess_fd = hess_fd.max(m.hess_fd);
                hess_sym = hess_sym.max(m.hess_sym);
            }
            Err(_) => errors += 1,
        }
    }

    vec![
        CheckResult::below("projection idempotent", idem, IDEMPOTENCE_TOL),
        CheckResult::below("projection self-adjoint", adjoint, SELF_ADJOINT_TOL),
        CheckResult::below("projection tangent", tangency, TANGENCY_TOL),
        CheckResult::below("retraction feasible", feas, RETRACTION_FEAS_TOL),
        CheckResult::below("retraction slope |s - 2|", slope_dev, RETRACTION_SLOPE_TOL),
        CheckResult::below("gradient vs finite differences", grad_fd, GRADIENT_FD_TOL),
        CheckResult::below("hessian vs finite differences", hess_fd, HESSIAN_FD_TOL),
        CheckResult::below("hessian self-adjoint", hess_sym, HESSIAN_SYMMETRY_TOL),
        CheckResult::below("points without errors", errors as f64, 0.0),
    ]
}

struct PointMetrics {
    idem: f64,
    adjoint: f64,
    tangency: f64,
    feas: f64,
    slope: f64,
    grad_fd: f64,
    hess_fd: f64,
    hess_sym: f64,
}

fn check_point<R: Rng + ?Sized>(proj: Projector, rng: &mut R) -> Result<PointMetrics> {
    let p = random_point(SIDE, rng)?;
    let x = *p.matrix();

    let (y, z) = (gaussian(rng), gaussian(rng));
    let py = proj(&p, &y)?;
    let ppy = proj(&p, py.matrix())?;
    let idem = (ppy.matrix() - py.matrix()).norm() / py.norm();
    let pz = proj(&p, &z)?;
    let adjoint = (inner(py.matrix(), &z) - inner(&y, pz.matrix())).abs() / (y.norm() * z.norm());
    let (d1, d2) = constraint_derivative(&x, py.matrix());
    let tangency = d1.abs().max(d2.abs()) / (x.norm() * y.norm());

    let xi = unit_tangent(proj, &p, rng)?;
    let small = retract(&p, &xi.scaled(0.01 * SIDE))?;
    let (g1, g2) = constraint_residual(small.matrix(), SIDE);
    let feas = g1.abs().max(g2.abs());

    let mut errs = Vec::with_capacity(RETRACTION_STEPS.len());
    for h in RETRACTION_STEPS {
        let step = xi.scaled(h * SIDE);
        let r = retract(&p, &step)?;
        errs.push((r.matrix() - x - step.matrix()).norm());
    }
    let slope = log_log_slope(&RETRACTION_STEPS, &errs);

    let mut grad_fd = 0.0f64;
    let mut hess_fd = 0.0f64;
    let mut hess_sym = 0.0f64;
    for cost in test_costs(rng) {
        let cost = cost.as_ref();
        let egrad = cost.euclidean_gradient(&x);
        let grad = proj(&p, &egrad)?;
        let slope0 = inner(grad.matrix(), xi.matrix());
        let best = FD_STEPS
            .iter()
            .filter_map(|&h| {
                let fp = cost.value(retract(&p, &xi.scaled(h)).ok()?.matrix());
                let fm = cost.value(retract(&p, &xi.scaled(-h)).ok()?.matrix());
                Some(((fp - fm) / (2.0 * h) - slope0).abs())
            })
            .fold(f64::INFINITY, f64::min);
        grad_fd = grad_fd.max(best / grad.norm().max(f64::MIN_POSITIVE));

        let hess = |v: &TangentVec| {
            riemannian_hessian(&p, &egrad, |d| cost.euclidean_hessian_apply(&x, d), v)
        };
        let h_xi = hess(&xi)?;
        let best = FD_STEPS
            .iter()
            .filter_map(|&h| {
                let g_at = |t: f64| -> Option<Matrix3<f64>> {
                    let q = retract(&p, &xi.scaled(t)).ok()?;
                    let g = tangent_project(&q, &cost.euclidean_gradient(q.matrix())).ok()?;
                    Some(*tangent_project(&p, g.matrix()).ok()?.matrix())
                };
                let fd = (g_at(h)? - g_at(-h)?) / (2.0 * h);
                Some((fd - h_xi.matrix()).norm())
            })
            .fold(f64::INFINITY, f64::min);
        hess_fd = hess_fd.max(best / h_xi.norm().max(f64::MIN_POSITIVE));

        let zeta = unit_tangent(proj, &p, rng)?;
        let h_zeta = hess(&zeta)?;
        let asym =
            (inner(h_xi.matrix(), zeta.matrix()) - inner(xi.matrix(), h_zeta.matrix())).abs();
        hess_sym = hess_sym.max(asym / (h_xi.norm() + h_zeta.norm()).max(f64::MIN_POSITIVE));
    }

    Ok(PointMetrics {
        idem,
        adjoint,
        tangency,
        feas,
        slope,
        grad_fd,
        hess_fd,
        hess_sym,
    })
}
