use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::manifold::{inner, retract, tangent_project, TangentVec, TrianglePoint, TANGENT_DIM};
use crate::objective::SmoothCost;

use super::{Clock, Eval, SolverConfig, SolverReport, SolverStatus};

/// Inner-solve residual target: `‖r‖ ≤ ‖r₀‖·min(‖r₀‖^θ, κ)`.
const TCG_KAPPA: f64 = 0.1;
const TCG_THETA: f64 = 1.0;

struct InnerStep {
    eta: Matrix3<f64>,
    h_eta: Matrix3<f64>,
    on_boundary: bool,
}

/// Steihaug-Toint truncated conjugate gradients on the tangent space.
fn truncated_cg<C: SmoothCost + ?Sized>(cost: &C, ev: &Eval, radius: f64) -> Result<InnerStep> {
    let point = ev.point;
    let mut eta = Matrix3::zeros();
    let mut h_eta = Matrix3::zeros();
    let mut r = *ev.grad.matrix();
    let mut delta = -r;
    let mut r_r = inner(&r, &r);
    let r0 = r_r.sqrt();
    let target = r0 * r0.powf(TCG_THETA).min(TCG_KAPPA);
    let radius_sq = radius * radius;
    // ⟨η, η⟩, ⟨η, δ⟩, ⟨δ, δ⟩
    let (mut e_e, mut e_d, mut d_d) = (0.0, 0.0, r_r);

    for _ in 0..TANGENT_DIM {
        let h_delta = *ev
            .hessian(cost, &TangentVec::new_unchecked(point, delta))?
            .matrix();
        let curvature = inner(&delta, &h_delta);
        let alpha = r_r / curvature;
        let e_e_next = e_e + 2.0 * alpha * e_d + alpha * alpha * d_d;

        if !(curvature > 0.0) || e_e_next >= radius_sq {
            let tau = (-e_d + (e_d * e_d + d_d * (radius_sq - e_e)).max(0.0).sqrt()) / d_d;
            return Ok(InnerStep {
                eta: eta + delta * tau,
                h_eta: h_eta + h_delta * tau,
                on_boundary: true,
            });
        }

        eta += delta * alpha;
        h_eta += h_delta * alpha;
        e_e = e_e_next;
        r += h_delta * alpha;
        // keep the residual on the tangent space despite drift
        r = *tangent_project(&point, &r)?.matrix();
        let r_r_next = inner(&r, &r);
        if r_r_next.sqrt() <= target {
            break;
        }
        let beta = r_r_next / r_r;
        delta = -r + delta * beta;
        e_d = beta * (e_d + alpha * d_d);
        d_d = r_r_next + beta * beta * d_d;
        r_r = r_r_next;
    }
    Ok(InnerStep {
        eta,
        h_eta,
        on_boundary: false,
    })
}

/// Riemannian trust-region method with a truncated-CG inner solver.
///
/// The radius is quartered when the model agreement ratio drops below 1/4 and
/// doubled (up to the maximum) when it exceeds 3/4 on a boundary step. A step
/// the retraction cannot take counts as a rejected step.
pub fn riemannian_trust_region<C: SmoothCost + ?Sized>(
    cost: &C,
    x0: &TrianglePoint,
    cfg: &SolverConfig,
) -> Result<SolverReport> {
    cfg.validate()?;
    let clock = Clock::start();
    let (mut radius, max_radius) = cfg.radii(x0.side());
    let mut cur = Eval::at(cost, *x0)?;
    let mut cost_trace = vec![cur.value];
    let mut status = SolverStatus::MaxIters;
    let mut iterations = 0;
    let mut retraction_rejects = 0;

    while iterations < cfg.max_iters {
        if cur.grad.norm() <= cfg.grad_tol {
            status = SolverStatus::Converged;
            break;
        }
        if radius <= cfg.step_tol {
            status = if retraction_rejects > 0 {
                SolverStatus::RetractionFailure
            } else {
                SolverStatus::StepTolerance
            };
            break;
        }
        iterations += 1;

        let step = truncated_cg(cost, &cur, radius)?;
        let model_decrease =
            -(inner(cur.grad.matrix(), &step.eta) + 0.5 * inner(&step.eta, &step.h_eta));
        let candidate = match retract(&cur.point, &TangentVec::new_unchecked(cur.point, step.eta)) {
            Ok(y) => Some(y),
            Err(Error::RetractionDomain(_)) => None,
            Err(e) => return Err(e),
        };
        let trial = candidate.map(|y| (cost.value(y.matrix()), y));

        let rho = match &trial {
            Some((fy, _)) if fy.is_finite() => {
                let reg = 1e3 * f64::EPSILON * cur.value.abs().max(1.0);
                (cur.value - fy + reg) / (model_decrease + reg)
            }
            _ => f64::NEG_INFINITY,
        };
        if trial.is_none() {
            retraction_rejects += 1;
        } else {
            retraction_rejects = 0;
        }

        if rho < 0.25 {
            radius *= 0.25;
        } else if rho > 0.75 && step.on_boundary {
            radius = (2.0 * radius).min(max_radius);
        }

        if rho > cfg.tr_accept_ratio && model_decrease > 0.0 {
            let (_, y) = trial.expect("finite ratio implies a candidate");
            cur = Eval::at(cost, y)?;
            cost_trace.push(cur.value);
        }
    }
    let final_grad_norm = cur.grad.norm();
    if status == SolverStatus::MaxIters && final_grad_norm <= cfg.grad_tol {
        status = SolverStatus::Converged;
    }

    Ok(SolverReport {
        final_point: cur.point,
        iterations,
        final_grad_norm,
        cost_trace,
        step_sizes: Vec::new(),
        wall_time: clock.seconds(),
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::random_point;
    use crate::objective::{localization_cost, BeaconSet, MeasurementSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inner_step_stays_inside_radius() {
        let beacons = BeaconSet::room_corners();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_point(0.1, &mut rng).unwrap().matrix() + Matrix3::repeat(1.5);
        let ranges = crate::objective::true_ranges(&beacons, &truth)
            .map(|row| row.map(|r| r + rng.random_range(-1e-3..1e-3)));
        let cost = localization_cost(&beacons, &MeasurementSet::new(&beacons, ranges).unwrap());
        for radius in [1e-4, 1e-2, 1.0, 10.0] {
            let x = random_point(0.1, &mut rng).unwrap();
            let ev = Eval::at(&cost, x).unwrap();
            let step = truncated_cg(&cost, &ev, radius).unwrap();
            assert!(step.eta.norm() <= radius * (1.0 + 1e-12));
            let decrease =
                -(inner(ev.grad.matrix(), &step.eta) + 0.5 * inner(&step.eta, &step.h_eta));
            assert!(decrease > 0.0);
        }
    }
}
