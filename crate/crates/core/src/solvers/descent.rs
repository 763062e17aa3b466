use crate::error::Result;
use crate::manifold::TrianglePoint;
use crate::objective::SmoothCost;

use super::{wolfe_search, Clock, Eval, Search, SolverConfig, SolverReport, SolverStatus};

/// Riemannian steepest descent with normalized directions and a Wolfe line
/// search along the retraction.
///
/// The first trial step equals the triangle side; afterwards it is twice the
/// previously accepted step.
pub fn riemannian_steepest_descent<C: SmoothCost + ?Sized>(
    cost: &C,
    x0: &TrianglePoint,
    cfg: &SolverConfig,
) -> Result<SolverReport> {
    cfg.validate()?;
    let clock = Clock::start();
    let mut cur = Eval::at(cost, *x0)?;
    let mut cost_trace = vec![cur.value];
    let mut step_sizes = Vec::new();
    let mut t_prev: Option<f64> = None;
    let mut status = SolverStatus::MaxIters;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let gnorm = cur.grad.norm();
        if gnorm <= cfg.grad_tol {
            status = SolverStatus::Converged;
            break;
        }
        let dir = cur.grad.scaled(-1.0 / gnorm);
        let t0 = t_prev.map_or(x0.side(), |t| 2.0 * t);
        match wolfe_search(cost, &cur, &dir, t0, cfg)? {
            Search::Accepted { t, next } => {
                iterations += 1;
                cur = next;
                cost_trace.push(cur.value);
                step_sizes.push(t);
                t_prev = Some(t);
                if t <= cfg.step_tol {
                    status = SolverStatus::StepTolerance;
                    break;
                }
            }
            Search::Failed(s) => {
                status = s;
                break;
            }
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
        step_sizes,
        wall_time: clock.seconds(),
        status,
    })
}
