use nalgebra::{SMatrix, SVector};

use crate::error::Result;
use crate::manifold::{inner, tangent_basis, TangentVec, TrianglePoint, TANGENT_DIM};
use crate::objective::SmoothCost;

use super::{wolfe_search, Clock, Eval, Search, SolverConfig, SolverReport, SolverStatus};

type TangentMatrix = SMatrix<f64, TANGENT_DIM, TANGENT_DIM>;
type TangentCoords = SVector<f64, TANGENT_DIM>;

/// Solves `Hess f(X)[ξ] = −grad f(X)` in an orthonormal tangent basis.
///
/// Returns `None` when the Hessian is not positive definite on the tangent
/// space, or when the solution is not a descent direction.
pub fn newton_direction<C: SmoothCost + ?Sized>(
    cost: &C,
    point: &TrianglePoint,
) -> Result<Option<TangentVec>> {
    let ev = Eval::at(cost, *point)?;
    newton_step(cost, &ev)
}

fn newton_step<C: SmoothCost + ?Sized>(cost: &C, ev: &Eval) -> Result<Option<TangentVec>> {
    let basis = tangent_basis(&ev.point)?;
    let images = basis
        .iter()
        .map(|b| ev.hessian(cost, b))
        .collect::<Result<Vec<_>>>()?;
    let h = TangentMatrix::from_fn(|i, j| {
        0.5 * (inner(basis[i].matrix(), images[j].matrix())
            + inner(basis[j].matrix(), images[i].matrix()))
    });
    let g = TangentCoords::from_fn(|i, _| inner(basis[i].matrix(), ev.grad.matrix()));
    let Some(chol) = h.cholesky() else {
        return Ok(None);
    };
    let c = chol.solve(&(-g));
    if !(c.dot(&g) < 0.0) {
        return Ok(None);
    }
    let dir = basis
        .iter()
        .zip(c.iter())
        .fold(nalgebra::Matrix3::zeros(), |acc, (b, &ci)| {
            acc + b.matrix() * ci
        });
    Ok(Some(TangentVec::new_unchecked(ev.point, dir)))
}

/// Riemannian Newton method with a Wolfe line search starting at the full
/// step. Falls back to the negative gradient where the Hessian is indefinite.
pub fn riemannian_newton<C: SmoothCost + ?Sized>(
    cost: &C,
    x0: &TrianglePoint,
    cfg: &SolverConfig,
) -> Result<SolverReport> {
    cfg.validate()?;
    let clock = Clock::start();
    let mut cur = Eval::at(cost, *x0)?;
    let mut cost_trace = vec![cur.value];
    let mut step_sizes = Vec::new();
    let mut status = SolverStatus::MaxIters;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let gnorm = cur.grad.norm();
        if gnorm <= cfg.grad_tol {
            status = SolverStatus::Converged;
            break;
        }
        let (dir, t0) = match newton_step(cost, &cur)? {
            Some(d) => (d, 1.0),
            None => (cur.grad.scaled(-1.0 / gnorm), x0.side()),
        };
        match wolfe_search(cost, &cur, &dir, t0, cfg)? {
            Search::Accepted { t, next } => {
                iterations += 1;
                cur = next;
                cost_trace.push(cur.value);
                step_sizes.push(t);
                if t * dir.norm() <= cfg.step_tol {
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
