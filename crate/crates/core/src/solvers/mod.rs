//! Riemannian solvers on the triangle manifold, the unconstrained
//! Gauss-Newton baseline, and the two initialization strategies.

use std::time::Instant;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{
    inner, retract, riemannian_gradient, riemannian_hessian, tangent_project, TangentVec,
    TrianglePoint,
};
use crate::objective::SmoothCost;

mod descent;
mod newton;
mod trilateration;
mod trust_region;

pub use descent::riemannian_steepest_descent;
pub use newton::{newton_direction, riemannian_newton};
pub use trilateration::{gauss_newton_trilateration, improved_init, GN_ITERATIONS};
pub use trust_region::riemannian_trust_region;

/// Tuning knobs shared by the Riemannian solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub backtrack_factor: f64,
    /// Cap on step-size adjustments inside one line search.
    pub max_adjustments: usize,
    /// Defaults to `0.1·d` when unset.
    pub tr_initial_radius: Option<f64>,
    /// Defaults to `d` when unset.
    pub tr_max_radius: Option<f64>,
    pub tr_accept_ratio: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            grad_tol: 1e-10,
            step_tol: 1e-16,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            backtrack_factor: 0.5,
            max_adjustments: 50,
            tr_initial_radius: None,
            tr_max_radius: None,
            tr_accept_ratio: 0.1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.grad_tol > 0.0 && self.step_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return bad("Wolfe constants must satisfy 0 < c1 < c2 < 1");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if self.max_adjustments == 0 {
            return bad("max_adjustments must be at least 1");
        }
        for r in [self.tr_initial_radius, self.tr_max_radius]
            .into_iter()
            .flatten()
        {
            if !(r.is_finite() && r > 0.0) {
                return bad("trust-region radii must be positive");
            }
        }
        if !(0.0..0.25).contains(&self.tr_accept_ratio) {
            return bad("tr_accept_ratio must lie in [0, 0.25)");
        }
        Ok(())
    }

    pub(crate) fn radii(&self, side: f64) -> (f64, f64) {
        let max = self.tr_max_radius.unwrap_or(side);
        let init = self.tr_initial_radius.unwrap_or(0.1 * side).min(max);
        (init, max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIters,
    /// The accepted step (or trust radius) fell below `step_tol`.
    StepTolerance,
    LineSearchFailure,
    RetractionFailure,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIters => "max_iters",
            Self::StepTolerance => "step_tolerance",
            Self::LineSearchFailure => "line_search_failure",
            Self::RetractionFailure => "retraction_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub final_point: TrianglePoint,
    pub iterations: usize,
    pub final_grad_norm: f64,
    /// Cost at the start and after every accepted step.
    pub cost_trace: Vec<f64>,
    /// Accepted step sizes; empty for the trust-region method.
    pub step_sizes: Vec<f64>,
    /// Seconds.
    pub wall_time: f64,
    pub status: SolverStatus,
}

impl SolverReport {
    pub fn converged(&self) -> bool {
        self.status == SolverStatus::Converged
    }
}

/// Cost, gradients and the point they were evaluated at.
#[derive(Debug, Clone)]
pub(crate) struct Eval {
    pub point: TrianglePoint,
    pub value: f64,
    pub egrad: Matrix3<f64>,
    pub grad: TangentVec,
}

impl Eval {
    pub fn at<C: SmoothCost + ?Sized>(cost: &C, point: TrianglePoint) -> Result<Self> {
        let x = point.matrix();
        let egrad = cost.euclidean_gradient(x);
        Ok(Self {
            value: cost.value(x),
            grad: riemannian_gradient(&point, &egrad)?,
            egrad,
            point,
        })
    }

    pub fn hessian<C: SmoothCost + ?Sized>(&self, cost: &C, xi: &TangentVec) -> Result<TangentVec> {
        let x = self.point.matrix();
        riemannian_hessian(
            &self.point,
            &self.egrad,
            |v| cost.euclidean_hessian_apply(x, v),
            xi,
        )
    }
}

/// Riemannian Hessian of `cost` at `point` applied to `xi`.
pub fn cost_hessian<C: SmoothCost + ?Sized>(
    cost: &C,
    point: &TrianglePoint,
    xi: &TangentVec,
) -> Result<TangentVec> {
    Eval::at(cost, *point)?.hessian(cost, xi)
}

#[allow(clippy::large_enum_variant)]
pub(crate) enum Search {
    Accepted { t: f64, next: Eval },
    Failed(SolverStatus),
}

/// Backtracking search along the retraction curve `t ↦ R_X(t·dir)`.
///
/// Steps are shrunk until sufficient decrease holds, then the curvature
/// condition is checked with the pulled-back slope `⟨∇f(Y), Π_Y(dir)⟩` and the
/// step is doubled once if it is still too short. When the decrease is lost in
/// the cost's evaluation roundoff, the step is accepted on the approximate
/// Wolfe conditions, which rely only on slopes.
pub(crate) fn wolfe_search<C: SmoothCost + ?Sized>(
    cost: &C,
    cur: &Eval,
    dir: &TangentVec,
    t0: f64,
    cfg: &SolverConfig,
) -> Result<Search> {
    let f0 = cur.value;
    let slope0 = inner(cur.grad.matrix(), dir.matrix());
    if !(slope0 < 0.0) {
        return Ok(Search::Failed(SolverStatus::LineSearchFailure));
    }
    let noise = cost.value_roundoff(cur.point.matrix());
    let dir_norm = dir.norm();
    let mut t = t0;
    let mut retraction_failed = false;

    for _ in 0..cfg.max_adjustments {
        let y = match retract(&cur.point, &dir.scaled(t)) {
            Ok(y) => y,
            Err(Error::RetractionDomain(_)) => {
                retraction_failed = true;
                t *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };
        retraction_failed = false;
        let fy = cost.value(y.matrix());
        if !fy.is_finite() {
            t *= cfg.backtrack_factor;
            continue;
        }

        if fy <= f0 + cfg.wolfe_c1 * t * slope0 {
            let next = Eval::at(cost, y)?;
            if pulled_back_slope(&next, dir)? < cfg.wolfe_c2 * slope0 {
                if let Some(longer) = try_expand(cost, cur, dir, 2.0 * t, slope0, cfg)? {
                    return Ok(Search::Accepted {
                        t: 2.0 * t,
                        next: longer,
                    });
                }
            }
            return Ok(Search::Accepted { t, next });
        }

        if (fy - f0).abs() <= noise {
            let next = Eval::at(cost, y)?;
            let slope = pulled_back_slope(&next, dir)?;
            let upper = (2.0 * cfg.wolfe_c1 - 1.0) * slope0;
            if slope >= cfg.wolfe_c2 * slope0 && slope <= upper {
                return Ok(Search::Accepted { t, next });
            }
        }
        t *= cfg.backtrack_factor;
    }

    let status = if retraction_failed {
        SolverStatus::RetractionFailure
    } else if t * dir_norm <= cfg.step_tol {
        SolverStatus::StepTolerance
    } else {
        SolverStatus::LineSearchFailure
    };
    Ok(Search::Failed(status))
}

fn try_expand<C: SmoothCost + ?Sized>(
    cost: &C,
    cur: &Eval,
    dir: &TangentVec,
    t: f64,
    slope0: f64,
    cfg: &SolverConfig,
) -> Result<Option<Eval>> {
    let y = match retract(&cur.point, &dir.scaled(t)) {
        Ok(y) => y,
        Err(Error::RetractionDomain(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let fy = cost.value(y.matrix());
    if fy.is_finite() && fy <= cur.value + cfg.wolfe_c1 * t * slope0 {
        Ok(Some(Eval::at(cost, y)?))
    } else {
        Ok(None)
    }
}

fn pulled_back_slope(next: &Eval, dir: &TangentVec) -> Result<f64> {
    let moved = tangent_project(&next.point, dir.matrix())?;
    Ok(inner(next.grad.matrix(), moved.matrix()))
}

pub(crate) struct Clock(Instant);

impl Clock {
    pub fn start() -> Self {
        Self(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        SolverConfig::default().validate().unwrap();
        assert_eq!(SolverConfig::default().radii(0.1), (0.1 * 0.1, 0.1));
    }

    #[test]
    fn bad_wolfe_constants_rejected() {
        let cfg = SolverConfig {
            wolfe_c1: 0.9,
            wolfe_c2: 0.5,
            ..SolverConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }
}
