//! The equilateral-triangle manifold and its differential-geometric operators.
//!
//! A point is a 3×3 matrix `X = [x1, x2, x3]` whose columns are three
//! transmitter positions, constrained by
//!
//! ```text
//! g1(X) = (x1 − x2)·(x2 − x3) + d² cos(π/3) = 0
//! g2(X) = (x1 − x3)·(x2 − x3) − d² cos(π/3) = 0
//! ```
//!
//! The ambient space carries the trace inner product `⟨A, B⟩ = tr(AᵀB)`, which
//! is also the Riemannian metric on every tangent space. The normal space at
//! `X` is `{ X·U(α, β) }` where
//!
//! ```text
//!            ⎡  0      α+β    −α−β ⎤
//! U(α, β) =  ⎢ α+β    −2α     α−β  ⎥
//!            ⎣ −α−β   α−β      2β  ⎦
//! ```
//!
//! so that `X·U(1, 0)` and `X·U(0, 1)` are the Euclidean gradients of `g1`
//! and `g2`. Everything here is a pure function of its inputs.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// cos(π/3).
pub const COS_60: f64 = 0.5;

/// Membership tolerance, relative to `d²`.
pub const FEAS_TOL: f64 = 1e-9;

/// Tangency tolerance, relative to `‖X‖·‖ξ‖`.
pub const TANGENT_TOL: f64 = 1e-9;

/// `det(S) < GRAM_DET_TOL · tr(S)²` is treated as singular.
const GRAM_DET_TOL: f64 = 1e-14;

/// Relative threshold (against `‖Z‖²`) for the retraction's poles.
const RETRACTION_POLE_TOL: f64 = 1e-14;

/// The horizontal `γ` scaling is kept while its denominator is at least this
/// fraction of `Σ_k |x1k (x2k − x3k)|`.
const GAMMA_MASK_RATIO: f64 = 0.1;

/// Trace inner product on 3×3 matrices.
#[inline]
pub fn inner(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    a.dot(b)
}

/// Evaluates the two constraint functions `(g1, g2)` at an arbitrary matrix.
pub fn constraint_residual(x: &Matrix3<f64>, side: f64) -> (f64, f64) {
    let x1 = x.column(0);
    let x2 = x.column(1);
    let x3 = x.column(2);
    let base = x2 - x3;
    let c = side * side * COS_60;
    ((x1 - x2).dot(&base) + c, (x1 - x3).dot(&base) - c)
}

/// Directional derivative `D g(X)[ξ]` of the constraint map. Linear in `ξ`.
pub fn constraint_derivative(x: &Matrix3<f64>, xi: &Matrix3<f64>) -> (f64, f64) {
    let (x1, x2, x3) = (x.column(0), x.column(1), x.column(2));
    let (e1, e2, e3) = (xi.column(0), xi.column(1), xi.column(2));
    let base = x2 - x3;
    let dbase = e2 - e3;
    (
        (e1 - e2).dot(&base) + (x1 - x2).dot(&dbase),
        (e1 - e3).dot(&base) + (x1 - x3).dot(&dbase),
    )
}

/// A point on the manifold: three transmitter positions stored as columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrianglePoint {
    x: Matrix3<f64>,
    side: f64,
}

impl TrianglePoint {
    /// Validates membership (within `FEAS_TOL · d²`) and the `x2 ≠ ±x3`
    /// chart condition.
    pub fn new(x: Matrix3<f64>, side: f64) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidSide(side));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Infeasible {
                g1: f64::NAN,
                g2: f64::NAN,
                side,
            });
        }
        let (g1, g2) = constraint_residual(&x, side);
        let tol = FEAS_TOL * side * side;
        if g1.abs() > tol || g2.abs() > tol {
            return Err(Error::Infeasible { g1, g2, side });
        }
        let scale = x.norm().max(side);
        if (x.column(1) + x.column(2)).norm() <= 1e-12 * scale {
            return Err(Error::RetractionDomain("x2 = -x3"));
        }
        Ok(Self { x, side })
    }

    pub fn from_vertices(
        x1: Vector3<f64>,
        x2: Vector3<f64>,
        x3: Vector3<f64>,
        side: f64,
    ) -> Result<Self> {
        Self::new(Matrix3::from_columns(&[x1, x2, x3]), side)
    }

    pub(crate) fn new_unchecked(x: Matrix3<f64>, side: f64) -> Self {
        Self { x, side }
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.x
    }

    #[inline]
    pub fn side(&self) -> f64 {
        self.side
    }

    /// Position of transmitter `i` (0-based).
    pub fn vertex(&self, i: usize) -> Vector3<f64> {
        self.x.column(i).into_owned()
    }

    pub fn residual(&self) -> (f64, f64) {
        constraint_residual(&self.x, self.side)
    }

    /// Side lengths `[‖x1−x2‖, ‖x2−x3‖, ‖x3−x1‖]`.
    pub fn side_lengths(&self) -> [f64; 3] {
        let (x1, x2, x3) = (self.x.column(0), self.x.column(1), self.x.column(2));
        [(x1 - x2).norm(), (x2 - x3).norm(), (x3 - x1).norm()]
    }

    /// The 9-vector `[x1; x2; x3]`.
    pub fn stacked(&self) -> nalgebra::SVector<f64, 9> {
        nalgebra::SVector::<f64, 9>::from_column_slice(self.x.as_slice())
    }
}

/// A tangent vector `ξ` at a base point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVec {
    base: TrianglePoint,
    dir: Matrix3<f64>,
}

impl TangentVec {
    /// Wraps `dir` after checking it lies in the tangent space at `base`.
    pub fn new(base: TrianglePoint, dir: Matrix3<f64>) -> Result<Self> {
        let (d1, d2) = constraint_derivative(base.matrix(), &dir);
        let tol = TANGENT_TOL * base.matrix().norm().max(base.side()) * dir.norm();
        if d1.abs() > tol || d2.abs() > tol {
            return Err(Error::NotTangent { d1, d2 });
        }
        Ok(Self { base, dir })
    }

    pub(crate) fn new_unchecked(base: TrianglePoint, dir: Matrix3<f64>) -> Self {
        Self { base, dir }
    }

    pub fn zero(base: TrianglePoint) -> Self {
        Self {
            base,
            dir: Matrix3::zeros(),
        }
    }

    #[inline]
    pub fn base(&self) -> &TrianglePoint {
        &self.base
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.dir
    }

    pub fn norm(&self) -> f64 {
        self.dir.norm()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            base: self.base,
            dir: self.dir * s,
        }
    }
}

/// Coefficients of a normal vector `X·U(α, β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalCoeffs {
    pub alpha: f64,
    pub beta: f64,
}

impl NormalCoeffs {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    /// The symmetric matrix `U(α, β)`.
    pub fn u_matrix(&self) -> Matrix3<f64> {
        u_matrix(self.alpha, self.beta)
    }
}

pub fn u_matrix(alpha: f64, beta: f64) -> Matrix3<f64> {
    let s = alpha + beta;
    let m = alpha - beta;
    Matrix3::new(
        0.0,
        s,
        -s, //
        s,
        -2.0 * alpha,
        m, //
        -s,
        m,
        2.0 * beta,
    )
}

/// The two normal generators `X·U(1, 0)` and `X·U(0, 1)`.
pub fn normal_generators(x: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    (x * u_matrix(1.0, 0.0), x * u_matrix(0.0, 1.0))
}

/// Gram matrix of the normal generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramSystem {
    pub s: Matrix2<f64>,
}

impl GramSystem {
    pub fn at(x: &Matrix3<f64>) -> Self {
        let (n1, n2) = normal_generators(x);
        let off = inner(&n1, &n2);
        Self {
            s: Matrix2::new(inner(&n1, &n1), off, off, inner(&n2, &n2)),
        }
    }

    pub fn det(&self) -> f64 {
        self.s.determinant()
    }

    /// Solves `S·(α, β)ᵀ = rhs` by Cramer's rule.
    pub fn solve(&self, rhs: Vector2<f64>) -> Result<NormalCoeffs> {
        let trace = self.s.trace();
        let det = self.s[(0, 0)] * self.s[(1, 1)] - self.s[(0, 1)] * self.s[(1, 0)];
        if !(det >= GRAM_DET_TOL * trace * trace) || !(trace > 0.0) {
            return Err(Error::NearSingularGram { det, trace });
        }
        let alpha = (rhs[0] * self.s[(1, 1)] - self.s[(0, 1)] * rhs[1]) / det;
        let beta = (self.s[(0, 0)] * rhs[1] - rhs[0] * self.s[(1, 0)]) / det;
        Ok(NormalCoeffs { alpha, beta })
    }
}

/// Coefficients `(α, β)` of the normal component of an ambient matrix `z`.
pub fn solve_normal_coeffs(point: &TrianglePoint, z: &Matrix3<f64>) -> Result<NormalCoeffs> {
    let x = point.matrix();
    let (n1, n2) = normal_generators(x);
    GramSystem::at(x).solve(Vector2::new(inner(z, &n1), inner(z, &n2)))
}

/// Orthogonal projection `Π_X(Z) = Z − X·U(α, β)` onto the tangent space.
pub fn tangent_project(point: &TrianglePoint, z: &Matrix3<f64>) -> Result<TangentVec> {
    let c = solve_normal_coeffs(point, z)?;
    Ok(TangentVec::new_unchecked(
        *point,
        z - point.matrix() * c.u_matrix(),
    ))
}

/// Riemannian gradient: the tangent projection of the Euclidean gradient.
pub fn riemannian_gradient(point: &TrianglePoint, egrad: &Matrix3<f64>) -> Result<TangentVec> {
    tangent_project(point, egrad)
}

/// Riemannian Hessian applied to a tangent vector.
///
/// Computes `Π_X(∇²f[ξ] − ξ·U(α, β) − X·U(α̇, β̇))`, where `(α, β)` are the
/// normal coefficients of the Euclidean gradient and `(α̇, β̇)` their
/// directional derivatives along `ξ`.
pub fn riemannian_hessian<F>(
    point: &TrianglePoint,
    egrad: &Matrix3<f64>,
    ehess_apply: F,
    xi: &TangentVec,
) -> Result<TangentVec>
where
    F: Fn(&Matrix3<f64>) -> Matrix3<f64>,
{
    let x = point.matrix();
    let dir = xi.matrix();
    let gram = GramSystem::at(x);
    let (n1, n2) = normal_generators(x);
    let coeffs = gram.solve(Vector2::new(inner(egrad, &n1), inner(egrad, &n2)))?;

    let ehess = ehess_apply(dir);
    let (dn1, dn2) = normal_generators(dir);
    let s_dot = Matrix2::new(
        2.0 * inner(&dn1, &n1),
        inner(&dn2, &n1) + inner(&n2, &dn1),
        inner(&dn1, &n2) + inner(&n1, &dn2),
        2.0 * inner(&dn2, &n2),
    );
    let rhs = Vector2::new(
        inner(&ehess, &n1) + inner(egrad, &dn1),
        inner(&ehess, &n2) + inner(egrad, &dn2),
    ) - s_dot * Vector2::new(coeffs.alpha, coeffs.beta);
    let rates = gram.solve(rhs)?;

    let raw = ehess - dir * coeffs.u_matrix() - x * rates.u_matrix();
    tangent_project(point, &raw)
}

/// Retraction built from the product-manifold chart.
///
/// With `Z = X + ξ`, the first column's horizontal components are rescaled by
/// `γ` so that the two constraints balance, then the whole matrix is scaled to
/// restore the side length:
///
/// ```text
/// γ = [(z2+z3)·(z2−z3) − 2 z1·(z2−z3)] / [2 z1ᵀ diag(1,1,0) (z2−z3)] + 1
/// λ = (diag(γ,γ,1) z1 − z3)·(z2 − z3)
/// R_X(ξ) = sqrt(d² cos(π/3) / λ) · [diag(γ,γ,1) z1, z2, z3]
/// ```
///
/// `γ = 1` when `z1 = 0`. Near the pole of the horizontal scaling a different
/// coordinate subset takes its place; see [`gamma_mask`].
pub fn retract(point: &TrianglePoint, xi: &TangentVec) -> Result<TrianglePoint> {
    retract_matrix(point, xi.matrix())
}

pub(crate) fn retract_matrix(point: &TrianglePoint, xi: &Matrix3<f64>) -> Result<TrianglePoint> {
    let side = point.side();
    let z = point.matrix() + xi;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::RetractionDomain("non-finite step"));
    }
    let (z1, z2, z3) = (z.column(0), z.column(1), z.column(2));
    let scale = z.norm_squared().max(f64::MIN_POSITIVE);
    let base = z2 - z3;
    if base.norm_squared() <= RETRACTION_POLE_TOL * scale {
        return Err(Error::RetractionDomain("z2 = z3"));
    }
    if (z2 + z3).norm_squared() <= RETRACTION_POLE_TOL * scale {
        return Err(Error::RetractionDomain("z2 = -z3"));
    }

    let mask = gamma_mask(point.matrix());
    let gamma = if z1.iter().all(|&v| v == 0.0) {
        1.0
    } else {
        let den = 2.0
            * (0..3)
                .filter(|&k| mask[k])
                .map(|k| z1[k] * base[k])
                .sum::<f64>();
        if den.abs() <= RETRACTION_POLE_TOL * scale {
            return Err(Error::RetractionDomain("gamma denominator vanishes"));
        }
        let num = (z2 + z3).dot(&base) - 2.0 * z1.dot(&base);
        num / den + 1.0
    };

    let u1 = Vector3::from_fn(|k, _| if mask[k] { gamma * z1[k] } else { z1[k] });
    let lambda = (u1 - z3).dot(&base);
    if !(lambda > 0.0) {
        return Err(Error::RetractionDomain("non-positive scale"));
    }
    let s = (side * side * COS_60 / lambda).sqrt();
    let out = Matrix3::from_columns(&[u1 * s, z2 * s, z3 * s]);

    let (g1, g2) = constraint_residual(&out, side);
    let tol = FEAS_TOL * side * side;
    if !(g1.abs() <= tol && g2.abs() <= tol) {
        return Err(Error::RetractionDomain("numerically unstable step"));
    }
    Ok(TrianglePoint::new_unchecked(out, side))
}

/// Coordinates of the first column rescaled by `γ`, chosen at the base point.
///
/// The horizontal pair `(x, y)` is used unless `x1ᵀdiag(1,1,0)(x2 − x3)` is
/// small against `Σ_k |x1k (x2k − x3k)|`. Near that set `γ` divides rounding
/// noise by a vanishing denominator and the map stops being first order in
/// floating point, so the best-conditioned coordinate subset is used instead.
/// Every subset yields a retraction by the same argument.
fn gamma_mask(x: &Matrix3<f64>) -> [bool; 3] {
    let a: [f64; 3] = std::array::from_fn(|k| x[(k, 0)] * (x[(k, 1)] - x[(k, 2)]));
    let total: f64 = a.iter().map(|v| v.abs()).sum();
    let horizontal = [true, true, false];
    if (a[0] + a[1]).abs() >= GAMMA_MASK_RATIO * total {
        return horizontal;
    }
    let pos: f64 = a.iter().filter(|v| **v > 0.0).sum();
    let neg: f64 = a.iter().filter(|v| **v < 0.0).sum();
    if pos >= -neg {
        a.map(|v| v > 0.0)
    } else {
        a.map(|v| v < 0.0)
    }
}

/// Vector transport by projection: `T_η(ξ) = Π_{R_X(η)}(ξ)`.
pub fn vector_transport(
    point: &TrianglePoint,
    eta: &TangentVec,
    xi: &TangentVec,
) -> Result<TangentVec> {
    let target = retract(point, eta)?;
    tangent_project(&target, xi.matrix())
}

/// Dimension of every tangent space.
pub const TANGENT_DIM: usize = 7;

/// An orthonormal basis of `T_X M`: the ambient unit matrices are swept
/// against the normal generators by pivoted Gram-Schmidt.
pub fn tangent_basis(point: &TrianglePoint) -> Result<Vec<TangentVec>> {
    let x = point.matrix();
    let (n1, n2) = normal_generators(x);
    let mut frame: Vec<Matrix3<f64>> = Vec::with_capacity(9);
    for n in [n1, n2] {
        let v = orthogonalize(n, &frame);
        let len = v.norm();
        if !(len > 1e-12 * n.norm()) {
            let gram = GramSystem::at(x);
            return Err(Error::NearSingularGram {
                det: gram.det(),
                trace: gram.s.trace(),
            });
        }
        frame.push(v / len);
    }
    let mut candidates: Vec<Matrix3<f64>> = (0..9)
        .map(|k| {
            let mut e = Matrix3::zeros();
            e[k] = 1.0;
            e
        })
        .collect();
    let mut basis = Vec::with_capacity(TANGENT_DIM);
    while basis.len() < TANGENT_DIM {
        let (best, v) = candidates
            .iter()
            .enumerate()
            .map(|(k, e)| (k, orthogonalize(*e, &frame)))
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .expect("candidates never run out before the basis is full");
        candidates.swap_remove(best);
        let v = v / v.norm();
        frame.push(v);
        basis.push(TangentVec::new_unchecked(*point, v));
    }
    Ok(basis)
}

fn orthogonalize(mut v: Matrix3<f64>, frame: &[Matrix3<f64>]) -> Matrix3<f64> {
    for _ in 0..2 {
        for q in frame {
            v -= q * inner(&v, q);
        }
    }
    v
}

/// A Haar-distributed 3×3 orthonormal matrix: QR of a Gaussian matrix with
/// the signs of `R`'s diagonal folded into `Q`.
pub fn haar_orthonormal<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let g = Matrix3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        let r = qr.r();
        if (0..3).any(|i| r[(i, i)].abs() < 1e-12) {
            continue;
        }
        let mut q = qr.q();
        for i in 0..3 {
            if r[(i, i)] < 0.0 {
                q.column_mut(i).neg_mut();
            }
        }
        return q;
    }
}

/// `X = d·sqrt(cos(π/3))·O` for an orthonormal `O`.
pub fn point_from_orthonormal(o: &Matrix3<f64>, side: f64) -> Result<TrianglePoint> {
    TrianglePoint::new(o * (side * COS_60.sqrt()), side)
}

/// Uniformly random manifold point built from a Haar orthonormal frame.
pub fn random_point<R: Rng + ?Sized>(side: f64, rng: &mut R) -> Result<TrianglePoint> {
    if !(side.is_finite() && side > 0.0) {
        return Err(Error::InvalidSide(side));
    }
    loop {
        let o = haar_orthonormal(rng);
        match point_from_orthonormal(&o, side) {
            Ok(p) => return Ok(p),
            // x2 = -x3 cannot happen for orthonormal columns; anything else is a retry
            Err(Error::RetractionDomain(_)) => continue,
            Err(e) => return Err(e),
        }
    }
}
