//! Fisher information and Cramér-Rao bounds for Zadoff-Chu ranging, with and
//! without the triangle constraints.
//!
//! Each link contributes `2ψ²/σ² Σ_k ∇φ ∇φᵀ`, where `φ` is the sequence phase
//! evaluated at the fractional delay `k − ‖x_i − b_j‖/(c·Ts)`. Summing over `k`
//! in closed form gives, with `ρ = ‖x_i − b_j‖` and `w = ψπR/(σKcTs)`:
//!
//! ```text
//! odd K:   2w² [4K/(cTs)² − 4K²/(cTs ρ) + K(2K−1)(2K+1)/(3ρ²)] (x_i−b_j)(x_i−b_j)ᵀ
//! even K:  8w² [K/(cTs)²  − K(K−1)/(cTs ρ) + K(K−1)(2K−1)/(6ρ²)] (x_i−b_j)(x_i−b_j)ᵀ
//! ```

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::TrianglePoint;
use crate::objective::BeaconSet;

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix3x9 = SMatrix<f64, 3, 9>;
pub type Matrix9x6 = SMatrix<f64, 9, 6>;
pub type Vector9 = SVector<f64, 9>;

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

const RANK_TOL: f64 = 1e-10;

/// Waveform and channel parameters shared by the bounds and the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    /// Sequence length `K`.
    pub length: usize,
    /// Root `R_i` of each transmitter's sequence.
    pub roots: [u32; 3],
    /// Sampling period, seconds.
    pub ts: f64,
    /// Speed of sound, m/s.
    pub c: f64,
    /// Attenuation `ψ_ij`.
    pub psi: [[f64; 4]; 3],
    /// Noise standard deviation `σ_ij`.
    pub sigma: [[f64; 4]; 3],
}

impl SignalParams {
    /// Unit attenuation on every link and `σ = 10^(−SNR/20)`.
    pub fn with_snr(length: usize, roots: [u32; 3], ts: f64, c: f64, snr_db: f64) -> Result<Self> {
        let sigma = snr_to_sigma(1.0, snr_db);
        let sp = Self {
            length,
            roots,
            ts,
            c,
            psi: [[1.0; 4]; 3],
            sigma: [[sigma; 4]; 3],
        };
        sp.validate()?;
        Ok(sp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::InvalidSignal("sequence length must be at least 2"));
        }
        for &root in &self.roots {
            if gcd(root as usize, self.length) != 1 {
                return Err(Error::NotCoprime {
                    root,
                    length: self.length,
                });
            }
        }
        if !(self.ts > 0.0 && self.ts.is_finite() && self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidSignal("Ts and c must be positive"));
        }
        if self
            .psi
            .iter()
            .flatten()
            .any(|p| !(*p > 0.0 && p.is_finite()))
        {
            return Err(Error::InvalidSignal("attenuation must be positive"));
        }
        if self
            .sigma
            .iter()
            .flatten()
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::InvalidSignal("noise deviation must be positive"));
        }
        Ok(())
    }

    /// Range covered by one sample, `c·Ts`.
    pub fn sample_range(&self) -> f64 {
        self.c * self.ts
    }

    /// Same parameters with every `σ_ij` set for the given SNR at unit power.
    pub fn at_snr(&self, snr_db: f64) -> Self {
        let mut out = self.clone();
        for i in 0..3 {
            for j in 0..4 {
                out.sigma[i][j] = snr_to_sigma(self.psi[i][j], snr_db);
            }
        }
        out
    }
}

/// `σ` such that `ψ²/σ²` equals the given SNR.
pub fn snr_to_sigma(psi: f64, snr_db: f64) -> f64 {
    psi * 10f64.powf(-snr_db / 20.0)
}

pub(crate) fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Scalar multiplying `(x_i − b_j)(x_i − b_j)ᵀ` for one link.
pub fn link_weight(range: f64, root: u32, psi: f64, sigma: f64, sig: &SignalParams) -> f64 {
    let k = sig.length as f64;
    let cts = sig.sample_range();
    let w = psi * std::f64::consts::PI * root as f64 / (sigma * k * cts);
    if sig.length % 2 == 1 {
        let bracket = 4.0 * k / (cts * cts) - 4.0 * k * k / (cts * range)
            + k * (2.0 * k - 1.0) * (2.0 * k + 1.0) / (3.0 * range * range);
        2.0 * w * w * bracket
    } else {
        let bracket = k / (cts * cts) - k * (k - 1.0) / (cts * range)
            + k * (k - 1.0) * (2.0 * k - 1.0) / (6.0 * range * range);
        8.0 * w * w * bracket
    }
}

/// Per-transmitter Fisher blocks `−E[H^i]`.
pub fn fim_blocks(
    x: &TrianglePoint,
    beacons: &BeaconSet,
    sig: &SignalParams,
) -> Result<[Matrix3<f64>; 3]> {
    sig.validate()?;
    let mut blocks = [Matrix3::zeros(); 3];
    for (i, block) in blocks.iter_mut().enumerate() {
        let xi = x.vertex(i);
        for j in 0..4 {
            let diff = xi - beacons.position(j);
            let range = diff.norm();
            if !(range > 0.0) {
                return Err(Error::DegenerateGeometry {
                    transmitter: i,
                    beacon: j,
                });
            }
            let w = link_weight(range, sig.roots[i], sig.psi[i][j], sig.sigma[i][j], sig);
            *block += diff * diff.transpose() * w;
        }
    }
    Ok(blocks)
}

/// Block-diagonal 9×9 Fisher information.
pub fn assemble_fim(blocks: &[Matrix3<f64>; 3]) -> Matrix9 {
    let mut j = Matrix9::zeros();
    for (i, b) in blocks.iter().enumerate() {
        j.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(b);
    }
    j
}

fn symmetric_condition<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    let eig = DMatrix::from_column_slice(N, N, m.as_slice())
        .symmetric_eigen()
        .eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Unconstrained bound `J⁻¹`.
pub fn crb(j: &Matrix9) -> Result<Matrix9> {
    let js = symmetrize(j);
    let cond = symmetric_condition(&js);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularFim(cond));
    }
    let chol = js.cholesky().ok_or(Error::SingularFim(cond))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Jacobian of the three squared side-length constraints.
pub fn constraint_jacobian(x: &Matrix3<f64>) -> Matrix3x9 {
    let (x1, x2, x3) = (x.column(0), x.column(1), x.column(2));
    let a = (x1 - x2) * 2.0;
    let b = (x2 - x3) * 2.0;
    let c = (x3 - x1) * 2.0;
    let mut q = Matrix3x9::zeros();
    for k in 0..3 {
        q[(0, k)] = a[k];
        q[(0, 3 + k)] = -a[k];
        q[(1, 3 + k)] = b[k];
        q[(1, 6 + k)] = -b[k];
        q[(2, k)] = -c[k];
        q[(2, 6 + k)] = c[k];
    }
    q
}

/// `‖x1−x2‖² − d²`, `‖x2−x3‖² − d²`, `‖x3−x1‖² − d²`.
pub fn side_constraints(x: &Matrix3<f64>, side: f64) -> [f64; 3] {
    let d2 = side * side;
    let sq = |a: usize, b: usize| (x.column(a) - x.column(b)).norm_squared() - d2;
    [sq(0, 1), sq(1, 2), sq(2, 0)]
}

/// Orthonormal basis of `null(Q)` from a full orthogonal factorization of
/// `[Qᵀ | 0]`.
pub fn nullspace_basis(q: &Matrix3x9) -> Result<Matrix9x6> {
    let sv = q.singular_values();
    let rank = sv.iter().filter(|s| **s > RANK_TOL * sv.max()).count();
    if rank < 3 {
        return Err(Error::RankDeficient(rank));
    }
    let mut padded = Matrix9::zeros();
    padded
        .fixed_view_mut::<9, 3>(0, 0)
        .copy_from(&q.transpose());
    let full = padded.qr().q();
    Ok(full.fixed_view::<9, 6>(0, 3).into_owned())
}

/// Constrained bound `Ψ(ΨᵀJΨ)⁻¹Ψᵀ`. Any basis of the null space gives the
/// same result.
pub fn ccrb<const P: usize>(j: &Matrix9, psi: &SMatrix<f64, 9, P>) -> Result<Matrix9> {
    let proj = symmetrize(&(psi.transpose() * j * psi));
    let cond = symmetric_condition(&proj);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularProjectedFim(cond));
    }
    let inv = proj
        .cholesky()
        .ok_or(Error::SingularProjectedFim(cond))?
        .inverse();
    Ok(symmetrize(&(psi * inv * psi.transpose())))
}

/// Everything the bound computations produce for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherBundle {
    pub j: Matrix9,
    pub crb: Matrix9,
    pub q: Matrix3x9,
    pub psi: Matrix9x6,
    pub ccrb: Matrix9,
    pub theta: Vector9,
}

impl FisherBundle {
    pub fn compute(x: &TrianglePoint, beacons: &BeaconSet, sig: &SignalParams) -> Result<Self> {
        let j = assemble_fim(&fim_blocks(x, beacons, sig)?);
        let q = constraint_jacobian(x.matrix());
        let psi = nullspace_basis(&q)?;
        Ok(Self {
            crb: crb(&j)?,
            ccrb: ccrb(&j, &psi)?,
            theta: x.stacked(),
            j,
            q,
            psi,
        })
    }

    pub fn sqrt_trace_crb(&self) -> f64 {
        self.crb.trace().sqrt()
    }

    pub fn sqrt_trace_ccrb(&self) -> f64 {
        self.ccrb.trace().sqrt()
    }
}
