use eqtri::manifold::{
    constraint_derivative, constraint_residual, inner, point_from_orthonormal, random_point,
    retract, riemannian_gradient, solve_normal_coeffs, tangent_project, u_matrix, vector_transport,
    TangentVec, TrianglePoint,
};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const D: f64 = 0.1;

fn matrix() -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform9(-1.0f64..1.0).prop_map(|a| Matrix3::from_column_slice(&a))
}

/// Random manifold point, optionally moved into the room.
fn point() -> impl Strategy<Value = TrianglePoint> {
    (any::<u64>(), prop::array::uniform3(0.0f64..4.0)).prop_map(|(seed, shift)| {
        let base = random_point(D, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let t = Vector3::from(shift);
        TrianglePoint::new(base.matrix() + Matrix3::from_columns(&[t, t, t]), D).unwrap()
    })
}

#[test]
fn identity_frame_is_a_scaled_identity() {
    let p = point_from_orthonormal(&Matrix3::identity(), D).unwrap();
    assert!((p.matrix() - Matrix3::identity() * (D * 0.5f64.sqrt())).norm() < 1e-15);
    let (g1, g2) = p.residual();
    assert!(g1.abs() < 1e-17 && g2.abs() < 1e-17);
}

#[test]
fn normal_coefficients_of_a_normal_vector() {
    let p = random_point(D, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let c = solve_normal_coeffs(&p, &(p.matrix() * u_matrix(3.0, -2.0))).unwrap();
    assert!((c.alpha - 3.0).abs() < 1e-10 && (c.beta + 2.0).abs() < 1e-10);
    let g = riemannian_gradient(&p, &(p.matrix() * u_matrix(5.0, 7.0))).unwrap();
    assert!(g.norm() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_an_orthogonal_projector(p in point(), y in matrix(), z in matrix()) {
        let py = tangent_project(&p, &y).unwrap();
        let ppy = tangent_project(&p, py.matrix()).unwrap();
        prop_assert!((ppy.matrix() - py.matrix()).norm() <= 1e-12 * py.norm().max(1e-300));
        let pz = tangent_project(&p, &z).unwrap();
        let lhs = inner(py.matrix(), &z);
        let rhs = inner(&y, pz.matrix());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * y.norm() * z.norm());
    }

    #[test]
    fn projected_vectors_are_tangent(p in point(), z in matrix()) {
        let xi = tangent_project(&p, &z).unwrap();
        let (d1, d2) = constraint_derivative(p.matrix(), xi.matrix());
        let scale = p.matrix().norm() * z.norm();
        prop_assert!(d1.abs() <= 1e-10 * scale && d2.abs() <= 1e-10 * scale);
        prop_assert!(TangentVec::new(p, *xi.matrix()).is_ok());
    }

    #[test]
    fn retraction_lands_on_the_manifold(p in point(), z in matrix(), scale in 1e-4f64..0.5) {
        let xi = tangent_project(&p, &z).unwrap();
        let step = xi.scaled(scale * D / xi.norm());
        if let Ok(q) = retract(&p, &step) {
            let (g1, g2) = constraint_residual(q.matrix(), D);
            prop_assert!(g1.abs() <= 1e-9 * D * D && g2.abs() <= 1e-9 * D * D);
        }
    }

    #[test]
    fn retraction_of_zero_is_identity(seed in any::<u64>()) {
        let p = random_point(D, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let q = retract(&p, &TangentVec::zero(p)).unwrap();
        prop_assert!((q.matrix() - p.matrix()).norm() <= 1e-14 * p.matrix().norm());
    }

    /// Away from the origin the rescaling amplifies the input's own rounding
    /// residual by about (‖X‖/d)².
    #[test]
    fn retraction_of_zero_is_identity_up_to_rescaling(p in point()) {
        let q = retract(&p, &TangentVec::zero(p)).unwrap();
        let rel = (p.matrix().norm() / D).powi(2);
        prop_assert!((q.matrix() - p.matrix()).norm() <= 1e-14 * rel * p.matrix().norm());
    }

    #[test]
    fn transport_is_tangent_at_the_new_point(p in point(), a in matrix(), b in matrix()) {
        let eta = tangent_project(&p, &a).unwrap();
        let eta = eta.scaled(0.01 * D / eta.norm());
        let xi = tangent_project(&p, &b).unwrap();
        let out = vector_transport(&p, &eta, &xi).unwrap();
        let q = out.base();
        let (d1, d2) = constraint_derivative(q.matrix(), out.matrix());
        let scale = q.matrix().norm() * xi.norm();
        prop_assert!(d1.abs() <= 1e-10 * scale && d2.abs() <= 1e-10 * scale);
    }

    #[test]
    fn gradient_is_orthogonal_to_the_normal_space(p in point(), g in matrix()) {
        let grad = riemannian_gradient(&p, &g).unwrap();
        let x = p.matrix();
        for (a, b) in [(1.0, 0.0), (0.0, 1.0)] {
            let n = x * u_matrix(a, b);
            prop_assert!(inner(grad.matrix(), &n).abs() <= 1e-12 * g.norm() * n.norm());
        }
    }
}
