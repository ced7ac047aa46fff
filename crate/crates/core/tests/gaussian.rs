use grdo::gaussian::{build_covariance, normalize_quat, quat_to_matrix};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

proptest! {
    #[test]
    fn covariance_eigenvalues_are_squared_scales(
        s in prop::array::uniform3(-3.0f64..1.0),
        q in prop::array::uniform4(-1.0f64..1.0),
    ) {
        prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let cov = build_covariance(s, q).unwrap();
        prop_assert!((cov - cov.transpose()).abs().max() < 1e-15);
        let mut got: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
        let mut want: Vec<f64> = s.iter().map(|v| (2.0 * v).exp()).collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-9 * w.max(1.0), "{:?} vs {:?}", got, want);
        }
    }

    #[test]
    fn rotation_matrix_is_orthonormal_and_sign_free(
        q in prop::array::uniform4(-1.0f64..1.0),
    ) {
        prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let q = normalize_quat(q).unwrap();
        let r = quat_to_matrix(q);
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).abs().max() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        let flipped = quat_to_matrix(q.map(|v| -v));
        prop_assert!((flipped - r).abs().max() < 1e-12);
    }
}

#[test]
fn zero_quaternion_is_rejected() {
    assert!(build_covariance([0.0; 3], [0.0; 4]).is_err());
}
