use approx::assert_relative_eq;
use coin_core::geometry::*;
use coin_core::CoinError;
use nalgebra::Matrix3;
use nalgebra::Vector2;
use nalgebra::Vector3;

#[test]
fn hand_computed_projection() {
    let intr = Intrinsics { focal: 100.0, cx: 0.0, cy: 0.0, width: 1000.0, height: 1000.0 };
    let cam = CameraPose::new(Matrix3::identity(), Vector3::zeros());
    let (px, depth) = project(&cam, &intr, &Vector3::new(1.0, 2.0, 4.0)).unwrap();
    assert_relative_eq!(px.x, 25.0);
    assert_relative_eq!(px.y, 50.0);
    assert_relative_eq!(depth, 4.0);
}

#[test]
fn optical_axis_hits_principal_point() {
    let intr = Intrinsics::default();
    let cam = CameraPose::look_at(&Vector3::new(0.0, -4.0, 1.5), &Vector3::new(0.0, 0.0, 1.5));
    let (px, depth) = project(&cam, &intr, &Vector3::new(0.0, 3.0, 1.5)).unwrap();
    assert_relative_eq!(px.x, intr.cx, epsilon = 1e-9);
    assert_relative_eq!(px.y, intr.cy, epsilon = 1e-9);
    assert_relative_eq!(depth, 7.0, epsilon = 1e-12);
}

#[test]
fn behind_camera_is_error() {
    let cam = CameraPose::new(Matrix3::identity(), Vector3::zeros());
    let r = project(&cam, &Intrinsics::default(), &Vector3::new(0.0, 0.0, -1.0));
    assert!(matches!(r, Err(CoinError::Geometry(_))));
}

#[test]
fn project_unproject_roundtrip() {
    let intr = Intrinsics::default();
    let cam = CameraPose::look_at(&Vector3::new(1.0, -3.0, 1.7), &Vector3::new(0.2, 0.5, 1.0));
    let px = Vector2::new(321.5, 612.25);
    let p = unproject(&cam, &intr, &px, 5.5);
    let (back, depth) = project(&cam, &intr, &p).unwrap();
    assert!((back - px).norm() < 1e-9);
    assert!((depth - 5.5).abs() < 1e-9);
}

#[test]
fn rotation_jacobian_matches_finite_differences() {
    let phi = Vector3::new(0.3, -0.7, 1.1);
    let v = Vector3::new(0.5, 0.2, -0.9);
    let (_, jac) = rotate_with_jacobian(&phi, &v);
    let h = 1e-6;
    for k in 0..3 {
        let mut p = phi;
        let mut m = phi;
        p[k] += h;
        m[k] -= h;
        let fd = (exp_so3(&p) * v - exp_so3(&m) * v) / (2.0 * h);
        for r in 0..3 {
            assert!((fd[r] - jac[(r, k)]).abs() < 1e-8);
        }
    }
    let (_, jac0) = rotate_with_jacobian(&Vector3::zeros(), &v);
    assert!((jac0 + skew(&v)).abs().max() < 1e-12);
}

#[test]
fn spline_interpolates_knots_and_lines() {
    let knots: Vec<_> = (0..6).map(|i| Vector3::new(i as f64 * 2.0, 1.0, -(i as f64))).collect();
    let s = CubicSpline::new(knots.clone(), 4.0).unwrap();
    for (i, k) in knots.iter().enumerate() {
        assert!((s.eval(i as f64 * 4.0) - k).norm() < 1e-12);
    }
    // linear data is reproduced exactly in between
    assert!((s.eval(5.0) - Vector3::new(2.5, 1.0, -1.25)).norm() < 1e-12);
}

#[test]
fn slerp_endpoints() {
    let a = Vector3::new(0.0, 0.0, 0.4);
    let b = Vector3::new(0.0, 0.0, 1.0);
    assert!((slerp_rotvec(&a, &b, 0.0) - a).norm() < 1e-12);
    assert!((slerp_rotvec(&a, &b, 1.0) - b).norm() < 1e-12);
    assert!((slerp_rotvec(&a, &b, 0.5) - Vector3::new(0.0, 0.0, 0.7)).norm() < 1e-12);
}

#[test]
fn log_of_nearly_orthonormal_identity_is_finite() {
    let r = Matrix3::identity() + Matrix3::from_fn(|i, j| if i == j { 2e-16 } else { 0.0 });
    let phi = log_so3(&r);
    assert!(phi.iter().all(|v| v.is_finite()) && phi.norm() < 1e-12);
    let tiny = Vector3::new(1e-9, -2e-9, 3e-10);
    assert_relative_eq!(log_so3(&exp_so3(&tiny)), tiny, epsilon = 1e-15);
}

#[test]
fn log_near_pi_recovers_axis() {
    let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
    for theta in [std::f64::consts::PI - 1e-7, std::f64::consts::PI - 0.1, 3.0] {
        let phi = axis * theta;
        assert_relative_eq!(log_so3(&exp_so3(&phi)), phi, epsilon = 1e-6);
    }
}

proptest::proptest! {
    #[test]
    fn exp_log_roundtrip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, theta in 0.0f64..3.1) {
        let v = Vector3::new(x, y, z);
        proptest::prop_assume!(v.norm() > 1e-3);
        let phi = v.normalize() * theta;
        let back = log_so3(&exp_so3(&phi));
        proptest::prop_assert!((back - phi).norm() < 1e-9);
    }
}
