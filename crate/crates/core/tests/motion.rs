use coin_core::motion::*;
use nalgebra::DVector;
use nalgebra::Vector3;
use proptest::prelude::*;

#[test]
fn layout_offsets() {
    let l = MotionLayout::new(3, 4);
    assert_eq!(l.frame_dim(), 22);
    assert_eq!(l.dim(), 66);
    assert_eq!(l.contact(1), 22 + 18);
    assert_eq!(l.channel_kind(22 + 7), ChannelKind::Pose { joint: 0 });
    assert_eq!(l.channel_kind(22 + 19), ChannelKind::Contact);
}

#[test]
fn contact_probabilities_in_unit_interval() {
    let mut h = MotionWindow::zeros(MotionLayout::new(1, 4));
    h.set_contact_logits(0, &[-800.0, -1.0, 3.0, 800.0]);
    for p in h.contact_probabilities(0) {
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn state_from_joints_inverts_kinematics() {
    let body = BodyModel::default();
    let mut h = MotionWindow::zeros(MotionLayout::new(1, 4));
    h.set_translation(0, &Vector3::new(1.0, 2.0, 0.9));
    h.set_orientation(0, &Vector3::new(0.0, 0.0, 2.5));
    h.set_pose(0, 0, &Vector3::new(0.2, 0.01, 0.05));
    h.set_pose(0, 2, &Vector3::new(0.0, 0.02, 0.0));
    let beta = [0.05, -0.02];
    let joints = body.frame_joints(&h, 0, &beta).positions;
    let (tau, phi, pose) = body.state_from_joints(&joints, &beta, 3);
    assert!((tau - h.translation(0)).norm() < 1e-12);
    assert!((phi - h.orientation(0)).norm() < 1e-12);
    for j in 0..4 {
        assert!((pose[j] - h.pose(0, j)).norm() < 1e-12);
    }
}

#[test]
fn rotvec_unwrapping() {
    let phi = Vector3::new(0.0, 0.0, -3.0);
    let r = nearest_equivalent_rotvec(&phi, &Vector3::new(0.0, 0.0, 3.2));
    assert!((r.z - (2.0 * std::f64::consts::PI - 3.0)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn flatten_unflatten_inverse(vals in proptest::collection::vec(-5.0f64..5.0, 44)) {
        let layout = MotionLayout::new(2, 4);
        let w = MotionWindow::from_flat(layout, DVector::from_vec(vals.clone())).unwrap();
        let back = MotionWindow::from_flat(layout, w.flatten()).unwrap();
        prop_assert_eq!(back.data.as_slice(), vals.as_slice());
    }

    #[test]
    fn canonical_frame_roundtrip(yaw in -3.0f64..3.0, x in -10.0f64..10.0, y in -10.0f64..10.0, turn in -0.5f64..0.5) {
        let layout = MotionLayout::new(3, 4);
        let mut h = MotionWindow::zeros(layout);
        for i in 0..3 {
            h.set_translation(i, &Vector3::new(x + i as f64, y - 0.5 * i as f64, 0.9));
            h.set_orientation(i, &Vector3::new(0.0, 0.0, yaw + turn * i as f64));
            h.set_pose(i, 1, &Vector3::new(0.1 * i as f64, 0.0, 0.02));
        }
        let f = CanonicalFrame::of(&h);
        let c = f.canonicalize(&h);
        prop_assert!(c.translation(0).xy().norm() < 1e-9);
        prop_assert!(c.orientation(0).norm() < 1e-9);
        let back = f.restore(&c, Some(&h));
        prop_assert!((back.data - h.data).amax() < 1e-9);
    }
}
