use proptest::prelude::*;
use softmorph::lattice::{MaterialParams, Vec3};
use softmorph::robot::{instantiate_robot, y_expansion_rate, RobotInstance, RobotSpec, BLADDER_COUNT, FOOT_COUNT, MAX_CORE_FORCE, MAX_PRESSURE_KPA};

fn robot() -> RobotInstance {
    instantiate_robot(&RobotSpec::default(), &MaterialParams::default()).unwrap()
}

fn rest_dims(r: &RobotInstance) -> Vec<Vec3> {
    r.lattice().beams().iter().map(|b| b.rest_dims).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn y_rate_never_grows_with_core_force(a in 0.0..=MAX_CORE_FORCE, b in 0.0..=MAX_CORE_FORCE) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(y_expansion_rate(hi).unwrap() <= y_expansion_rate(lo).unwrap());
    }

    #[test]
    fn out_of_range_core_force_is_rejected(f in prop_oneof![-10.0..-1e-9f64, (MAX_CORE_FORCE + 1e-9)..10.0]) {
        prop_assert!(y_expansion_rate(f).is_err());
    }

    #[test]
    fn equal_inflate_and_deflate_steps_restore_rest_dims(
        id in 0..BLADDER_COUNT,
        n in 1usize..60,
        p in 0.0..=MAX_PRESSURE_KPA,
    ) {
        let mut r = robot();
        r.apply_core_pressure(p).unwrap();
        let before = rest_dims(&r);
        for _ in 0..n {
            r.bladder_expansion_step(id, true).unwrap();
        }
        prop_assert!(rest_dims(&r) != before);
        for _ in 0..n {
            r.bladder_expansion_step(id, false).unwrap();
        }
        for (a, b) in rest_dims(&r).iter().zip(&before) {
            prop_assert!((a - b).norm() < 1e-15, "{} vs {}", a, b);
        }
        prop_assert_eq!(r.bladder_state(id).unwrap().progress, 0.0);
    }

    #[test]
    fn bladder_expansion_is_rate_times_capped_steps(id in 0..BLADDER_COUNT, n in 1usize..4000) {
        let mut r = robot();
        for _ in 0..n {
            r.bladder_expansion_step(id, true).unwrap();
        }
        let spec = RobotSpec::default();
        let m = MaterialParams::default();
        let cap = (m.max_dim() - m.beam_length) / spec.z_rate;
        let steps = (n as f64).min(cap);
        let e = r.bladder_expansion(id).unwrap();
        prop_assert!((e.z - spec.z_rate * steps).abs() < 1e-12);
        prop_assert!((e.x - spec.x_rate * steps).abs() < 1e-12);
        prop_assert!((e.y - y_expansion_rate(0.0).unwrap() * steps).abs() < 1e-12);
    }

    #[test]
    fn core_pressure_has_no_net_force_in_any_pose(p in 0.0..=MAX_PRESSURE_KPA, yaw in -3.2f64..3.2) {
        let mut r = robot();
        r.pose_on_floor(yaw);
        r.apply_core_pressure(p).unwrap();
        let net: Vec3 = r.core_face_forces().iter().sum();
        prop_assert!(net.norm() < 1e-12, "{}", net);
    }

    #[test]
    fn foot_friction_follows_the_last_command(commands in prop::collection::vec((0..FOOT_COUNT, any::<bool>()), 1..20)) {
        let mut r = robot();
        let m = MaterialParams::default();
        let mut last = [false; FOOT_COUNT];
        for (foot, grip) in &commands {
            r.set_foot_state(*foot, *grip).unwrap();
            last[*foot] = *grip;
        }
        for foot in 0..FOOT_COUNT {
            let mu = if last[foot] { m.friction_high } else { m.friction_low };
            prop_assert_eq!(r.foot_state(foot).unwrap().friction, mu);
            for id in &r.feet()[foot] {
                prop_assert_eq!(r.lattice().voxels()[id.0].friction, mu);
            }
        }
        let in_feet = |i: usize| r.feet().iter().flatten().any(|v| v.0 == i);
        for (i, v) in r.lattice().voxels().iter().enumerate() {
            if !in_feet(i) {
                prop_assert_eq!(v.friction, RobotSpec::default().body_friction);
            }
        }
    }
}

#[test]
fn unknown_actuators_are_errors() {
    let mut r = robot();
    assert!(r.bladder_expansion_step(BLADDER_COUNT, true).is_err());
    assert!(r.set_foot_state(FOOT_COUNT, true).is_err());
    assert!(r.apply_core_pressure(MAX_PRESSURE_KPA + 0.1).is_err());
    assert!(r.apply_core_pressure(-0.1).is_err());
}
