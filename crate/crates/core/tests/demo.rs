use latact_core::arm::{ArmGeometry, JointState};
use latact_core::demo::{generate, tracking_controller, ControllerParams, DemoDataset, TaskKind, TaskParams, TaskSpec};
use latact_core::Error;
use nalgebra::Vector2;

fn spec(kind: TaskKind, pairs: usize) -> TaskSpec {
    let mut s = TaskSpec::preset(kind);
    s.target_pair_count = pairs;
    s
}

fn ee(ds: &DemoDataset, state: &JointState, arm: usize) -> Vector2<f64> {
    ds.geometry().forward_kinematics(state, arm).unwrap().position
}

#[test]
fn every_task_replays_exactly_and_has_the_requested_size() {
    for kind in [TaskKind::Sine, TaskKind::Rotate, TaskKind::Circle, TaskKind::Reach] {
        let s = spec(kind, 620);
        let ds = generate(&s).unwrap();
        assert!(ds.replay_error().unwrap() <= 1e-9, "{kind:?}");
        // truncation may cut at most one pair per trajectory
        let slack = ds.trajectory_count();
        assert!(ds.len() <= 620 && ds.len() + slack >= 620, "{kind:?}: {}", ds.len());
        assert!(ds.pairs.iter().all(|p| p.action.is_finite()));
        // manual replay with the simulator, independent of replay_error
        for range in ds.trajectory_ranges() {
            for t in range.start..range.end - 1 {
                let next = ds.geometry().step(&ds.pairs[t].state, &ds.pairs[t].action).unwrap();
                assert!(next.distance(&ds.pairs[t + 1].state) <= 1e-9);
            }
        }
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let s = spec(TaskKind::Circle, 300);
    assert_eq!(generate(&s).unwrap().pairs, generate(&s).unwrap().pairs);
    let mut other = s.clone();
    other.rng_seed += 1;
    assert_ne!(generate(&s).unwrap().pairs, generate(&other).unwrap().pairs);
}

#[test]
fn flat_sine_stays_on_the_x_axis() {
    let mut s = spec(TaskKind::Sine, 300);
    if let TaskParams::Sine { amplitude, .. } = &mut s.task {
        *amplitude = 0.0;
    }
    let ds = generate(&s).unwrap();
    for p in &ds.pairs {
        assert!(ee(&ds, &p.state, 0).y.abs() < 1e-3);
    }
}

#[test]
fn sine_follows_the_wave() {
    let s = spec(TaskKind::Sine, 300);
    let TaskParams::Sine { amplitude, wavelength, .. } = s.task.clone() else { unreachable!() };
    let ds = generate(&s).unwrap();
    let worst = ds
        .pairs
        .iter()
        .map(|p| {
            let e = ee(&ds, &p.state, 0);
            (e.y - amplitude * (2.0 * std::f64::consts::PI * e.x / wavelength).sin()).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst < 0.05, "max deviation from wave {worst}");
}

#[test]
fn rotate_keeps_the_box_rigid() {
    let ds = generate(&spec(TaskKind::Rotate, 400)).unwrap();
    for range in ds.trajectory_ranges() {
        let gap = |i: usize| (ee(&ds, &ds.pairs[i].state, 0) - ee(&ds, &ds.pairs[i].state, 1)).norm();
        let first = gap(range.start);
        for i in range {
            assert!((gap(i) - first).abs() < 1e-3);
        }
    }
}

#[test]
fn circle_data_moves_both_along_and_across_circles() {
    let s = spec(TaskKind::Circle, 600);
    let TaskParams::Circle { center, .. } = s.task else { unreachable!() };
    let ds = generate(&s).unwrap();
    let c = Vector2::new(center[0], center[1]);
    let (mut tangential, mut radial) = (Vec::new(), Vec::new());
    for p in &ds.pairs {
        let j = ds.geometry().jacobian(&p.state, 0).unwrap();
        let v = j * &p.action.velocities;
        let r = (ee(&ds, &p.state, 0) - c).normalize();
        radial.push(v.dot(&r));
        tangential.push(v.dot(&Vector2::new(-r.y, r.x)));
    }
    let var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
    };
    assert!(var(&tangential) > 1e-3 && var(&radial) > 1e-3);
}

#[test]
fn reach_trajectories_end_inside_the_goal_region() {
    let s = spec(TaskKind::Reach, 500);
    let TaskParams::Reach { goal_region, .. } = s.task.clone() else { unreachable!() };
    let ds = generate(&s).unwrap();
    for range in ds.trajectory_ranges() {
        let last = &ds.pairs[range.end - 1];
        let end = ds.geometry().step(&last.state, &last.action).unwrap();
        let p = ee(&ds, &end, 0);
        assert!(goal_region.contains([p.x, p.y], 1e-6), "{p:?}");
    }
}

#[test]
fn unreachable_sine_names_the_waypoint() {
    let mut s = spec(TaskKind::Sine, 100);
    if let TaskParams::Sine { x_span, .. } = &mut s.task {
        *x_span = [4.0, 7.0];
    }
    match generate(&s) {
        Err(Error::Unreachable { distance, reach, .. }) => assert!(distance > reach),
        other => panic!("expected unreachable error, got {other:?}"),
    }
}

#[test]
fn zero_pair_count_is_rejected() {
    let s = spec(TaskKind::Reach, 0);
    assert!(matches!(generate(&s), Err(Error::Config(_))));
}

#[test]
fn tracking_controller_fixed_point_direction_and_convergence() {
    let g = ArmGeometry::single(5, 1.0);
    let params = ControllerParams::default();
    let s = JointState::new(vec![0.3, 0.2, -0.1, 0.25, 0.1]).unwrap();
    let here = g.forward_kinematics(&s, 0).unwrap().position;
    let a = tracking_controller(&g, &s, here, 0, &params).unwrap();
    assert!(a.velocities.amax() < 1e-12);

    let straight = JointState::zeros(5);
    let up = g.forward_kinematics(&straight, 0).unwrap().position + Vector2::new(0.0, 0.05);
    let a = tracking_controller(&g, &straight, up, 0, &params).unwrap();
    let moved = g.jacobian(&straight, 0).unwrap() * &a.velocities * g.dt;
    assert!(moved.y > 0.0);

    let target = here + Vector2::new(0.06, -0.07);
    let mut state = s;
    let mut err = (target - here).norm();
    let mut steps = 0;
    while err >= 1e-3 {
        let a = tracking_controller(&g, &state, target, 0, &params).unwrap();
        state = g.step(&state, &a).unwrap();
        let next = (target - g.forward_kinematics(&state, 0).unwrap().position).norm();
        assert!(next < err);
        err = next;
        steps += 1;
        assert!(steps < 200);
    }
    assert!(tracking_controller(&g, &state, Vector2::new(f64::NAN, 0.0), 0, &params).is_err());
}

#[test]
fn dataset_files_round_trip_and_report_distinct_errors() {
    let ds = generate(&spec(TaskKind::Sine, 120)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sine.ds");
    ds.save(&path).unwrap();
    let back = DemoDataset::load(&path).unwrap();
    assert_eq!(back.pairs, ds.pairs);
    assert_eq!(back.trajectory_starts, ds.trajectory_starts);
    assert_eq!(back.spec, ds.spec);

    let bytes = std::fs::read(&path).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(dir.path().join("magic.ds"), &bad).unwrap();
    assert!(matches!(DemoDataset::load(dir.path().join("magic.ds")), Err(Error::BadMagic(_))));

    let mut bad = bytes.clone();
    bad[10] = 0xFF;
    std::fs::write(dir.path().join("version.ds"), &bad).unwrap();
    assert!(matches!(DemoDataset::load(dir.path().join("version.ds")), Err(Error::Version { .. })));

    std::fs::write(dir.path().join("short.ds"), &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(DemoDataset::load(dir.path().join("short.ds")), Err(Error::Truncated(_))));

    let small = ArmGeometry::single(3, 1.0);
    assert!(matches!(DemoDataset::load_for(&path, &small), Err(Error::Dimension { .. })));
}

#[test]
fn jsonl_export_has_one_object_per_pair() {
    let ds = generate(&spec(TaskKind::Reach, 100)).unwrap();
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), ds.len());
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(first["s"].as_array().unwrap().len(), 5);
    assert_eq!(first["a"].as_array().unwrap().len(), 5);
    assert_eq!(first["traj"], 0);
}
