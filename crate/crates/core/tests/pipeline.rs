use std::fs;

use occukernel::dynamics::{integrate_rk4, lorenz, system1};
use occukernel::experiments::{
    corrupt, identify, simulate, system1_centers, system1_initial_conditions, Solver, SYSTEM1_MU,
};
use occukernel::sysid::{assemble, ConstraintSystem};
use occukernel::{Error, Kernel, QuadratureRule, Trajectory, TrajectorySet};

#[test]
fn lorenz_csv_round_trip_through_a_file() {
    let traj = integrate_rk4(&lorenz().field, &[-8.0, 7.0, 27.0], 2.0, 0.01, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lorenz.csv");
    traj.save_csv(&path).unwrap();
    let back = Trajectory::load_csv(&path).unwrap();
    assert_eq!(back.len(), traj.len());
    assert_eq!(back.dim(), 3);
    for (a, b) in traj.as_slice().iter().zip(back.as_slice()) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
    assert!((back.step() - traj.step()).abs() < 1e-15);
}

#[test]
fn malformed_files_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    let mut text = String::from("t,x1,x2\n");
    for k in 0..8 {
        if k == 5 {
            text.push_str(&format!("{},1.0\n", k as f64 * 0.1));
        } else {
            text.push_str(&format!("{},1.0,2.0\n", k as f64 * 0.1));
        }
    }
    fs::write(&path, &text).unwrap();
    match Trajectory::load_csv(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
        other => panic!("expected a parse error, got {other:?}"),
    }

    let jump = "t,x\n0,1\n0.1,1\n0.3,1\n0.4,1\n";
    assert!(matches!(
        Trajectory::from_csv_str(jump),
        Err(Error::NonuniformGrid { line: 4, .. })
    ));
    assert!(Trajectory::load_csv(dir.path().join("missing.csv")).is_err());
}

#[test]
fn identification_from_saved_files_matches_memory() {
    let spec = system1();
    let trajs = simulate(&spec.field, &system1_initial_conditions(), 1.0, 0.01).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let loaded: Vec<Trajectory> = trajs
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let p = dir.path().join(format!("traj{j}.csv"));
            t.save_csv(&p).unwrap();
            Trajectory::load_csv(&p).unwrap()
        })
        .collect();
    let kernel = Kernel::gaussian(SYSTEM1_MU).unwrap();
    let run = |data: &[Trajectory]| {
        identify(
            data,
            &system1_centers(),
            &spec.basis,
            &kernel,
            QuadratureRule::Simpson,
            &Solver::default(),
        )
        .unwrap()
    };
    let a = run(&trajs);
    let b = run(&loaded);
    for (x, y) in a.theta.iter().zip(&b.theta) {
        assert!((x - y).abs() < 1e-9);
    }
    assert!(b.max_error(&spec.theta) < 1e-4);
}

#[test]
fn segmented_systems_stack_per_segment() {
    let spec = system1();
    let traj = integrate_rk4(&spec.field, &[0.25, -2.0], 1.0, 0.01, None).unwrap();
    let set = TrajectorySet::from(traj.clone()).segment_all(4).unwrap();
    assert_eq!(set.len(), 4);
    let kernel = Kernel::gaussian(SYSTEM1_MU).unwrap();
    let centers = system1_centers();
    let whole = assemble(
        &set,
        &centers,
        &spec.basis,
        &kernel,
        QuadratureRule::Trapezoid,
    )
    .unwrap();
    let parts: Vec<ConstraintSystem> = set
        .iter()
        .map(|t| {
            assemble(
                std::slice::from_ref(t),
                &centers,
                &spec.basis,
                &kernel,
                QuadratureRule::Trapezoid,
            )
            .unwrap()
        })
        .collect();
    let stacked = ConstraintSystem::stack(&parts).unwrap();
    assert_eq!(whole.a, stacked.a);
    assert_eq!(whole.b, stacked.b);
    assert_eq!(whole.row_index(2, 5), Some(2 * centers.len() + 5));

    // Trapezoid is additive over shared boundaries, so the segment rows of
    // one center add up to the whole-trajectory row.
    let single = assemble(
        &[traj],
        &centers,
        &spec.basis,
        &kernel,
        QuadratureRule::Trapezoid,
    )
    .unwrap();
    for s in 0..centers.len() {
        for i in 0..spec.basis.len() {
            let sum: f64 = (0..4).map(|j| whole.a[(j * centers.len() + s, i)]).sum();
            assert!((sum - single.a[(s, i)]).abs() < 1e-12);
        }
    }
}

#[test]
fn filtering_reduces_noise_by_root_window() {
    let flat = Trajectory::new(1, 0.01, vec![0.0; 100_001]).unwrap();
    let w = 16;
    let filtered = corrupt(std::slice::from_ref(&flat), 0.1, 3, w).unwrap();
    let v = filtered[0].as_slice();
    let sd = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let expected = 0.1 / (w as f64).sqrt();
    assert!((sd / expected - 1.0).abs() < 0.2, "{sd} vs {expected}");
}
