use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flde::config;
use flde::experiment::{run, write_artifacts};
use flde::output::{read_gate_grid, write_gate_grid, write_results};
use flde_core::report::{gate_grid, AxisRange};
use flde_core::GateParams;

#[test]
fn gate_grid_csv_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let gate = GateParams {
            weights: vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
            bias: rng.gen_range(-2.0..2.0),
        };
        let lo = rng.gen_range(-10.0..0.0);
        let grid = gate_grid(
            &gate,
            AxisRange::new(lo, lo + rng.gen_range(0.1..20.0)),
            AxisRange::new(-1.0 / 3.0, 7.0 / 3.0),
            rng.gen_range(2..40),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_gate_grid(&mut buf, &grid).unwrap();
        let back = read_gate_grid(buf.as_slice()).unwrap();
        assert_eq!(back.steps, grid.steps);
        for (a, b) in back.points().zip(grid.points()) {
            assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12 && (a.2 - b.2).abs() < 1e-12);
        }
    }
}

#[test]
fn neutral_gate_exports_constant_half() {
    let grid = gate_grid(&GateParams::neutral(2), AxisRange::new(0.0, 1.0), AxisRange::new(0.0, 1.0), 3).unwrap();
    let mut buf = Vec::new();
    write_gate_grid(&mut buf, &grid).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x1,x2,alpha");
    assert_eq!(lines.len(), 10);
    assert_eq!(lines[1], "0,0,0.5");
    assert_eq!(lines[2], "0,0.5,0.5");
}

#[test]
fn regression_run_has_table_shape() {
    let cfg = config::load("synthetic_table1", &["train.rounds=50".into()]).unwrap();
    let art = run(&cfg).unwrap();
    let mut buf = Vec::new();
    write_results(&mut buf, &art.report).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "system,sigma,user_id,metric");
    assert_eq!(lines.len(), 1 + 2 * 7);
    let order: Vec<String> = lines[1..].iter().step_by(2).map(|l| l.rsplitn(3, ',').nth(2).unwrap().to_string()).collect();
    assert_eq!(order, ["baseline,0", "fl,0", "fl,2", "fl,4", "flde,0", "flde,2", "flde,4"]);
    for l in &lines[1..] {
        let metric = l.rsplit(',').next().unwrap();
        assert_eq!(metric.split('.').nth(1).unwrap().len(), 4, "{l}");
    }
    assert_eq!(art.gate_grids.len(), 2 * 3);
    assert!(art.gate_grids.iter().all(|g| g.grid.steps == 101));
}

#[test]
fn classification_run_writes_no_gate_grids() {
    let cfg = config::load(
        "spamlike_fig2",
        &["train.rounds=20".into(), "classification.num_users=3".into()],
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let art = run(&cfg).unwrap();
    let written = write_artifacts(dir.path(), &cfg, &art).unwrap();
    assert_eq!(written.len(), 3);
    assert!(!dir.path().join("gates").exists());
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 7);
    assert_eq!(summary.lines().next().unwrap(), "system,sigma,mean,std");
}
