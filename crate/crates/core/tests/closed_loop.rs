use std::sync::OnceLock;

use pempc::problem::{build_spring_damper_benchmark, InterconnectedSpec, Weights};
use pempc::simulate::{closed_loop_run, step_plant, suboptimality_report, Policy, RunOptions};
use pempc::store::BuildOptions;
use pempc::{Controller, ControllerConfig, MapStore, StackedProblem, Trajectory, TrajectoryRecord, Vector};

fn controller() -> &'static Controller {
    static CELL: OnceLock<Controller> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = build_spring_damper_benchmark(&InterconnectedSpec::chain(1), &Weights::default(), 5).unwrap();
        let sp = StackedProblem::new(&p).unwrap();
        let store = MapStore::build(&sp, &BuildOptions::default()).unwrap();
        Controller::new(sp, store, ControllerConfig::default()).unwrap()
    })
}

fn run(mbar: usize, x0: &Vector, steps: usize, seed: u64) -> Trajectory {
    let mut c = controller().clone();
    c.config.mbar = mbar;
    let opts = RunOptions { steps, oracle: true, stop_cost: None, seed };
    closed_loop_run(&c.sp.clone(), Policy::Algorithm(&mut c), x0, &opts).unwrap()
}

#[test]
fn runs_are_deterministic() {
    let x0 = Vector::from_vec(vec![0.5, 0.0]);
    let a = run(5, &x0, 20, 7);
    let b = run(5, &x0, 20, 7);
    assert_eq!(a.records.len(), b.records.len());
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert_eq!(ra.x, rb.x);
        assert_eq!(ra.u, rb.u);
        assert_eq!(ra.z, rb.z);
    }
    assert_eq!(a.final_state, b.final_state);
}

#[test]
fn origin_trajectory_is_zero() {
    let t = run(3, &Vector::zeros(2), 10, 0);
    assert_eq!(t.records.len(), 10);
    for r in &t.records {
        assert!(r.x.iter().chain(&r.u).chain(&r.z).all(|&v| v == 0.0));
        assert_eq!(r.f0, 0.0);
    }
    assert!(t.violation.is_none());
}

#[test]
fn plant_step_matches_the_eliminated_dynamics() {
    let c = controller();
    let p = &c.sp.problem;
    let x = Vector::from_vec(vec![1.0, 0.0]);
    let u = Vector::zeros(p.nu());
    // z solves Ez + Dx = 0 with E = −I.
    let z = &p.d * &x;
    let mut xi0 = Vector::zeros(p.nu() + p.nz());
    xi0.rows_mut(0, p.nu()).copy_from(&u);
    xi0.rows_mut(p.nu(), p.nz()).copy_from(&z);
    let next = step_plant(p, &x, &xi0).unwrap();
    let eliminated = (&p.a + &p.c * &p.d) * &x + &p.b * &u;
    assert!((next - eliminated).amax() <= 1e-15);
}

#[test]
fn trajectory_files_carry_every_step() {
    let x0 = Vector::from_vec(vec![0.5, 0.0]);
    let t = run(5, &x0, 12, 3);
    let mut jsonl = Vec::new();
    t.write_jsonl(&mut jsonl).unwrap();
    let text = String::from_utf8(jsonl).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), t.records.len() + 1);
    let meta: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(meta["controller"], "algorithm");
    assert_eq!(meta["seed"], 3);
    for (line, r) in lines[1..].iter().zip(&t.records) {
        let back: TrajectoryRecord = serde_json::from_str(line).unwrap();
        assert_eq!(&back, r);
        assert!(back.oracle.is_some());
    }

    let mut csv_out = Vec::new();
    t.write_csv(&mut csv_out).unwrap();
    let mut reader = csv::Reader::from_reader(csv_out.as_slice());
    let head: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&head[..4], &["step", "J", "F0", "n_active"]);
    assert_eq!(head.len(), 4 + 1 + 2);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), t.records.len());
    for (row, r) in rows.iter().zip(&t.records) {
        assert_eq!(row[0].parse::<usize>().unwrap(), r.step);
        assert_eq!(row[2].parse::<f64>().unwrap(), r.f0);
        assert_eq!(row[5].parse::<f64>().unwrap(), r.x[0]);
    }
}

#[test]
fn exact_policy_has_no_degradation_against_itself() {
    let c = controller();
    let x0 = Vector::from_vec(vec![0.5, 0.0]);
    let opts = RunOptions { steps: 30, oracle: false, stop_cost: None, seed: 0 };
    let a = closed_loop_run(&c.sp, Policy::Exact, &x0, &opts).unwrap();
    let b = closed_loop_run(&c.sp, Policy::Exact, &x0, &opts).unwrap();
    let (ca, cb) = (a.closed_loop_cost(&c.sp.problem), b.closed_loop_cost(&c.sp.problem));
    assert_eq!(ca, cb);
    // The exact closed-loop cost never exceeds the open-loop optimum at x0.
    let j0 = pempc::qp::solve_stacked_exact(&c.sp, &x0).unwrap().value;
    assert!(ca <= j0 + 1e-9 * j0);
}

#[test]
fn degradation_rows_cover_each_iteration_count() {
    let c = controller();
    let x0 = Vector::from_vec(vec![0.5, 0.0]);
    let rows = suboptimality_report(c, &x0, 30, &[1, 5, 50], &|m| Some(1.0 / m as f64)).unwrap();
    assert_eq!(rows.iter().map(|r| r.mbar).collect::<Vec<_>>(), vec![1, 5, 50]);
    for r in &rows {
        assert!(r.degradation.is_finite() && r.violation.is_none());
        assert_eq!(r.exact_cost, rows[0].exact_cost);
        assert!(r.bound.unwrap() > 0.0);
    }
    assert!(rows[2].degradation.abs() <= 1e-6);
}

#[test]
fn leaving_the_state_set_is_reported() {
    let c = controller();
    let x0 = Vector::from_vec(vec![2.0, 0.0]);
    let opts = RunOptions::default();
    assert!(closed_loop_run(&c.sp, Policy::Exact, &x0, &opts).is_err());
}
