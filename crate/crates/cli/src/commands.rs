use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;

use pempc::certify::{certify_problem, sample_states, with_invariant_state_set};
use pempc::problem::BenchmarkShorthand;
use pempc::qp::solve_stacked_exact;
use pempc::selftest::run_selftest;
use pempc::simulate::{closed_loop_run, suboptimality_report, write_degradation_csv, Policy, RunOptions};
use pempc::store::BuildOptions;
use pempc::{
    CertificateReport, CertifyOptions, Controller, ControllerConfig, MapStore, MpcProblem, StackedProblem, Vector,
};

use crate::settings::{
    resolve_files, Cli, Command, CompareArgs, CertifyArgs, FileConfig, GenerateArgs, PrecomputeArgs, RunArgs,
};
use crate::Failure;

const DEFAULT_STEPS: usize = 100;
const DEFAULT_MBARS: [usize; 6] = [1, 2, 5, 10, 20, 40];

pub fn dispatch(cli: Cli) -> Result<(), Failure> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            return Err(Failure::usage("usage", "--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::usage("usage", e.to_string()))?;
    }
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Precompute(a) => precompute(&a, &file),
        Command::Certify(a) => certify(&a, &file, seed),
        Command::Run(a) => run(&a, &file, seed),
        Command::Compare(a) => compare(&a, &file, seed),
        Command::Selftest => selftest(seed),
    }
}

fn generate(a: &GenerateArgs) -> Result<(), Failure> {
    let value = serde_json::json!({
        "benchmark": a.benchmark,
        "I": a.i_bar,
        "N": a.horizon,
    });
    let mut shorthand: BenchmarkShorthand = serde_json::from_value(value).map_err(pempc::Error::from)?;
    shorthand.h = a.h.unwrap_or(shorthand.h);
    shorthand.k = a.k.unwrap_or(shorthand.k);
    shorthand.m = a.m.unwrap_or(shorthand.m);
    shorthand.d = a.d.unwrap_or(shorthand.d);
    let mut problem = shorthand.build()?;
    if a.invariant_set {
        problem = with_invariant_state_set(&problem)?;
    }
    problem.save(&a.output)?;
    println!(
        "{}",
        serde_json::json!({
            "problem": a.output,
            "hash": problem.content_hash(),
            "nx": problem.nx(), "nu": problem.nu(), "nz": problem.nz(),
            "h": shorthand.h, "k": shorthand.k, "m": shorthand.m, "d": shorthand.d,
        })
    );
    Ok(())
}

fn load_problem(path: &Path) -> Result<StackedProblem, Failure> {
    if !path.exists() {
        return Err(Failure::usage("io", format!("problem file {} not found", path.display())));
    }
    Ok(StackedProblem::new(&MpcProblem::load(path)?)?)
}

fn load_store(path: &Path, sp: &StackedProblem) -> Result<MapStore, Failure> {
    if !path.exists() {
        return Err(Failure::usage(
            "precompute_required",
            format!("precompute required: no map store at {}", path.display()),
        ));
    }
    let store = MapStore::load(path)?;
    if !store.matches(sp) {
        return Err(Failure::usage(
            "precompute_required",
            format!("precompute required: {} was built for a different problem", path.display()),
        ));
    }
    Ok(store)
}

fn precompute(a: &PrecomputeArgs, file: &FileConfig) -> Result<(), Failure> {
    let (problem_path, store_path) = resolve_files(&a.files, file)?;
    let sp = load_problem(&problem_path)?;
    let current = (!a.force && store_path.exists())
        .then(|| MapStore::load(&store_path).ok())
        .flatten()
        .filter(|s| s.matches(&sp));
    let (store, rebuilt) = match current {
        Some(s) => {
            info!("map store {} is up to date", store_path.display());
            (s, false)
        }
        None => {
            let s = MapStore::build(&sp, &BuildOptions::default())?;
            s.save(&store_path)?;
            (s, true)
        }
    };
    println!(
        "{}",
        serde_json::json!({
            "store": store_path,
            "rebuilt": rebuilt,
            "regions": store.region_count,
            "floats": store.maps.storage_floats(),
            "content_hash": store.content_hash,
        })
    );
    Ok(())
}

fn out_dir(flag: &Option<PathBuf>, file: &FileConfig) -> Result<PathBuf, Failure> {
    let dir = flag.clone().or_else(|| file.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn certify(a: &CertifyArgs, file: &FileConfig, seed: u64) -> Result<(), Failure> {
    let (problem_path, store_path) = resolve_files(&a.files, file)?;
    let sp = load_problem(&problem_path)?;
    let store = load_store(&store_path, &sp)?;
    let dir = out_dir(&a.out_dir, file)?;
    let controller = Controller::new(sp, store, ControllerConfig::default())?;
    let opts = CertifyOptions {
        seed,
        mbar: a.mbar.or(file.mbar),
        ..Default::default()
    };
    let report = certify_problem(&controller, &opts)?;
    let path = dir.join("certificate.json");
    std::fs::write(&path, report.to_json()?)?;
    print!("{}", report.table());
    for m in &report.messages {
        println!("note: {m}");
    }
    if !report.valid {
        return Err(Failure::certificate(format!(
            "certificate invalid for mbar {} (report at {})",
            report.mbar,
            path.display()
        )));
    }
    Ok(())
}

/// Certificate for this problem, if one was written.
fn find_certificate(
    flag: &Option<PathBuf>,
    file: &FileConfig,
    dir: &Path,
    sp: &StackedProblem,
) -> Result<Option<CertificateReport>, Failure> {
    let explicit = flag.clone().or_else(|| file.certificate.clone());
    let path = explicit.clone().unwrap_or_else(|| dir.join("certificate.json"));
    if !path.exists() {
        if explicit.is_some() {
            return Err(Failure::usage("io", format!("certificate {} not found", path.display())));
        }
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    let report: CertificateReport = serde_json::from_str(&text).map_err(pempc::Error::from)?;
    if report.problem_hash != sp.problem.content_hash() {
        log::warn!("ignoring {}: it certifies a different problem", path.display());
        return Ok(None);
    }
    Ok(Some(report))
}

fn initial_state(flag: &Option<Vec<f64>>, file: &FileConfig, sp: &StackedProblem, seed: u64) -> Result<Vector, Failure> {
    if let Some(x) = flag.clone().or_else(|| file.x0.clone()) {
        let x0 = Vector::from_vec(x);
        sp.check_state(&x0)?;
        return Ok(x0);
    }
    sample_states(&sp.problem.x_set, 200, seed)
        .into_iter()
        .find(|x| solve_stacked_exact(sp, x).is_ok())
        .ok_or_else(|| Failure::usage("infeasible", "no feasible initial state found; pass --x0"))
}

fn run(a: &RunArgs, file: &FileConfig, seed: u64) -> Result<(), Failure> {
    let (problem_path, store_path) = resolve_files(&a.files, file)?;
    let sp = load_problem(&problem_path)?;
    let store = load_store(&store_path, &sp)?;
    let dir = out_dir(&a.out_dir, file)?;
    let cert = find_certificate(&a.certificate, file, &dir, &sp)?;
    let defaults = ControllerConfig::default();
    let mbar = a.mbar.or(file.mbar).or(cert.as_ref().map(|c| c.mbar)).unwrap_or(defaults.mbar);
    let gamma = a.gamma.or(file.gamma).or(cert.as_ref().map(|c| c.gamma)).unwrap_or(defaults.gamma);
    let config = ControllerConfig { mbar, gamma, ..defaults };
    config.check()?;
    let x0 = initial_state(&a.x0, file, &sp, seed)?;
    let opts = RunOptions {
        steps: a.steps.or(file.steps).unwrap_or(DEFAULT_STEPS),
        oracle: a.oracle || file.oracle.unwrap_or(false),
        seed,
        ..Default::default()
    };

    let mut log_lines = vec![
        format!("problem: {}", sp.problem.content_hash()),
        format!("mbar: {mbar}"),
        format!("gamma: {gamma}"),
        format!("x0: {:?}", x0.as_slice()),
    ];
    log_lines.push(match &cert {
        None => "certificate: none".into(),
        Some(c) => {
            let alpha = c.alpha_for(mbar);
            if c.valid && alpha > 0.0 && alpha <= 1.0 {
                format!("certificate: valid (alpha {alpha:.6e})")
            } else {
                format!("certificate: invalid for mbar {mbar} (bound {})", c.mbar_bound)
            }
        }
    });

    let mut controller = Controller::new(sp.clone(), store, config)?;
    let traj = closed_loop_run(&sp, Policy::Algorithm(&mut controller), &x0, &opts)?;
    traj.write_jsonl(BufWriter::new(File::create(dir.join("trajectory.jsonl"))?))?;
    traj.write_csv(BufWriter::new(File::create(dir.join("trajectory.csv"))?))?;
    let final_norm = traj.final_state.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    log_lines.push(format!("steps: {}", traj.records.len()));
    log_lines.push(format!("closed-loop cost: {:.12e}", traj.closed_loop_cost(&sp.problem)));
    log_lines.push(format!("final |x|: {final_norm:.3e}"));
    log_lines.push(match traj.violation {
        None => "violation: none".into(),
        Some(s) => format!("violation: after step {s}"),
    });

    let text = log_lines.join("\n") + "\n";
    std::fs::write(dir.join("run.log"), &text)?;
    print!("{text}");
    if let Some(s) = traj.violation {
        return Err(Failure {
            code: 1,
            kind: "infeasible".into(),
            message: format!("closed loop left the feasible states after step {s}"),
        });
    }
    Ok(())
}

fn compare(a: &CompareArgs, file: &FileConfig, seed: u64) -> Result<(), Failure> {
    let (problem_path, store_path) = resolve_files(&a.files, file)?;
    let sp = load_problem(&problem_path)?;
    let store = load_store(&store_path, &sp)?;
    let dir = out_dir(&a.out_dir, file)?;
    let cert = find_certificate(&a.certificate, file, &dir, &sp)?;
    let defaults = ControllerConfig::default();
    let gamma = a.gamma.or(file.gamma).or(cert.as_ref().map(|c| c.gamma)).unwrap_or(defaults.gamma);
    let mbars = a.mbars.clone().or_else(|| file.mbars.clone()).unwrap_or_else(|| DEFAULT_MBARS.to_vec());
    if mbars.contains(&0) {
        return Err(Failure::usage("usage", "every --mbars entry must be at least 1"));
    }
    let x0 = initial_state(&a.x0, file, &sp, seed)?;
    let steps = a.steps.or(file.steps).unwrap_or(DEFAULT_STEPS);
    let controller = Controller::new(sp, store, ControllerConfig { gamma, ..defaults })?;
    let alpha_of = |m: usize| {
        cert.as_ref()
            .filter(|c| c.valid)
            .map(|c| c.alpha_for(m))
            .filter(|&al| al > 0.0 && al <= 1.0)
    };
    let rows = suboptimality_report(&controller, &x0, steps, &mbars, &alpha_of)?;
    write_degradation_csv(&rows, BufWriter::new(File::create(dir.join("degradation.csv"))?))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:>6} {:>18} {:>14} {:>10}", "mbar", "cost", "degradation", "violation")?;
    for r in &rows {
        let v = r.violation.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
        writeln!(out, "{:>6} {:>18.10e} {:>14.3e} {:>10}", r.mbar, r.cost, r.degradation, v)?;
    }
    Ok(())
}

fn selftest(seed: u64) -> Result<(), Failure> {
    let report = run_selftest(seed)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(pempc::Error::from)?);
    if !report.passed() {
        let failed: Vec<&str> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect();
        return Err(Failure {
            code: 1,
            kind: "selftest".into(),
            message: format!("failed suites: {}", failed.join(", ")),
        });
    }
    Ok(())
}
