//! Closed-loop simulation under the real-time controller or the exact MPC law.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerConfig};
use crate::error::{dim_check, Error, Result};
use crate::linalg::Vector;
use crate::problem::MpcProblem;
use crate::qp::solve_stacked_exact;
use crate::stacked::StackedProblem;

/// Stage cost below which a run counts as converged.
pub const STOP_COST: f64 = 1e-12;

/// `x⁺ = Ax + Bu + Cz` with `ξ_0 = (u, z)`.
pub fn step_plant(p: &MpcProblem, x: &Vector, xi0: &Vector) -> Result<Vector> {
    let (nu, nz) = (p.nu(), p.nz());
    dim_check(xi0.len() == nu + nz && x.len() == p.nx(), || {
        format!("step_plant got x of length {} and xi0 of length {}", x.len(), xi0.len())
    })?;
    let u = xi0.rows(0, nu);
    let z = xi0.rows(nu, nz);
    Ok(&p.a * x + &p.b * u + &p.c * z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    /// `J(x_i)`.
    pub j: f64,
    /// `F_0(y_0*(x_i))`.
    pub f0_star: f64,
    /// Optimal predicted successor `x_1*`.
    pub x1_star: Vec<f64>,
    pub n_active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub active: Vec<usize>,
    pub n_active: usize,
    /// `F_0` of the applied `(u, z)` at `x`, i.e. the stage cost.
    pub f0: f64,
    pub rescaled: bool,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle: Option<OracleRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub controller: String,
    pub mbar: Option<usize>,
    pub gamma: Option<f64>,
    pub seed: u64,
    pub problem_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub records: Vec<TrajectoryRecord>,
    pub final_state: Vec<f64>,
    /// Step whose successor left the state set, if any.
    pub violation: Option<usize>,
}

impl Trajectory {
    /// Sum of stage costs plus the terminal cost of the final state.
    pub fn closed_loop_cost(&self, p: &MpcProblem) -> f64 {
        let tail = p.terminal_cost(&Vector::from_column_slice(&self.final_state));
        self.records.iter().map(|r| r.f0).sum::<f64>() + tail
    }

    pub fn states(&self) -> Vec<Vector> {
        self.records
            .iter()
            .map(|r| Vector::from_column_slice(&r.x))
            .chain(std::iter::once(Vector::from_column_slice(&self.final_state)))
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", serde_json::to_string(&self.meta)?)?;
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r)?)?;
        }
        Ok(())
    }

    /// Columns `step, J, F0, n_active, u_0, …, x_0, …`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let (nu, nx) = self
            .records
            .first()
            .map(|r| (r.u.len(), r.x.len()))
            .unwrap_or((0, self.final_state.len()));
        let mut head = vec!["step".to_string(), "J".into(), "F0".into(), "n_active".into()];
        head.extend((0..nu).map(|i| format!("u{i}")));
        head.extend((0..nx).map(|i| format!("x{i}")));
        out.write_record(&head).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![
                r.step.to_string(),
                r.oracle.as_ref().map(|o| o.j.to_string()).unwrap_or_default(),
                r.f0.to_string(),
                r.n_active.to_string(),
            ];
            row.extend(r.u.iter().map(|v| v.to_string()));
            row.extend(r.x.iter().map(|v| v.to_string()));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub steps: usize,
    /// Attach `J`, `F_0*` and `x_1*` from the exact solver at every step.
    pub oracle: bool,
    pub stop_cost: Option<f64>,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            steps: 100,
            oracle: false,
            stop_cost: Some(STOP_COST),
            seed: 0,
        }
    }
}

/// Feedback law driving a closed-loop run.
pub enum Policy<'a> {
    Algorithm(&'a mut Controller),
    Exact,
}

fn oracle_record(sp: &StackedProblem, x: &Vector) -> Result<(OracleRecord, Vector)> {
    let ex = solve_stacked_exact(sp, x)?;
    let y0 = sp.block(&ex.y, 0).into_owned();
    let f0_star = sp.stage_cost(0, &y0, x);
    let x1 = step_plant(&sp.problem, x, &y0)?;
    Ok((
        OracleRecord {
            j: ex.value,
            f0_star,
            x1_star: x1.iter().copied().collect(),
            n_active: ex.active_per_stage.iter().sum(),
        },
        y0,
    ))
}

/// Simulates `steps` closed-loop steps from `x0`. Stops early once the stage
/// cost drops below `stop_cost`, or when a successor leaves the state set or
/// admits no algebraic state within bounds.
pub fn closed_loop_run(
    sp: &StackedProblem,
    mut policy: Policy<'_>,
    x0: &Vector,
    opts: &RunOptions,
) -> Result<Trajectory> {
    let p = &sp.problem;
    sp.check_state(x0)?;
    if !p.x_set.contains(x0, 1e-9)? {
        return Err(Error::Infeasible("initial state outside the state set".into()));
    }
    let meta = match &policy {
        Policy::Algorithm(c) => TrajectoryMeta {
            controller: "algorithm".into(),
            mbar: Some(c.config.mbar),
            gamma: Some(c.config.gamma),
            seed: opts.seed,
            problem_hash: p.content_hash(),
        },
        Policy::Exact => TrajectoryMeta {
            controller: "exact".into(),
            mbar: None,
            gamma: None,
            seed: opts.seed,
            problem_hash: p.content_hash(),
        },
    };
    if let Policy::Algorithm(c) = &mut policy {
        c.reset();
    }
    let (nu, nz) = (p.nu(), p.nz());
    let mut x = x0.clone();
    let mut records = Vec::with_capacity(opts.steps);
    let mut violation = None;
    for step in 0..opts.steps {
        let oracle = if opts.oracle || matches!(policy, Policy::Exact) {
            Some(oracle_record(sp, &x)?)
        } else {
            None
        };
        let start = std::time::Instant::now();
        let (xi0, active, rescaled) = match &mut policy {
            Policy::Algorithm(c) => {
                let (_, d) = c.control_step(&x)?;
                (Vector::from_vec(d.xi0), d.active, d.rescaled)
            }
            Policy::Exact => {
                let ex = solve_stacked_exact(sp, &x)?;
                (sp.block(&ex.y, 0).into_owned(), ex.active_per_stage, false)
            }
        };
        let wall_time_s = start.elapsed().as_secs_f64();
        let u = xi0.rows(0, nu).into_owned();
        let z = xi0.rows(nu, nz).into_owned();
        let f0 = p.stage_cost(&x, &u, &z);
        let next = step_plant(p, &x, &xi0)?;
        records.push(TrajectoryRecord {
            step,
            x: x.iter().copied().collect(),
            u: u.iter().copied().collect(),
            z: z.iter().copied().collect(),
            n_active: active.iter().sum(),
            active,
            f0,
            rescaled,
            wall_time_s,
            oracle: if opts.oracle { oracle.map(|o| o.0) } else { None },
        });
        x = next;
        if !p.x_set.contains(&x, 1e-9)? || sp.stage_polyhedron(0, &x)?.is_empty() {
            log::warn!("closed loop left the feasible states after step {step}");
            violation = Some(step);
            break;
        }
        if opts.stop_cost.is_some_and(|t| f0 < t) {
            break;
        }
    }
    Ok(Trajectory {
        meta,
        records,
        final_state: x.iter().copied().collect(),
        violation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRow {
    pub mbar: usize,
    pub cost: f64,
    pub exact_cost: f64,
    pub degradation: f64,
    pub bound: Option<f64>,
    pub violation: Option<usize>,
}

/// Closed-loop cost of the controller for each `m̄` against exact MPC.
/// `alpha_of` supplies the certified factor for `m̄`, if any.
pub fn suboptimality_report(
    controller: &Controller,
    x0: &Vector,
    steps: usize,
    mbars: &[usize],
    alpha_of: &(dyn Fn(usize) -> Option<f64> + Sync),
) -> Result<Vec<DegradationRow>> {
    let sp = &controller.sp;
    let opts = RunOptions {
        steps,
        oracle: false,
        stop_cost: None,
        seed: 0,
    };
    let exact = closed_loop_run(sp, Policy::Exact, x0, &opts)?;
    let exact_cost = exact.closed_loop_cost(&sp.problem);
    let j0 = solve_stacked_exact(sp, x0)?.value;
    mbars
        .par_iter()
        .map(|&mbar| {
            let mut c = controller.clone();
            c.config = ControllerConfig { mbar, ..c.config };
            c.reset();
            let t = closed_loop_run(sp, Policy::Algorithm(&mut c), x0, &opts)?;
            let cost = t.closed_loop_cost(&sp.problem);
            Ok(DegradationRow {
                mbar,
                cost,
                exact_cost,
                degradation: cost / exact_cost - 1.0,
                bound: alpha_of(mbar).map(|a| j0 / a),
                violation: t.violation,
            })
        })
        .collect()
}

pub fn write_degradation_csv<W: Write>(rows: &[DegradationRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mbar", "cost", "exact_cost", "degradation", "bound"])
        .map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.mbar.to_string(),
            r.cost.to_string(),
            r.exact_cost.to_string(),
            r.degradation.to_string(),
            r.bound.map(|b| b.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_spring_damper_benchmark, InterconnectedSpec, Weights};

    fn problem() -> MpcProblem {
        build_spring_damper_benchmark(&InterconnectedSpec::chain(1), &Weights::default(), 3).unwrap()
    }

    #[test]
    fn origin_is_fixed() {
        let p = problem();
        assert_eq!(step_plant(&p, &Vector::zeros(2), &Vector::zeros(3)).unwrap().amax(), 0.0);
    }

    #[test]
    fn matches_eliminated_dynamics() {
        let p = problem();
        let x = Vector::from_vec(vec![1.0, 0.0]);
        let z = p.algebraic_state(&x).unwrap();
        let xi0 = Vector::from_vec(vec![0.0, z[0], z[1]]);
        let (at, _) = p.eliminated().unwrap();
        assert!((step_plant(&p, &x, &xi0).unwrap() - at * x).amax() < 1e-14);
    }

    #[test]
    fn zero_start_stays_at_zero() {
        let p = problem();
        let sp = StackedProblem::new(&p).unwrap();
        let mut c = Controller::with_dense_stages(sp.clone(), ControllerConfig::default()).unwrap();
        let t = closed_loop_run(
            &sp,
            Policy::Algorithm(&mut c),
            &Vector::zeros(2),
            &RunOptions {
                steps: 5,
                stop_cost: None,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(t.records.len(), 5);
        assert!(t.records.iter().all(|r| r.f0 == 0.0));
    }
}
