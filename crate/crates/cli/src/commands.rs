use std::fmt::Write as _;
use std::time::Instant;

use anyhow::Result;
use eqtri::manifold::tangent_project;
use eqtri::sim::{Harness, InitMode, SolverId, Sweep};
use eqtri::validation::{geometry_suite, sign_flipped_projection, CheckResult, Projector};

use crate::config::Loaded;
use crate::output::{bounds_table, num, sweep_files, Provenance, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    ProjectionSign,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<34} {:>12} {:>12}  result\n",
            "check", "worst", "tolerance"
        );
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<34} {:>12.3e} {:>12.3e}  {}",
                c.name,
                c.worst,
                c.tolerance,
                if c.passed { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(
            s,
            "{} of {} checks passed in {:.2} s",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len(),
            self.seconds
        );
        s
    }
}

pub fn validate(points: usize, seed: u64, fault: Option<Fault>) -> ValidationReport {
    let proj: Projector = match fault {
        None => tangent_project,
        Some(Fault::ProjectionSign) => sign_flipped_projection,
    };
    let start = Instant::now();
    let checks = geometry_suite(proj, points, seed);
    ValidationReport {
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn provenance(loaded: &Loaded) -> Provenance {
    Provenance {
        sha256: loaded.sha256.clone(),
        seed: loaded.scenario.seed,
        trials: loaded.scenario.trials,
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveArgs {
    pub snr_db: Option<f64>,
    pub solver: Option<SolverId>,
    pub init: Option<InitMode>,
    pub trial: usize,
}

/// One trial of one solver. An SNR on the config grid reuses the sweep's
/// random streams for that grid point, so the row matches the sweep record.
pub fn solve(loaded: &Loaded, args: &SolveArgs) -> Result<Table> {
    let mut sc = loaded.scenario.clone();
    if let Some(init) = args.init {
        sc.init = init;
    }
    let snr_db = args.snr_db.unwrap_or_else(|| {
        sc.snr_grid_db
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let snr_idx = match sc.snr_grid_db.iter().position(|&s| s == snr_db) {
        Some(i) => i,
        None => {
            sc.snr_grid_db = vec![snr_db];
            0
        }
    };
    let solver = args.solver.unwrap_or(loaded.config.solvers[0]);
    let init = sc.init;
    let harness = Harness::new(sc)?;
    let rec = harness
        .trial(args.trial, snr_idx, &[solver])
        .pop()
        .expect("one solver requested");

    let mut t = Table::new(
        &provenance(loaded),
        &[
            "snr_db",
            "solver",
            "init",
            "trial",
            "status",
            "converged",
            "iterations",
            "err1_m",
            "err2_m",
            "err3_m",
            "g1",
            "g2",
            "solve_time_s",
        ],
    );
    let init = match init {
        InitMode::Random => "random",
        InitMode::Improved => "improved",
    };
    let time = if loaded.config.timing {
        rec.solve_time
    } else {
        f64::NAN
    };
    t.row(&[
        num(snr_db),
        solver.to_string(),
        init.to_owned(),
        rec.trial.to_string(),
        rec.status.as_str().to_owned(),
        rec.converged.to_string(),
        rec.iterations.to_string(),
        num(rec.position_errors[0]),
        num(rec.position_errors[1]),
        num(rec.position_errors[2]),
        num(rec.constraint_residual.0),
        num(rec.constraint_residual.1),
        num(time),
    ]);
    Ok(t)
}

pub struct SweepOutput {
    pub sweep: Sweep,
    pub files: Vec<(String, Table)>,
}

pub fn sweep(loaded: &Loaded) -> Result<SweepOutput> {
    let harness = Harness::new(loaded.scenario.clone())?;
    let sweep = harness.sweep(&loaded.config.solvers);
    let bounds = harness.bound_curves()?;
    let files = sweep_files(&provenance(loaded), &sweep, &bounds, loaded.config.timing);
    Ok(SweepOutput { sweep, files })
}

pub fn bounds(loaded: &Loaded) -> Result<Table> {
    let harness = Harness::new(loaded.scenario.clone())?;
    Ok(bounds_table(&provenance(loaded), &harness.bound_curves()?))
}
