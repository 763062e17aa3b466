//! CSV rendering. Floats use nine significant digits and rows are sorted by
//! (SNR, solver name) so equal inputs give equal bytes.

use std::cmp::Ordering;
use std::path::Path;

use anyhow::{Context, Result};
use eqtri::sim::{BoundPoint, SolverId, SummaryStats, Sweep, TrialRecord};

pub const RMSE_FILE: &str = "rmse_vs_snr.csv";
pub const RUNTIME_FILE: &str = "runtime.csv";
pub const BOUNDS_FILE: &str = "bounds.csv";

pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

/// Provenance written as the first line of every file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub sha256: String,
    pub seed: u64,
    pub trials: usize,
}

impl Provenance {
    fn comment(&self) -> String {
        format!(
            "# config_sha256={} seed={} trials={}\n",
            self.sha256, self.seed, self.trials
        )
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(prov: &Provenance, header: &[&str]) -> Self {
        let mut text = prov.comment();
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        let line: Vec<&str> = fields.iter().map(AsRef::as_ref).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

fn by_snr_then_name(a: (f64, SolverId), b: (f64, SolverId)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then_with(|| a.1.as_str().cmp(b.1.as_str()))
}

fn sorted_summaries(sweep: &Sweep) -> Vec<&SummaryStats> {
    let mut s: Vec<&SummaryStats> = sweep.summaries.iter().collect();
    s.sort_by(|a, b| by_snr_then_name((a.snr_db, a.solver), (b.snr_db, b.solver)));
    s
}

fn time_or_nan(t: f64, timing: bool) -> f64 {
    if timing {
        t
    } else {
        f64::NAN
    }
}

/// File-name form of an SNR value, e.g. `20`, `-5`, `7.5`.
pub fn snr_label(snr_db: f64) -> String {
    format!("{snr_db}")
}

pub fn cumulative_file(snr_db: f64) -> String {
    format!("cumulative_error_{}.csv", snr_label(snr_db))
}

pub fn rmse_table(prov: &Provenance, sweep: &Sweep, timing: bool) -> Table {
    let mut t = Table::new(
        prov,
        &[
            "snr_db",
            "solver",
            "rmse_m",
            "p90_m",
            "mean_time_s",
            "n_trials",
        ],
    );
    for s in sorted_summaries(sweep) {
        t.row(&[
            num(s.snr_db),
            s.solver.to_string(),
            num(s.rmse),
            num(s.percentile90),
            num(time_or_nan(s.mean_time, timing)),
            s.n_trials.to_string(),
        ]);
    }
    t
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn runtime_table(prov: &Provenance, sweep: &Sweep, timing: bool) -> Table {
    let mut t = Table::new(
        prov,
        &[
            "snr_db",
            "solver",
            "mean_time_s",
            "median_time_s",
            "n_trials",
        ],
    );
    for s in sorted_summaries(sweep) {
        let times: Vec<f64> = sweep
            .records
            .iter()
            .filter(|r: &&TrialRecord| r.snr_db == s.snr_db && r.solver == s.solver)
            .map(|r| r.solve_time)
            .collect();
        t.row(&[
            num(s.snr_db),
            s.solver.to_string(),
            num(time_or_nan(s.mean_time, timing)),
            num(time_or_nan(median(times), timing)),
            s.n_trials.to_string(),
        ]);
    }
    t
}

/// One table per SNR: every solver's sorted per-transmitter errors with the
/// empirical CDF `k/n`.
pub fn cumulative_tables(prov: &Provenance, sweep: &Sweep) -> Vec<(String, Table)> {
    let mut out: Vec<(f64, Table)> = Vec::new();
    for s in sorted_summaries(sweep) {
        if out.last().is_none_or(|(snr, _)| *snr != s.snr_db) {
            out.push((s.snr_db, Table::new(prov, &["solver", "error_m", "cdf"])));
        }
        let table = &mut out.last_mut().expect("pushed above").1;
        let n = s.sorted_errors.len() as f64;
        for (k, e) in s.sorted_errors.iter().enumerate() {
            table.row(&[s.solver.to_string(), num(*e), num((k + 1) as f64 / n)]);
        }
    }
    out.into_iter()
        .map(|(snr, t)| (cumulative_file(snr), t))
        .collect()
}

pub fn bounds_table(prov: &Provenance, points: &[BoundPoint]) -> Table {
    let mut pts: Vec<&BoundPoint> = points.iter().collect();
    pts.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
    let mut t = Table::new(prov, &["snr_db", "sqrt_trace_crb_m", "sqrt_trace_ccrb_m"]);
    for p in pts {
        t.row(&[num(p.snr_db), num(p.sqrt_trace_crb), num(p.sqrt_trace_ccrb)]);
    }
    t
}

/// Every file a sweep produces, keyed by file name.
pub fn sweep_files(
    prov: &Provenance,
    sweep: &Sweep,
    bounds: &[BoundPoint],
    timing: bool,
) -> Vec<(String, Table)> {
    let mut files = vec![
        (RMSE_FILE.to_owned(), rmse_table(prov, sweep, timing)),
        (RUNTIME_FILE.to_owned(), runtime_table(prov, sweep, timing)),
        (BOUNDS_FILE.to_owned(), bounds_table(prov, bounds)),
    ];
    files.extend(cumulative_tables(prov, sweep));
    files
}

pub fn write_files(dir: &Path, files: &[(String, Table)]) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    for (name, table) in files {
        let path = dir.join(name);
        std::fs::write(&path, table.as_str())
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}
