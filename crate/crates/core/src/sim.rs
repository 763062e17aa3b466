//! Monte-Carlo experiments: scenario, per-trial pipelines, sweeps over SNR and
//! solvers, summary statistics and bound curves.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{FisherBundle, SignalParams};
use crate::error::{Error, Result};
use crate::manifold::{constraint_residual, random_point, TrianglePoint};
use crate::objective::{localization_cost, true_ranges, BeaconSet, MeasurementSet};
use crate::signal::{frame_length, simulate_link, zadoff_chu, CorrelationRanger, ZcSequence};
use crate::solvers::{
    gauss_newton_trilateration, improved_init, riemannian_newton, riemannian_steepest_descent,
    riemannian_trust_region, SolverConfig, SolverReport, SolverStatus, GN_ITERATIONS,
};

pub const DEFAULT_TRIALS: usize = 200;

/// SNR at which direct-mode noise is matched to the correlation front-end.
pub const CALIBRATION_SNR_DB: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverId {
    Gn,
    ProjectedGn,
    RiemannianSd,
    RiemannianTr,
    RiemannianNewton,
}

impl SolverId {
    pub const ALL: [SolverId; 5] = [
        SolverId::Gn,
        SolverId::ProjectedGn,
        SolverId::RiemannianSd,
        SolverId::RiemannianTr,
        SolverId::RiemannianNewton,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Gn => "gn",
            Self::ProjectedGn => "projected-gn",
            Self::RiemannianSd => "riemannian-sd",
            Self::RiemannianTr => "riemannian-tr",
            Self::RiemannianNewton => "riemannian-newton",
        }
    }

    pub fn is_riemannian(&self) -> bool {
        matches!(
            self,
            Self::RiemannianSd | Self::RiemannianTr | Self::RiemannianNewton
        )
    }
}

impl fmt::Display for SolverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown solver `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Random,
    Improved,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "improved" => Ok(Self::Improved),
            _ => Err(Error::InvalidConfig(format!("unknown init mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangingMode {
    /// Zadoff-Chu frames through the correlation front-end.
    Signal,
    /// Gaussian noise added straight to the true ranges.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Room extents; the room spans `[0, room]` on each axis.
    pub room: Vector3<f64>,
    pub beacons: BeaconSet,
    pub truth: TrianglePoint,
    /// Attenuation is read from here; `σ_ij` is reset per SNR.
    pub sig: SignalParams,
    pub snr_grid_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub ranging: RangingMode,
    pub init: InitMode,
    /// Direct-mode scale: `σ_r = c·Ts·10^(−SNR/20)·κ`. Zero gives exact ranges.
    pub kappa: f64,
    pub solver: SolverConfig,
}

impl Scenario {
    /// The reference room experiment with `κ = 1`; see [`calibrate_kappa`].
    pub fn paper() -> Self {
        let truth = TrianglePoint::from_vertices(
            Vector3::new(2.0, 2.0, 1.0),
            Vector3::new(2.1, 2.0, 1.0),
            Vector3::new(2.05, 2.0, 1.0 + 3f64.sqrt() / 20.0),
            0.1,
        )
        .expect("reference triangle is feasible");
        Self {
            room: Vector3::new(4.0, 4.0, 3.0),
            beacons: BeaconSet::room_corners(),
            truth,
            sig: SignalParams::with_snr(151, [1, 2, 3], 1e-6, 343.0, CALIBRATION_SNR_DB)
                .expect("default signal parameters are valid"),
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials: DEFAULT_TRIALS,
            seed: 0,
            ranging: RangingMode::Direct,
            init: InitMode::Improved,
            kappa: 1.0,
            solver: SolverConfig::default(),
        }
    }

    pub fn side(&self) -> f64 {
        self.truth.side()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.room.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return bad("room extents must be positive".into());
        }
        for i in 0..3 {
            let v = self.truth.vertex(i);
            if (0..3).any(|k| !(v[k] >= 0.0 && v[k] <= self.room[k])) {
                return bad(format!("transmitter {} lies outside the room", i + 1));
            }
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return bad("the SNR grid must be non-empty and finite".into());
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return bad("kappa must be non-negative".into());
        }
        self.sig.validate()?;
        self.solver.validate()
    }

    /// Longest range that fits in the room.
    pub fn max_range(&self) -> f64 {
        self.room.norm()
    }

    /// Direct-mode range deviation at `snr_db`.
    pub fn direct_sigma(&self, snr_db: f64) -> f64 {
        self.sig.sample_range() * 10f64.powf(-snr_db / 20.0) * self.kappa
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrialStatus {
    Solved(SolverStatus),
    /// No correlation peak on at least one link.
    RangingFailed,
    /// The pipeline returned an error before producing an estimate.
    SolverFailed,
}

impl TrialStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Solved(s) => s.as_str(),
            Self::RangingFailed => "ranging_failed",
            Self::SolverFailed => "solver_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub snr_db: f64,
    pub solver: SolverId,
    /// `None` when ranging or the solver failed.
    pub estimate: Option<Matrix3<f64>>,
    /// `‖x̂_i − x_i‖`, NaN without an estimate.
    pub position_errors: [f64; 3],
    /// Seconds spent in initialization and solve.
    pub solve_time: f64,
    pub converged: bool,
    pub status: TrialStatus,
    pub iterations: usize,
    pub constraint_residual: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub snr_db: f64,
    pub solver: SolverId,
    /// Over trials and transmitters.
    pub rmse: f64,
    pub rmse_per_transmitter: [f64; 3],
    pub percentile90: f64,
    pub max_error: f64,
    pub mean_time: f64,
    /// Trials that produced an estimate.
    pub n_trials: usize,
    pub n_failed: usize,
    pub n_converged: usize,
    /// Ascending per-transmitter errors.
    pub sorted_errors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPoint {
    pub snr_db: f64,
    pub sqrt_trace_crb: f64,
    pub sqrt_trace_ccrb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    /// Ordered by SNR index, trial, then the requested solver order.
    pub records: Vec<TrialRecord>,
    /// Ordered by SNR index, then the requested solver order.
    pub summaries: Vec<SummaryStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Purpose {
    Noise = 0,
    Init = 1,
    Calibration = 2,
}

/// Independent stream for one (trial, SNR index, purpose) under `seed`.
fn substream(seed: u64, trial: usize, snr_idx: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((trial as u64) << 24) | ((snr_idx as u64) << 8) | purpose as u64);
    rng
}

#[derive(Debug, Clone)]
struct FrontEnd {
    frame_len: usize,
    seqs: Vec<ZcSequence>,
    rangers: Vec<CorrelationRanger>,
}

impl FrontEnd {
    fn new(sc: &Scenario) -> Result<Self> {
        let frame_len = frame_length(sc.max_range(), &sc.sig);
        let seqs = sc
            .sig
            .roots
            .iter()
            .map(|r| zadoff_chu(sc.sig.length, *r))
            .collect::<Result<Vec<_>>>()?;
        let rangers = seqs
            .iter()
            .map(|s| CorrelationRanger::new(s, frame_len, &sc.sig))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frame_len,
            seqs,
            rangers,
        })
    }

    fn measure<R: Rng + ?Sized>(
        &self,
        sig: &SignalParams,
        truth: &[[f64; 4]; 3],
        rng: &mut R,
    ) -> Result<[[f64; 4]; 3]> {
        let mut out = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..4 {
                let frame =
                    simulate_link(&self.seqs[i], truth[i][j], (i, j), sig, self.frame_len, rng)?;
                out[i][j] = self.rangers[i].estimate(&frame)?;
            }
        }
        Ok(out)
    }
}

/// A validated scenario together with its ranging front-end.
#[derive(Debug, Clone)]
pub struct Harness {
    sc: Scenario,
    front: Option<FrontEnd>,
    true_ranges: [[f64; 4]; 3],
}

impl Harness {
    pub fn new(sc: Scenario) -> Result<Self> {
        sc.validate()?;
        let front = match sc.ranging {
            RangingMode::Signal => Some(FrontEnd::new(&sc)?),
            RangingMode::Direct => None,
        };
        let true_ranges = true_ranges(&sc.beacons, sc.truth.matrix());
        Ok(Self {
            sc,
            front,
            true_ranges,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    /// Noisy ranges for all twelve links at `snr_db`.
    pub fn measure<R: Rng + ?Sized>(&self, snr_db: f64, rng: &mut R) -> Result<MeasurementSet> {
        let ranges = match &self.front {
            Some(front) => front.measure(&self.sc.sig.at_snr(snr_db), &self.true_ranges, rng)?,
            None => {
                let noise = Normal::new(0.0, self.sc.direct_sigma(snr_db))
                    .map_err(|_| Error::InvalidScenario("bad direct-mode deviation".into()))?;
                self.true_ranges
                    .map(|row| row.map(|r| r + noise.sample(rng)))
            }
        };
        MeasurementSet::new(&self.sc.beacons, ranges)
    }

    /// Runs one pipeline on given measurements. `init_rng` feeds the random
    /// start and the projection step of the improved initialization.
    pub fn solve<R: Rng + ?Sized>(
        &self,
        meas: &MeasurementSet,
        solver: SolverId,
        init_rng: &mut R,
    ) -> (Result<(Matrix3<f64>, SolverStatus, usize)>, f64) {
        let start = Instant::now();
        let out = self.pipeline(meas, solver, init_rng);
        (out, start.elapsed().as_secs_f64())
    }

    fn pipeline<R: Rng + ?Sized>(
        &self,
        meas: &MeasurementSet,
        solver: SolverId,
        init_rng: &mut R,
    ) -> Result<(Matrix3<f64>, SolverStatus, usize)> {
        let sc = &self.sc;
        let side = sc.side();
        if solver == SolverId::Gn {
            let x = gauss_newton_trilateration(&sc.beacons, meas, GN_ITERATIONS)?;
            return Ok((x, SolverStatus::Converged, GN_ITERATIONS));
        }
        let x0 = match (solver, sc.init) {
            (SolverId::ProjectedGn, _) | (_, InitMode::Improved) => {
                improved_init(&sc.beacons, meas, side, &sc.solver, init_rng)?
            }
            (_, InitMode::Random) => random_point(side, init_rng)?,
        };
        let cost = localization_cost(&sc.beacons, meas);
        let report: SolverReport = match solver {
            SolverId::ProjectedGn => return Ok((*x0.matrix(), SolverStatus::Converged, 0)),
            SolverId::RiemannianSd => riemannian_steepest_descent(&cost, &x0, &sc.solver)?,
            SolverId::RiemannianTr => riemannian_trust_region(&cost, &x0, &sc.solver)?,
            SolverId::RiemannianNewton => riemannian_newton(&cost, &x0, &sc.solver)?,
            SolverId::Gn => unreachable!("handled above"),
        };
        Ok((
            *report.final_point.matrix(),
            report.status,
            report.iterations,
        ))
    }

    fn record(
        &self,
        trial: usize,
        snr_db: f64,
        solver: SolverId,
        solved: Result<(Matrix3<f64>, SolverStatus, usize)>,
        solve_time: f64,
    ) -> TrialRecord {
        let blank = TrialRecord {
            trial,
            snr_db,
            solver,
            estimate: None,
            position_errors: [f64::NAN; 3],
            solve_time,
            converged: false,
            status: TrialStatus::SolverFailed,
            iterations: 0,
            constraint_residual: (f64::NAN, f64::NAN),
        };
        match solved {
            Ok((x, status, iterations)) => {
                let truth = self.sc.truth.matrix();
                TrialRecord {
                    estimate: Some(x),
                    position_errors: std::array::from_fn(|i| {
                        (x.column(i) - truth.column(i)).norm()
                    }),
                    converged: status == SolverStatus::Converged,
                    status: TrialStatus::Solved(status),
                    iterations,
                    constraint_residual: constraint_residual(&x, self.sc.side()),
                    ..blank
                }
            }
            Err(_) => blank,
        }
    }

    /// Every requested solver on trial `trial` at grid point `snr_idx`. All
    /// solvers see the same measurements and the same initialization stream.
    pub fn trial(&self, trial: usize, snr_idx: usize, solvers: &[SolverId]) -> Vec<TrialRecord> {
        let snr_db = self.sc.snr_grid_db[snr_idx];
        let mut noise = substream(self.sc.seed, trial, snr_idx, Purpose::Noise);
        let meas = self.measure(snr_db, &mut noise);
        solvers
            .iter()
            .map(|&solver| match &meas {
                Ok(meas) => {
                    let mut init = substream(self.sc.seed, trial, snr_idx, Purpose::Init);
                    let (solved, time) = self.solve(meas, solver, &mut init);
                    self.record(trial, snr_db, solver, solved, time)
                }
                Err(_) => TrialRecord {
                    status: TrialStatus::RangingFailed,
                    ..self.record(trial, snr_db, solver, Err(Error::SingularGeometry), 0.0)
                },
            })
            .collect()
    }

    /// All trials over the SNR grid, in parallel on the current rayon pool.
    pub fn sweep(&self, solvers: &[SolverId]) -> Sweep {
        let n_snr = self.sc.snr_grid_db.len();
        let records: Vec<TrialRecord> = (0..n_snr * self.sc.trials)
            .into_par_iter()
            .flat_map_iter(|k| self.trial(k % self.sc.trials, k / self.sc.trials, solvers))
            .collect();

        let mut summaries = Vec::with_capacity(n_snr * solvers.len());
        for (snr_idx, &snr_db) in self.sc.snr_grid_db.iter().enumerate() {
            let block = &records[snr_idx * self.sc.trials * solvers.len()..]
                [..self.sc.trials * solvers.len()];
            for &solver in solvers {
                let rows: Vec<&TrialRecord> = block.iter().filter(|r| r.solver == solver).collect();
                summaries.push(summarize(snr_db, solver, &rows));
            }
        }
        Sweep { records, summaries }
    }

    /// Square-root traces of both bounds at the truth, per grid SNR.
    pub fn bound_curves(&self) -> Result<Vec<BoundPoint>> {
        self.sc
            .snr_grid_db
            .iter()
            .map(|&snr_db| {
                let sig = self.sc.sig.at_snr(snr_db);
                let b = FisherBundle::compute(&self.sc.truth, &self.sc.beacons, &sig)?;
                Ok(BoundPoint {
                    snr_db,
                    sqrt_trace_crb: b.sqrt_trace_crb(),
                    sqrt_trace_ccrb: b.sqrt_trace_ccrb(),
                })
            })
            .collect()
    }
}

/// Statistics over the records of one (SNR, solver) cell.
pub fn summarize(snr_db: f64, solver: SolverId, rows: &[&TrialRecord]) -> SummaryStats {
    let ok: Vec<&&TrialRecord> = rows.iter().filter(|r| r.estimate.is_some()).collect();
    let mut sorted: Vec<f64> = ok.iter().flat_map(|r| r.position_errors).collect();
    sorted.sort_by(f64::total_cmp);

    let rms = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt()
        }
    };
    let rmse_per_transmitter = std::array::from_fn(|i| {
        let mut e: Vec<f64> = ok.iter().map(|r| r.position_errors[i]).collect();
        e.sort_by(f64::total_cmp);
        rms(&e)
    });
    let mut times: Vec<f64> = rows.iter().map(|r| r.solve_time).collect();
    times.sort_by(f64::total_cmp);

    SummaryStats {
        snr_db,
        solver,
        rmse: rms(&sorted),
        rmse_per_transmitter,
        percentile90: percentile(&sorted, 0.9),
        max_error: sorted.last().copied().unwrap_or(f64::NAN),
        mean_time: if times.is_empty() {
            f64::NAN
        } else {
            times.iter().sum::<f64>() / times.len() as f64
        },
        n_trials: ok.len(),
        n_failed: rows.len() - ok.len(),
        n_converged: rows.iter().filter(|r| r.converged).count(),
        sorted_errors: sorted,
    }
}

/// Nearest-rank percentile of ascending data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// One trial of one solver driven by a single stream: ranging first, then
/// initialization.
pub fn run_trial<R: Rng + ?Sized>(
    sc: &Scenario,
    snr_db: f64,
    solver: SolverId,
    rng: &mut R,
) -> Result<TrialRecord> {
    let h = Harness::new(sc.clone())?;
    Ok(match h.measure(snr_db, rng) {
        Ok(meas) => {
            let (solved, time) = h.solve(&meas, solver, rng);
            h.record(0, snr_db, solver, solved, time)
        }
        Err(Error::NoPeak { .. }) => TrialRecord {
            status: TrialStatus::RangingFailed,
            ..h.record(0, snr_db, solver, Err(Error::SingularGeometry), 0.0)
        },
        Err(e) => return Err(e),
    })
}

pub fn run_sweep(sc: &Scenario, solvers: &[SolverId]) -> Result<Sweep> {
    Ok(Harness::new(sc.clone())?.sweep(solvers))
}

pub fn bound_curves(sc: &Scenario) -> Result<Vec<BoundPoint>> {
    Harness::new(sc.clone())?.bound_curves()
}

/// Range RMSE of the correlation front-end at `snr_db` over all
/// twelve links and `trials` frames per link.
pub fn signal_range_rmse(sc: &Scenario, snr_db: f64, trials: usize) -> Result<f64> {
    let mut sc = sc.clone();
    sc.ranging = RangingMode::Signal;
    let h = Harness::new(sc)?;
    let front = h.front.as_ref().expect("signal mode builds a front-end");
    let sig = h.sc.sig.at_snr(snr_db);
    let sq: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(h.sc.seed, t, 0, Purpose::Calibration);
            let est = front.measure(&sig, &h.true_ranges, &mut rng)?;
            Ok((0..3)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .map(|(i, j)| (est[i][j] - h.true_ranges[i][j]).powi(2))
                .sum::<f64>())
        })
        .collect::<Result<_>>()?;
    Ok((sq.iter().sum::<f64>() / (12 * trials) as f64).sqrt())
}

/// `κ` that makes direct-mode range noise match the correlation front-end's
/// range RMSE at [`CALIBRATION_SNR_DB`].
pub fn calibrate_kappa(sc: &Scenario, trials: usize) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidScenario(
            "calibration needs at least one trial".into(),
        ));
    }
    let rmse = signal_range_rmse(sc, CALIBRATION_SNR_DB, trials)?;
    let unit = Scenario {
        kappa: 1.0,
        ..sc.clone()
    };
    Ok(rmse / unit.direct_sigma(CALIBRATION_SNR_DB))
}
