//! TOML experiment configuration. Every key is optional; omitted keys take the
//! reference room experiment values. See `configs/README.md` for the schema.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eqtri::bounds::SignalParams;
use eqtri::manifold::TrianglePoint;
use eqtri::objective::BeaconSet;
use eqtri::sim::{calibrate_kappa, InitMode, RangingMode, Scenario, SolverId, DEFAULT_TRIALS};
use eqtri::solvers::SolverConfig;
use nalgebra::Vector3;
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub snr_grid_db: Vec<f64>,
    pub solvers: Vec<SolverId>,
    pub init: InitMode,
    pub ranging: RangingMode,
    pub out_dir: PathBuf,
    /// When false, time columns are written as `NaN` so reruns are byte-identical.
    pub timing: bool,
    pub geometry: GeometryConfig,
    pub signal: SignalConfig,
    pub direct: DirectConfig,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub side: f64,
    pub room: [f64; 3],
    pub beacons: [[f64; 3]; 4],
    pub transmitters: [[f64; 3]; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub length: usize,
    pub roots: [u32; 3],
    pub ts: f64,
    pub c: f64,
    /// Attenuation per (transmitter, beacon) link.
    pub psi: [[f64; 4]; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectConfig {
    /// Calibrated against the correlation front-end at load time when absent.
    pub kappa: Option<f64>,
    pub calibration_trials: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sc = Scenario::paper();
        Self {
            seed: sc.seed,
            trials: DEFAULT_TRIALS,
            snr_grid_db: sc.snr_grid_db,
            solvers: SolverId::ALL.to_vec(),
            init: sc.init,
            ranging: sc.ranging,
            out_dir: PathBuf::from("results"),
            timing: true,
            geometry: GeometryConfig::default(),
            signal: SignalConfig::default(),
            direct: DirectConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let sc = Scenario::paper();
        Self {
            side: sc.side(),
            room: sc.room.into(),
            beacons: sc.beacons.positions().map(Into::into),
            transmitters: std::array::from_fn(|i| sc.truth.vertex(i).into()),
        }
    }
}

impl Default for SignalConfig {
    fn default() -> Self {
        let sig = Scenario::paper().sig;
        Self {
            length: sig.length,
            roots: sig.roots,
            ts: sig.ts,
            c: sig.c,
            psi: sig.psi,
        }
    }
}

impl Default for DirectConfig {
    fn default() -> Self {
        Self {
            kappa: None,
            calibration_trials: DEFAULT_TRIALS,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        if cfg.solvers.is_empty() {
            bail!("`solvers` must name at least one solver");
        }
        Ok(cfg)
    }

    /// Scenario with `κ` taken from the config, or `None` when it still has
    /// to be calibrated.
    pub fn scenario(&self) -> Result<(Scenario, Option<f64>)> {
        let g = &self.geometry;
        let v = |a: [f64; 3]| Vector3::from(a);
        let truth = TrianglePoint::from_vertices(
            v(g.transmitters[0]),
            v(g.transmitters[1]),
            v(g.transmitters[2]),
            g.side,
        )
        .context("geometry.transmitters must form a feasible triangle of side geometry.side")?;
        let beacons = BeaconSet::new(g.beacons.map(v)).context("geometry.beacons")?;
        let s = &self.signal;
        let mut sig = SignalParams::with_snr(s.length, s.roots, s.ts, s.c, 0.0)?;
        sig.psi = s.psi;
        let sc = Scenario {
            room: v(g.room),
            beacons,
            truth,
            sig,
            snr_grid_db: self.snr_grid_db.clone(),
            trials: self.trials,
            seed: self.seed,
            ranging: self.ranging,
            init: self.init,
            kappa: self.direct.kappa.unwrap_or(1.0),
            solver: self.solver,
        };
        sc.validate()?;
        Ok((sc, self.direct.kappa))
    }
}

/// A parsed config file with its digest and the fully resolved scenario.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
    /// Hex SHA-256 of the raw file bytes.
    pub sha256: String,
    pub kappa_calibrated: bool,
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads, parses and resolves a config file. Seed and trial overrides are
/// applied before `κ` is calibrated.
pub fn load(path: &Path, seed: Option<u64>, trials: Option<usize>) -> Result<Loaded> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let text = std::str::from_utf8(&bytes)
        .with_context(|| format!("config {} is not UTF-8", path.display()))?;
    let mut config = ExperimentConfig::parse(text)
        .with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(trials) = trials {
        config.trials = trials;
    }
    let (mut scenario, kappa) = config
        .scenario()
        .with_context(|| format!("invalid config {}", path.display()))?;
    let kappa_calibrated = kappa.is_none();
    if kappa_calibrated {
        scenario.kappa = calibrate_kappa(&scenario, config.direct.calibration_trials)
            .context("calibrating direct.kappa")?;
    }
    Ok(Loaded {
        config,
        scenario,
        sha256: digest(&bytes),
        kappa_calibrated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_reference_scenario() {
        let cfg = ExperimentConfig::parse("").unwrap();
        let (sc, kappa) = cfg.scenario().unwrap();
        let paper = Scenario::paper();
        assert_eq!(kappa, None);
        assert_eq!(sc.truth, paper.truth);
        assert_eq!(sc.beacons, paper.beacons);
        assert_eq!(sc.room, paper.room);
        assert_eq!(sc.snr_grid_db, paper.snr_grid_db);
        assert_eq!(cfg.solvers, SolverId::ALL);
    }

    #[test]
    fn unknown_solver_is_reported_with_its_line() {
        let err = ExperimentConfig::parse("seed = 1\nsolvers = [\"gn\", \"simplex\"]\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("simplex"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("[solver]\nmax_iter = 3\n").is_err());
        assert!(ExperimentConfig::parse("trails = 3\n").is_err());
    }

    #[test]
    fn rounded_transmitters_are_infeasible() {
        let cfg = ExperimentConfig::parse(
            "[geometry]\ntransmitters = [[2, 2, 1], [2.1, 2, 1], [2.05, 2, 1.0866]]\n",
        )
        .unwrap();
        assert!(cfg.scenario().is_err());
    }
}
