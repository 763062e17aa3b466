use thiserror::Error;

/// Errors raised across the geometry, estimation and bounds layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(
        "point violates the triangle constraints: residual ({g1:.3e}, {g2:.3e}) for side {side}"
    )]
    Infeasible { g1: f64, g2: f64, side: f64 },

    #[error("side length must be finite and strictly positive, got {0}")]
    InvalidSide(f64),

    #[error("direction is not tangent: constraint derivative ({d1:.3e}, {d2:.3e})")]
    NotTangent { d1: f64, d2: f64 },

    #[error("normal-space Gram matrix is numerically singular (det {det:.3e}, trace {trace:.3e})")]
    NearSingularGram { det: f64, trace: f64 },

    #[error("retraction undefined at this step: {0}")]
    RetractionDomain(&'static str),

    #[error("beacons are (nearly) coplanar: condition number {0:.3e}")]
    CoplanarBeacons(f64),

    #[error("invalid measurement: {0}")]
    InvalidMeasurement(&'static str),

    #[error("trilateration system is rank deficient")]
    SingularGeometry,

    #[error("transmitter {transmitter} coincides with beacon {beacon}")]
    DegenerateGeometry { transmitter: usize, beacon: usize },

    #[error("Fisher information is singular (condition number {0:.3e})")]
    SingularFim(f64),

    #[error("projected Fisher information is singular (condition number {0:.3e})")]
    SingularProjectedFim(f64),

    #[error("constraint Jacobian is rank deficient (rank {0})")]
    RankDeficient(usize),

    #[error("root {root} is not coprime with length {length}")]
    NotCoprime { root: u32, length: usize },

    #[error("invalid signal parameters: {0}")]
    InvalidSignal(&'static str),

    #[error("delayed sequence ({delay} + {length} samples) overflows a frame of {frame} samples")]
    FrameOverflow {
        delay: usize,
        length: usize,
        frame: usize,
    },

    #[error("no correlation peak above the noise floor (peak {peak:.3e}, floor {floor:.3e})")]
    NoPeak { peak: f64, floor: f64 },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;
