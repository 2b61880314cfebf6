//! Simulation and synthesis toolkit for closed-loop control of an
//! acoustically deflected fluidic jet.
//!
//! The toolkit reproduces, at desk scale, a complete control pipeline for a
//! piezo-driven Coandă-effect fluidic amplifier:
//!
//! * [`dsp`] — excitation-signal synthesis (chirp, stepped sine), amplitude
//!   modulation/demodulation, IIR filtering, and segment-averaged spectral
//!   estimation.
//! * [`plant`] — a simulated Hammerstein plant: static input nonlinearity,
//!   steady deflection-curve physics, quasi-steady response, identified LTI
//!   dynamics with transport delay, and seeded turbulence noise.
//! * [`sysid`] — empirical transfer-function estimation campaigns, delay
//!   estimation, rational transfer-function fitting, and nonlinearity fitting.
//! * [`control`] — state-space realization, integrator augmentation, discrete
//!   LQR and Kalman synthesis via Riccati recursion, loop-transfer-recovery
//!   sweeps, sensitivity curves and stability margins.
//! * [`cloop`] — the closed-loop runtime: observer + state feedback with
//!   feed-forward, saturation and anti-windup, plus the step, input
//!   disturbance, and flow-rate sweep experiments with metrics.
//! * [`io`] — CSV/JSON artifact formats shared by the library and the CLI.
//!
//! All stochastic operations are seeded and deterministic: identical seeds
//! and configurations produce bitwise identical outputs regardless of the
//! number of worker threads.

pub mod cloop;
pub mod control;
pub mod dsp;
pub mod fft;
pub mod io;
pub mod plant;
pub mod sysid;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on operation inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// An iterative numerical procedure failed (non-convergence, singular
    /// system, indefinite solution).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// File I/O or serialization failure.
    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Builds a deterministic per-member RNG seed from a base seed.
///
/// SplitMix64 finalizer over `base ^ (index + 1)`; members of an ensemble get
/// decorrelated streams while the whole ensemble stays reproducible from one
/// base seed.
pub fn member_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
