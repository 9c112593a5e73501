//! Link-level simulation library for sequence-block compressed-sensing
//! multiuser detection (SB-CSMUD) in a grant-free non-orthogonal MC-CDMA
//! uplink.
//!
//! The pipeline is split along the physical chain:
//!
//! - [`seqdesign`]: unit-circle sensing matrices, sliding-window sequence
//!   blocks, and coherence diagnostics (`mu`, `mu_block`).
//! - [`modem`]: rate-1/2 convolutional coding with a seeded random
//!   interleaver, hard-decision Viterbi decoding, and DQPSK.
//! - [`phy`]: Bernoulli traffic, block spreading, frequency-domain block
//!   fading, and AWGN observation assembly.
//! - [`detector`]: the sequence-block GOMP detector, per-column least-squares
//!   data estimation, and a brute-force support oracle for verification.
//! - [`simkit`]: reproducible Monte Carlo trials and parameter sweeps with
//!   DER/BER accounting and CSV/JSON emission.
//!
//! All randomness flows through explicit seeds; identical seeds give
//! bit-identical results regardless of worker count.

pub mod detector;
pub mod error;
pub mod modem;
pub mod phy;
pub mod seed;
pub mod seqdesign;
pub mod simkit;

pub use error::{Error, Result};

use num_complex::Complex;

/// Complex scalar used throughout the crate.
pub type C64 = Complex<f64>;
/// Dense complex matrix (column-major; columns are chips-by-symbol slices).
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex vector.
pub type CVector = nalgebra::DVector<C64>;
