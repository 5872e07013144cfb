//! Joint channel estimation and decoding for uplink massive MIMO-OFDM.
//!
//! The receiver alternates between a detection-decoding loop (expectation
//! propagation with a quadratic approximation of the channel transition
//! beliefs, or a Gaussian-approximated BP baseline, plus BCJR decoding) and a
//! channel-estimation loop (Gaussian message passing over the channel impulse
//! response with optional variational learning of the power-delay profile).
//!
//! Module map:
//!
//! - [`channel_model`]: 3D Kronecker-correlated frequency-selective channels.
//! - [`txchain`]: RSC encoding, interleaving, Gray mapping, pilot framing.
//! - [`link`]: received-signal synthesis and SNR bookkeeping.
//! - [`ep_detector`]: EP-QA and BP-GA detection messages, LLR exchange.
//! - [`channel_estimator`]: GMP channel estimation and PDP learning.
//! - [`decoder`]: log-MAP BCJR for the RSC code.
//! - [`harness`]: turbo scheduling, metrics, FLOP tables, Monte Carlo runs.

pub mod channel_estimator;
pub mod channel_model;
pub mod decoder;
pub mod ep_detector;
mod error;
pub mod harness;
pub mod link;
pub mod msg;
pub mod seed;
pub mod txchain;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
