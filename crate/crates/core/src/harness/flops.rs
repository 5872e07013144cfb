//! Per-turbo-iteration FLOP counts of the joint receivers.
//!
//! Additions, multiplications and divisions each count as one FLOP; a
//! complex-by-real product is two and a complex product six. Decoder work
//! and table-driven `exp` are excluded.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "ep-qa-l")]
    EpQaL,
    #[serde(rename = "ep-qa")]
    EpQa,
    #[serde(rename = "bp-ga")]
    BpGa,
    /// BP with mean-field channel messages and a disjoint channel model.
    #[serde(rename = "bp-mf")]
    BpMf,
    /// Low-complexity BP-MF over a Markov channel model.
    #[serde(rename = "bp-mf-m")]
    BpMfM,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::EpQaL,
        Algorithm::EpQa,
        Algorithm::BpGa,
        Algorithm::BpMf,
        Algorithm::BpMfM,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::EpQaL => "ep-qa-l",
            Algorithm::EpQa => "ep-qa",
            Algorithm::BpGa => "bp-ga",
            Algorithm::BpMf => "bp-mf",
            Algorithm::BpMfM => "bp-mf-m",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown algorithm `{s}`")))
    }
}

/// System dimensions entering the FLOP formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopParams {
    pub symbols: usize,
    pub antennas: usize,
    pub users: usize,
    pub subcarriers: usize,
    pub pilots: usize,
    pub taps: usize,
    pub bits_per_symbol: usize,
    /// Markov-model window of BP-MF-M.
    pub markov_window: usize,
}

impl FlopParams {
    /// 64 x 8 16QAM with `K_p = L = K / 8` and `T = 8`.
    pub fn complexity_sweep(subcarriers: usize) -> Self {
        Self {
            symbols: 8,
            antennas: 64,
            users: 8,
            subcarriers,
            pilots: subcarriers / 8,
            taps: subcarriers / 8,
            bits_per_symbol: 4,
            markov_window: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopBreakdown {
    pub detection: f64,
    pub estimation: f64,
}

impl FlopBreakdown {
    pub fn total(&self) -> f64 {
        self.detection + self.estimation
    }
}

pub fn flop_estimate(p: &FlopParams, alg: Algorithm) -> Result<FlopBreakdown> {
    if p.subcarriers == 0 || p.pilots > p.subcarriers || p.bits_per_symbol == 0 {
        return Err(Error::config("FLOP parameters need K >= 1, K_p <= K and Q >= 1"));
    }
    let t = p.symbols as f64;
    let m = p.antennas as f64;
    let n = p.users as f64;
    let k = p.subcarriers as f64;
    let kp = p.pilots as f64;
    let l = p.taps as f64;
    let q = p.bits_per_symbol as f64;
    let a = (1u64 << p.bits_per_symbol) as f64;
    let g = p.markov_window as f64;

    let tmnk = t * m * n * k;
    let tnk = t * n * k;
    let ep_tail = (11.0 * n + 4.0) * m * (k - kp) + (23.0 * a + 3.0 * q * a + q) * tnk;
    let detection = match alg {
        Algorithm::EpQaL | Algorithm::EpQa => 47.0 * tmnk + ep_tail,
        Algorithm::BpGa => (28.0 * a + 33.0) * tmnk + (2.0 * a + 3.0 * q * a + q) * tnk,
        Algorithm::BpMf => 19.0 * tmnk + ep_tail,
        Algorithm::BpMfM => 33.0 * tmnk + ep_tail,
    };
    let gmp = |tap_coeff: f64| {
        m * n * (20.0 * k * k.log2() + 30.0 * t * k + 11.0 * k - 26.0 * t * kp + 13.0 * kp + tap_coeff * l - 2.0)
    };
    let estimation = match alg {
        Algorithm::EpQaL => gmp(18.0),
        Algorithm::EpQa | Algorithm::BpGa => gmp(14.0),
        Algorithm::BpMf => {
            m * n * (16.0 * k.powi(3) + 12.0 * k * k + 17.0 * t * k - k) + 2.0 * tnk - 2.0 * n * k - 2.0 * m * n
        }
        // The two cubic terms are kept as tabulated.
        Algorithm::BpMfM => {
            m * n * (118.0 * g * g + 68.0 * g - 4.0) * k - 112.0 * g.powi(3) - 92.0 * g.powi(3) + 5.0 * g
        }
    };
    Ok(FlopBreakdown { detection, estimation })
}
