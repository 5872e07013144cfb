//! Frequency-domain received signal and SNR bookkeeping.
//!
//! Energy convention: every user transmits unit-energy symbols, so the
//! total received symbol energy per antenna and subcarrier use is
//! `Es = N` (the channel gains have unit average power). The noise variance
//! for a target `Es/N0` is therefore `N / 10^(Es/N0 / 10)`.

use rand::Rng;

use crate::channel_model::{complex_gaussian, ChannelRealization};
use crate::txchain::FrameConfig;
use crate::{Error, Result, C64};

/// Received tensor `y[t][m][k]` (row-major) and its noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RxObservation {
    pub symbols: usize,
    pub antennas: usize,
    pub subcarriers: usize,
    pub y: Vec<C64>,
    pub noise_var: f64,
}

impl RxObservation {
    #[inline]
    pub fn index(&self, t: usize, m: usize, k: usize) -> usize {
        (t * self.antennas + m) * self.subcarriers + k
    }

    #[inline]
    pub fn at(&self, t: usize, m: usize, k: usize) -> C64 {
        self.y[self.index(t, m, k)]
    }
}

/// Noiseless superposition `sum_n w[m][n][k] x[t][n][k]`.
pub fn noiseless_rx(ch: &ChannelRealization, x: &[C64], frame: &FrameConfig) -> Result<Vec<C64>> {
    Error::check_len("users", frame.users, ch.users)?;
    Error::check_len("subcarriers", frame.subcarriers, ch.subcarriers)?;
    Error::check_len("symbol tensor", frame.users * frame.resource_elements(), x.len())?;
    let (t_tot, m_tot, n_tot, k_tot) = (frame.symbols, ch.antennas, ch.users, ch.subcarriers);
    let mut y = vec![C64::new(0.0, 0.0); t_tot * m_tot * k_tot];
    for t in 0..t_tot {
        for m in 0..m_tot {
            let row = &mut y[(t * m_tot + m) * k_tot..(t * m_tot + m + 1) * k_tot];
            for n in 0..n_tot {
                let w = ch.cfr(m, n);
                let xs = &x[frame.x_index(t, n, 0)..frame.x_index(t, n, 0) + k_tot];
                for ((o, wk), xk) in row.iter_mut().zip(w).zip(xs) {
                    *o += wk * xk;
                }
            }
        }
    }
    Ok(y)
}

/// `y = W x + noise` with i.i.d. `CN(0, noise_var)` noise.
pub fn synthesize_rx<R: Rng + ?Sized>(
    ch: &ChannelRealization,
    x: &[C64],
    frame: &FrameConfig,
    noise_var: f64,
    rng: &mut R,
) -> Result<RxObservation> {
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::config("noise variance must be finite and nonnegative"));
    }
    let mut y = noiseless_rx(ch, x, frame)?;
    if noise_var > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian(rng, noise_var);
        }
    }
    Ok(RxObservation {
        symbols: frame.symbols,
        antennas: ch.antennas,
        subcarriers: ch.subcarriers,
        y,
        noise_var,
    })
}

/// Fraction of resource elements carrying data after pilot and cyclic
/// prefix overhead: `(TNK - N^2 K_p) / (TN(L_cp + K))`.
pub fn spectral_efficiency(frame: &FrameConfig) -> f64 {
    let (t, n, k) = (frame.symbols as f64, frame.users as f64, frame.subcarriers as f64);
    let kp = frame.pilots as f64;
    let lcp = frame.cp_len as f64;
    (t * n * k - n * n * kp) / (t * n * (lcp + k))
}

/// `10 log10(M / (eta R N Q))`, the dB gap `Eb/N0 - Es/N0`.
pub fn ebn0_offset_db(antennas: usize, eta: f64, rate: f64, users: usize, bits_per_symbol: usize) -> f64 {
    10.0 * (antennas as f64 / (eta * rate * users as f64 * bits_per_symbol as f64)).log10()
}

/// `Es/N0` in dB for a given `Eb/N0` in dB.
pub fn ebn0_to_esn0_db(ebn0_db: f64, antennas: usize, eta: f64, rate: f64, users: usize, q: usize) -> f64 {
    ebn0_db - ebn0_offset_db(antennas, eta, rate, users, q)
}

/// Noise variance for the given `Eb/N0` in dB.
pub fn ebn0_to_symbol_noise(
    ebn0_db: f64,
    frame: &FrameConfig,
    antennas: usize,
    rate: f64,
    eta: f64,
) -> Result<f64> {
    if antennas == 0 || !(rate > 0.0) || !(eta > 0.0) {
        return Err(Error::config("antennas, code rate and efficiency must be positive"));
    }
    let esn0 = ebn0_to_esn0_db(ebn0_db, antennas, eta, rate, frame.users, frame.bits_per_symbol);
    Ok(frame.users as f64 / 10f64.powf(esn0 / 10.0))
}
