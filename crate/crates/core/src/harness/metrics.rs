use serde::{Deserialize, Serialize};

use super::Variant;
use crate::{Error, Result, C64};

pub const CSV_HEADER: &str = "variant,eb_n0_db,turbo_iter,nmse,ber,frames,bits,seed";

/// Aggregated metrics of one `(variant, Eb/N0, turbo iteration)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub variant: Variant,
    pub eb_n0_db: f64,
    /// 1-based; the perfect-CSI bound reports iteration 0.
    pub turbo_iter: usize,
    pub nmse: f64,
    pub ber: f64,
    pub frames: usize,
    pub bits: usize,
    pub seed: u64,
    /// Wall-clock seconds spent on this cell's `(variant, Eb/N0)` runs.
    /// Not written to CSV.
    #[serde(skip)]
    pub elapsed_s: f64,
}

impl MetricRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6e},{},{:.6e},{:.6e},{},{},{}",
            self.variant, self.eb_n0_db, self.turbo_iter, self.nmse, self.ber, self.frames, self.bits, self.seed
        )
    }
}

/// NMSE of estimated CIR taps, `(1/MN) sum_{m,n} |h - h_hat|^2 / |h|^2`
/// over `(m, n, l)` tensors. Links whose true energy is zero are skipped.
pub fn nmse(truth: &[C64], estimate: &[C64], taps: usize) -> Result<f64> {
    Error::check_len("CIR estimate", truth.len(), estimate.len())?;
    if taps == 0 || truth.len() % taps != 0 {
        return Err(Error::config("CIR length is not a multiple of the tap count"));
    }
    let mut acc = 0.0;
    let mut links = 0usize;
    for (h, e) in truth.chunks(taps).zip(estimate.chunks(taps)) {
        let energy: f64 = h.iter().map(|v| v.norm_sqr()).sum();
        if energy == 0.0 {
            log::warn!("skipping a link with zero channel energy in NMSE");
            continue;
        }
        let err: f64 = h.iter().zip(e).map(|(a, b)| (a - b).norm_sqr()).sum();
        acc += err / energy;
        links += 1;
    }
    if links == 0 {
        return Err(Error::config("every link has zero channel energy"));
    }
    Ok(acc / links as f64)
}

pub fn bit_errors(bits: &[u8], decided: &[u8]) -> Result<usize> {
    Error::check_len("decided bits", bits.len(), decided.len())?;
    Ok(bits.iter().zip(decided).filter(|(a, b)| (**a & 1) != (**b & 1)).count())
}

/// Hamming distance over length.
pub fn ber(bits: &[u8], decided: &[u8]) -> Result<f64> {
    let e = bit_errors(bits, decided)?;
    Ok(if bits.is_empty() { 0.0 } else { e as f64 / bits.len() as f64 })
}
