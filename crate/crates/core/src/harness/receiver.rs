use serde::{Deserialize, Serialize};

use crate::channel_estimator::{
    combine_incoming, pilot_messages, EstimatorState, GmpCorrection, PriorMode,
};
use crate::channel_model::{PowerDelayProfile, TapIndexing};
use crate::decoder::{bcjr_decode, BcjrMetric, Trellis};
use crate::ep_detector::{DetectorKind, DetectorState};
use crate::link::RxObservation;
use crate::txchain::TxChain;
use crate::{Error, Result, C64};

/// Noise variance floor applied inside the receiver so noiseless runs keep
/// finite message precisions.
const NOISE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    pub detector: DetectorKind,
    pub prior: PriorMode,
    pub correction: GmpCorrection,
    pub metric: BcjrMetric,
    pub turbo_iters: usize,
    pub first_inner: usize,
    pub later_inner: usize,
    pub taps: usize,
    pub indexing: TapIndexing,
}

/// Receiver state after one turbo iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationSnapshot {
    /// CIR estimate `(m, n, l)` used by this iteration's detection pass.
    pub h_mean: Vec<C64>,
    /// Decoded information bits per user.
    pub info_bits: Vec<Vec<u8>>,
}

/// Runs the turbo receiver on one observed frame.
///
/// Each iteration first refreshes the channel estimate (pilot-only with
/// `first_inner` GMP passes at the start, then `later_inner` passes using
/// pilots and the data-position messages from the last detection), then
/// runs detection, BCJR decoding per user and the a priori LLR feedback.
/// `pdp` is required for the oracle prior.
pub fn run_turbo_receiver(
    chain: &TxChain,
    rx: &RxObservation,
    cfg: &ReceiverConfig,
    pdp: Option<&PowerDelayProfile>,
) -> Result<Vec<IterationSnapshot>> {
    let frame = &chain.frame;
    let (m_tot, n_tot, k_tot) = (rx.antennas, frame.users, frame.subcarriers);
    Error::check_len("observation subcarriers", k_tot, rx.subcarriers)?;
    Error::check_len("observation symbols", frame.symbols, rx.symbols)?;
    if cfg.turbo_iters == 0 {
        return Err(Error::config("at least one turbo iteration is required"));
    }
    let mut rx = rx.clone();
    rx.noise_var = rx.noise_var.max(NOISE_FLOOR);

    let data = &chain.pattern.data;
    let trellis = Trellis::new(&chain.code)?;
    let q_tot = frame.bits_per_symbol;
    let user_bits = data.len() * q_tot;

    let pilots = pilot_messages(&rx, n_tot, &chain.pattern)?;
    let mut est = EstimatorState::new(m_tot, n_tot, cfg.taps, k_tot, cfg.indexing, cfg.correction)?;
    let mut det = DetectorState::new(cfg.detector, m_tot, n_tot, data.len(), chain.constellation.clone());
    let mut llr_a = vec![0.0; n_tot * user_bits];
    let mut out = Vec::with_capacity(cfg.turbo_iters);

    for iter in 0..cfg.turbo_iters {
        let (incoming, passes) = if iter == 0 {
            (pilots.clone(), cfg.first_inner)
        } else {
            let msgs = combine_incoming(&pilots, det.f_to_w(), data, m_tot, n_tot, k_tot)?;
            (msgs, cfg.later_inner)
        };
        for _ in 0..passes {
            est.gmp_pass(&incoming, cfg.prior, pdp)?;
        }
        let w_to_f = est.outgoing(data, Some(det.f_to_w()))?;
        let llr_e = det.detect(&rx, data, &w_to_f, &est.w_post)?;

        let mut info_bits = Vec::with_capacity(n_tot);
        for (n, il) in chain.interleavers.iter().enumerate() {
            let user = &llr_e[n * user_bits..(n + 1) * user_bits];
            let dec = bcjr_decode(&il.deinterleave(user), &trellis, cfg.metric)?;
            llr_a[n * user_bits..(n + 1) * user_bits].copy_from_slice(&il.interleave(&dec.extrinsic));
            info_bits.push(dec.info_bits);
        }
        det.update_symbols(&llr_a)?;
        out.push(IterationSnapshot {
            h_mean: est.h_mean.clone(),
            info_bits,
        });
    }
    Ok(out)
}
