use crate::channel_model::ChannelRealization;
use crate::decoder::{bcjr_decode, BcjrMetric, Trellis};
use crate::ep_detector::{extrinsic_llrs, symbol_log_prior};
use crate::link::RxObservation;
use crate::txchain::{Frame, TxChain};
use crate::{Error, Result, C64};

/// Matched-filter bound receiver: every other user's contribution is
/// removed with the true channel and symbols, the remainder is combined
/// across antennas with the true CFR, and exact symbol LLRs are decoded.
/// Returns the decoded information bits per user.
pub fn mfb_pcsi(
    chain: &TxChain,
    frame: &Frame,
    rx: &RxObservation,
    ch: &ChannelRealization,
    metric: BcjrMetric,
) -> Result<Vec<Vec<u8>>> {
    let cfg = &chain.frame;
    let (m_tot, n_tot) = (rx.antennas, cfg.users);
    Error::check_len("channel antennas", m_tot, ch.antennas)?;
    Error::check_len("channel users", n_tot, ch.users)?;
    let con = &chain.constellation;
    let (a_tot, q_tot) = (con.size(), con.bits_per_symbol());
    let trellis = Trellis::new(&chain.code)?;
    let noise = rx.noise_var.max(1e-10);

    let mut uniform = vec![0.0; a_tot];
    symbol_log_prior(&vec![0.0; q_tot], con, &mut uniform);
    let zero_llr = vec![0.0; q_tot];
    let mut log_like = vec![0.0; a_tot];

    let mut decoded = Vec::with_capacity(n_tot);
    for (n, il) in chain.interleavers.iter().enumerate() {
        let mut llr = vec![0.0; chain.pattern.data.len() * q_tot];
        for (j, &(t, k)) in chain.pattern.data.iter().enumerate() {
            let mut num = C64::new(0.0, 0.0);
            let mut gain = 0.0;
            for m in 0..m_tot {
                let mut z = rx.at(t, m, k);
                for other in (0..n_tot).filter(|&o| o != n) {
                    z -= ch.cfr(m, other)[k] * frame.x[cfg.x_index(t, other, k)];
                }
                let w = ch.cfr(m, n)[k];
                num += w.conj() * z;
                gain += w.norm_sqr();
            }
            let out = &mut llr[j * q_tot..(j + 1) * q_tot];
            if !(gain > 0.0) {
                out.fill(0.0);
                continue;
            }
            // r = x + e with e ~ CN(0, noise / gain).
            let r = num / gain;
            let var = noise / gain;
            for (a, &pt) in con.points().iter().enumerate() {
                log_like[a] = -(r - pt).norm_sqr() / var;
            }
            extrinsic_llrs(&log_like, &uniform, &zero_llr, con, out);
        }
        decoded.push(bcjr_decode(&il.deinterleave(&llr), &trellis, metric)?.info_bits);
    }
    Ok(decoded)
}
