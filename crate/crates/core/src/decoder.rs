//! BCJR decoding of the rate-1/2 RSC code.
//!
//! LLRs are `ln P(c = 1) / P(c = 0)` throughout. The decoder takes channel
//! LLRs for the coded bits in encoder output order (systematic, parity per
//! step, tail steps last) and returns the a posteriori LLRs minus the input,
//! which the detector uses as a priori information.

use crate::txchain::CodeConfig;
use crate::{Error, Result};

/// Add-compare-select flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BcjrMetric {
    /// Exact log-sum-exp.
    #[default]
    LogMap,
    /// `max` in place of log-sum-exp.
    MaxLog,
}

/// State transition and output tables of the code.
#[derive(Debug, Clone)]
pub struct Trellis {
    code: CodeConfig,
    num_states: usize,
    /// `next[s * 2 + u]`.
    next: Vec<u32>,
    /// `parity[s * 2 + u]`.
    parity: Vec<u8>,
    /// Input that zeroes the register bit from state `s`.
    tail_input: Vec<u8>,
}

impl Trellis {
    pub fn new(code: &CodeConfig) -> Result<Self> {
        code.validate()?;
        let num_states = code.num_states();
        let mut next = Vec::with_capacity(2 * num_states);
        let mut parity = Vec::with_capacity(2 * num_states);
        for s in 0..num_states as u32 {
            for u in 0..2u8 {
                let (ns, p) = code.step(s, u);
                next.push(ns);
                parity.push(p);
            }
        }
        let tail_input = (0..num_states as u32).map(|s| code.tail_input(s)).collect();
        Ok(Self {
            code: *code,
            num_states,
            next,
            parity,
            tail_input,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn code(&self) -> &CodeConfig {
        &self.code
    }

    #[inline]
    pub fn next_state(&self, state: usize, input: u8) -> usize {
        self.next[state * 2 + input as usize] as usize
    }

    #[inline]
    pub fn parity_bit(&self, state: usize, input: u8) -> u8 {
        self.parity[state * 2 + input as usize]
    }

    /// Inputs allowed at trellis step `step` of a block with `info_len`
    /// information steps.
    fn inputs(&self, state: usize, step: usize, info_len: usize) -> impl Iterator<Item = u8> {
        let tail = self.tail_input[state];
        let free = step < info_len;
        (0..2u8).filter(move |&u| free || u == tail)
    }
}

/// Output of one BCJR run.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// A posteriori minus input LLR per coded bit.
    pub extrinsic: Vec<f64>,
    /// A posteriori LLR per coded bit.
    pub app: Vec<f64>,
    /// Hard decisions on the information bits.
    pub info_bits: Vec<u8>,
}

/// Runs the forward-backward recursion over `llr` (length `2 (B + tail)`).
pub fn bcjr_decode(llr: &[f64], trellis: &Trellis, metric: BcjrMetric) -> Result<DecodeOutput> {
    let tail = trellis.code.tail_len();
    if llr.len() % 2 != 0 || llr.len() / 2 <= tail {
        return Err(Error::Length {
            what: "coded LLRs (even, longer than the tail)",
            expected: 2 * (tail + 1),
            actual: llr.len(),
        });
    }
    let app = match metric {
        BcjrMetric::LogMap => app_scaled(llr, trellis),
        BcjrMetric::MaxLog => app_max_log(llr, trellis),
    };
    let info_len = llr.len() / 2 - tail;
    let extrinsic = app.iter().zip(llr).map(|(a, l)| a - l).collect();
    let info_bits = (0..info_len).map(|k| (app[2 * k] > 0.0) as u8).collect();
    Ok(DecodeOutput {
        extrinsic,
        app,
        info_bits,
    })
}

/// Exact APP LLRs in the probability domain. Branch weights take only four
/// values per step, and forward/backward vectors are rescaled to sum one.
fn app_scaled(llr: &[f64], trellis: &Trellis) -> Vec<f64> {
    let steps = llr.len() / 2;
    let info_len = steps - trellis.code.tail_len();
    let ns = trellis.num_states;
    // Weights relative to the largest of the four, so nothing overflows.
    let gammas: Vec<[f64; 4]> = (0..steps)
        .map(|k| {
            let (ls, lp) = (llr[2 * k], llr[2 * k + 1]);
            let top = ls.max(0.0) + lp.max(0.0);
            [(-top).exp(), (lp - top).exp(), (ls - top).exp(), (ls + lp - top).exp()]
        })
        .collect();
    let gamma = |k: usize, u: u8, p: u8| gammas[k][(2 * u + p) as usize];

    let mut alpha = vec![0.0; (steps + 1) * ns];
    alpha[0] = 1.0;
    for k in 0..steps {
        let (cur, nxt) = alpha.split_at_mut((k + 1) * ns);
        let cur = &cur[k * ns..];
        let nxt = &mut nxt[..ns];
        for s in 0..ns {
            if cur[s] == 0.0 {
                continue;
            }
            for u in trellis.inputs(s, k, info_len) {
                nxt[trellis.next_state(s, u)] += cur[s] * gamma(k, u, trellis.parity_bit(s, u));
            }
        }
        rescale(nxt);
    }

    let mut beta = vec![0.0; (steps + 1) * ns];
    if trellis.code.terminate {
        beta[steps * ns] = 1.0;
    } else {
        beta[steps * ns..].iter_mut().for_each(|b| *b = 1.0);
    }
    for k in (0..steps).rev() {
        let (cur, nxt) = beta.split_at_mut((k + 1) * ns);
        let cur = &mut cur[k * ns..];
        for s in 0..ns {
            cur[s] = trellis
                .inputs(s, k, info_len)
                .map(|u| nxt[trellis.next_state(s, u)] * gamma(k, u, trellis.parity_bit(s, u)))
                .sum();
        }
        rescale(cur);
    }

    let mut app = vec![0.0; llr.len()];
    for k in 0..steps {
        // [systematic 0, systematic 1, parity 0, parity 1]
        let mut acc = [0.0; 4];
        for s in 0..ns {
            let a = alpha[k * ns + s];
            if a == 0.0 {
                continue;
            }
            for u in trellis.inputs(s, k, info_len) {
                let p = trellis.parity_bit(s, u);
                let v = a * gamma(k, u, p) * beta[(k + 1) * ns + trellis.next_state(s, u)];
                acc[u as usize] += v;
                acc[2 + p as usize] += v;
            }
        }
        app[2 * k] = ratio_llr(acc[1], acc[0]);
        app[2 * k + 1] = ratio_llr(acc[3], acc[2]);
    }
    app
}

fn app_max_log(llr: &[f64], trellis: &Trellis) -> Vec<f64> {
    let steps = llr.len() / 2;
    let info_len = steps - trellis.code.tail_len();
    let ns = trellis.num_states;
    let neg = f64::NEG_INFINITY;
    let branch = |k: usize, u: u8, p: u8| u as f64 * llr[2 * k] + p as f64 * llr[2 * k + 1];

    let mut alpha = vec![neg; (steps + 1) * ns];
    alpha[0] = 0.0;
    for k in 0..steps {
        let (cur, nxt) = alpha.split_at_mut((k + 1) * ns);
        let cur = &cur[k * ns..];
        let nxt = &mut nxt[..ns];
        for s in 0..ns {
            if cur[s] == neg {
                continue;
            }
            for u in trellis.inputs(s, k, info_len) {
                let t = trellis.next_state(s, u);
                nxt[t] = nxt[t].max(cur[s] + branch(k, u, trellis.parity_bit(s, u)));
            }
        }
        normalize(nxt);
    }

    let mut beta = vec![neg; (steps + 1) * ns];
    if trellis.code.terminate {
        beta[steps * ns] = 0.0;
    } else {
        beta[steps * ns..].iter_mut().for_each(|b| *b = 0.0);
    }
    for k in (0..steps).rev() {
        let (cur, nxt) = beta.split_at_mut((k + 1) * ns);
        let cur = &mut cur[k * ns..];
        for s in 0..ns {
            cur[s] = trellis
                .inputs(s, k, info_len)
                .map(|u| nxt[trellis.next_state(s, u)] + branch(k, u, trellis.parity_bit(s, u)))
                .fold(neg, f64::max);
        }
        normalize(cur);
    }

    let mut app = vec![0.0; llr.len()];
    for k in 0..steps {
        let mut acc = [neg; 4];
        for s in 0..ns {
            let a = alpha[k * ns + s];
            if a == neg {
                continue;
            }
            for u in trellis.inputs(s, k, info_len) {
                let p = trellis.parity_bit(s, u);
                let v = a + branch(k, u, p) + beta[(k + 1) * ns + trellis.next_state(s, u)];
                acc[u as usize] = acc[u as usize].max(v);
                acc[2 + p as usize] = acc[2 + p as usize].max(v);
            }
        }
        app[2 * k] = llr_from(acc[1], acc[0]);
        app[2 * k + 1] = llr_from(acc[3], acc[2]);
    }
    app
}

fn rescale(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    }
}

fn ratio_llr(one: f64, zero: f64) -> f64 {
    match (one > 0.0, zero > 0.0) {
        (false, false) => 0.0,
        (false, true) => f64::NEG_INFINITY,
        (true, false) => f64::INFINITY,
        (true, true) => one.ln() - zero.ln(),
    }
}

fn llr_from(one: f64, zero: f64) -> f64 {
    match (one == f64::NEG_INFINITY, zero == f64::NEG_INFINITY) {
        (true, true) => 0.0,
        (true, false) => f64::NEG_INFINITY,
        (false, true) => f64::INFINITY,
        (false, false) => one - zero,
    }
}

fn normalize(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        v.iter_mut().for_each(|x| *x -= max);
    }
}
