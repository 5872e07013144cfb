//! Detection side of the turbo receiver.
//!
//! Two detectors share one state layout:
//!
//! - EP-QA: every message between channel-transition nodes and symbol or
//!   channel variables is Gaussian. Local beliefs are expanded to second
//!   order around the previous posterior means (see [`wirtinger_expand`]),
//!   and symbol-to-factor messages come from dividing the projected symbol
//!   posterior by the incoming factor message.
//! - BP-GA: interference is Gaussianized as in EP-QA, but symbol messages
//!   stay discrete and the factor-to-channel messages are Gaussian mixtures
//!   collapsed by moment matching.
//!
//! Only data resource elements are processed. Edge arrays use the layout
//! `(j, m, n)` with `j` indexing the data resource elements; symbol arrays
//! use `(j, n)`. LLRs are `ln P(1) / P(0)` and laid out per user in mapping
//! order, `(n, j, q)`.

use serde::{Deserialize, Serialize};

use crate::link::RxObservation;
use crate::msg::{moments, normalize_log_weights, DiscreteMsg, GaussianMsg, LARGE_VARIANCE};
use crate::txchain::{Constellation, ResourceElement};
use crate::{Error, Result, C64};

/// Magnitude limit for every LLR leaving the detector.
pub const LLR_CLAMP: f64 = 50.0;

/// Which detection message rules to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    EpQa,
    BpGa,
}

/// Mean and variance of the Gaussianized observation seen by one edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceStats {
    pub z: C64,
    pub tau: f64,
}

/// Interference cancellation for one `(t, m, k)`: for each user `n`,
/// `z = y - sum_{n' != n} w x` and
/// `tau = noise + sum_{n' != n} (|w|^2 nu_x + nu_w |x|^2 + nu_w nu_x)`.
///
/// Full sums are formed once in user order and each user's own term is then
/// subtracted.
pub fn interference_stats(
    y: C64,
    noise_var: f64,
    w_to_f: &[GaussianMsg],
    x_to_f: &[GaussianMsg],
    out: &mut [InterferenceStats],
) {
    let term = |w: &GaussianMsg, x: &GaussianMsg| {
        (
            w.mean * x.mean,
            w.mean.norm_sqr() * x.var + w.var * x.mean.norm_sqr() + w.var * x.var,
        )
    };
    let (mut s, mut v) = (C64::new(0.0, 0.0), 0.0);
    for (w, x) in w_to_f.iter().zip(x_to_f) {
        let (a, b) = term(w, x);
        s += a;
        v += b;
    }
    for ((o, w), x) in out.iter_mut().zip(w_to_f).zip(x_to_f) {
        let (a, b) = term(w, x);
        *o = InterferenceStats {
            z: y - (s - a),
            tau: noise_var + (v - b),
        };
    }
}

fn safeguarded(mean: C64, var: f64) -> GaussianMsg {
    if var > 0.0 && var.is_finite() && mean.re.is_finite() && mean.im.is_finite() {
        GaussianMsg::new(mean, var)
    } else {
        GaussianMsg::new(C64::new(0.0, 0.0), LARGE_VARIANCE)
    }
}

/// Factor-to-channel message of EP-QA, expanded at the channel posterior
/// mean. A non-positive variance is replaced by [`LARGE_VARIANCE`] with zero
/// mean.
pub fn ep_msg_to_w(stats: InterferenceStats, x_to_f: &GaussianMsg, w_post_mean: C64) -> GaussianMsg {
    let z_hat = stats.z - x_to_f.mean * w_post_mean;
    let tau_hat = stats.tau + x_to_f.var * w_post_mean.norm_sqr();
    let denom = x_to_f.mean.norm_sqr() + x_to_f.var * (1.0 - z_hat.norm_sqr() / tau_hat);
    let var = tau_hat / denom;
    let mean = x_to_f.mean.conj() * stats.z * (var / tau_hat);
    safeguarded(mean, var)
}

/// Factor-to-symbol message of EP-QA.
///
/// Unlike the channel side, a negative variance is kept: over a finite
/// constellation the kernel `exp(-|x - mean|^2 / var)` is still a valid
/// weighting, and positivity is enforced on the symbol side instead (see
/// [`ep_msg_x_to_f`]). Only undefined results become uninformative.
pub fn ep_msg_to_x(stats: InterferenceStats, w_to_f: &GaussianMsg, x_post_mean: C64) -> GaussianMsg {
    let z_hat = stats.z - w_to_f.mean * x_post_mean;
    let tau_hat = stats.tau + w_to_f.var * x_post_mean.norm_sqr();
    let denom = w_to_f.mean.norm_sqr() + w_to_f.var * (1.0 - z_hat.norm_sqr() / tau_hat);
    let var = tau_hat / denom;
    let mean = w_to_f.mean.conj() * stats.z * (var / tau_hat);
    if var != 0.0 && var.is_finite() && mean.re.is_finite() && mean.im.is_finite() {
        GaussianMsg::new(mean, var)
    } else {
        GaussianMsg::uninformative()
    }
}

/// Product of the factor-to-symbol messages across antennas. The total
/// precision may be negative when some inputs are; zero total precision is
/// uninformative.
pub fn combine_to_mapper<'a, I>(msgs: I) -> GaussianMsg
where
    I: IntoIterator<Item = &'a GaussianMsg>,
{
    let (prec, nat) = msgs
        .into_iter()
        .fold((0.0, C64::new(0.0, 0.0)), |(p, n), m| (p + m.precision(), n + m.natural_mean()));
    if prec == 0.0 || !prec.is_finite() {
        GaussianMsg::uninformative()
    } else {
        GaussianMsg::new(nat / prec, 1.0 / prec)
    }
}

#[inline]
fn clamp_llr(l: f64) -> f64 {
    if l.is_nan() {
        0.0
    } else {
        l.clamp(-LLR_CLAMP, LLR_CLAMP)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log of the mapper message `prod_q exp(c_q l_q) / (1 + exp(l_q))` for every
/// constellation label.
pub fn symbol_log_prior(llr_a: &[f64], constellation: &Constellation, out: &mut [f64]) {
    let q_tot = constellation.bits_per_symbol();
    for (label, o) in out.iter_mut().enumerate() {
        *o = (0..q_tot)
            .map(|q| {
                let l = clamp_llr(llr_a[q]);
                constellation.bit(label, q) as f64 * l - softplus(l)
            })
            .sum();
    }
}

/// Mapper message as a probability vector.
pub fn mapper_to_symbol_prior(llr_a: &[f64], constellation: &Constellation) -> DiscreteMsg {
    let mut log_w = vec![0.0; constellation.size()];
    symbol_log_prior(llr_a, constellation, &mut log_w);
    DiscreteMsg::from_log_weights(&log_w)
}

/// Extrinsic LLRs of one symbol's bits.
///
/// `log_likelihood[a]` is the log of the symbol-to-mapper message at label
/// `a` (any additive constant), `log_prior[a]` the log mapper message built
/// from `llr_a`.
pub fn extrinsic_llrs(
    log_likelihood: &[f64],
    log_prior: &[f64],
    llr_a: &[f64],
    constellation: &Constellation,
    out: &mut [f64],
) {
    let q_tot = constellation.bits_per_symbol();
    let max = log_likelihood
        .iter()
        .zip(log_prior)
        .map(|(a, b)| a + b)
        .fold(f64::NEG_INFINITY, f64::max);
    for q in 0..q_tot {
        let (mut one, mut zero) = (0.0, 0.0);
        for (label, (l, p)) in log_likelihood.iter().zip(log_prior).enumerate() {
            let w = (l + p - max).exp();
            if constellation.bit(label, q) == 1 {
                one += w;
            } else {
                zero += w;
            }
        }
        let full = match (one > 0.0, zero > 0.0) {
            (true, true) => one.ln() - zero.ln(),
            (true, false) => f64::INFINITY,
            (false, true) => f64::NEG_INFINITY,
            (false, false) => 0.0,
        };
        out[q] = clamp_llr(full - clamp_llr(llr_a[q]));
    }
}

/// Symbol posterior `prior(a) N(a; likelihood)` over the constellation and
/// its projection onto a Gaussian by exact moment matching.
pub fn symbol_posterior_project(
    prior: &DiscreteMsg,
    likelihood: &GaussianMsg,
    points: &[C64],
) -> (DiscreteMsg, GaussianMsg) {
    let log_w: Vec<f64> = prior
        .probs
        .iter()
        .zip(points)
        .map(|(&p, &a)| p.ln() + gaussian_log_kernel(likelihood, a))
        .collect();
    let post = DiscreteMsg::from_log_weights(&log_w);
    let (mean, var) = post.moments(points);
    (post, GaussianMsg::new(mean, var))
}

#[inline]
fn gaussian_log_kernel(msg: &GaussianMsg, a: C64) -> f64 {
    if msg.var.is_infinite() {
        0.0
    } else {
        msg.log_kernel(a)
    }
}

/// Symbol-to-factor message by Gaussian division of the projected posterior
/// by the incoming factor message. When the quotient has no positive
/// variance the posterior itself is sent.
pub fn ep_msg_x_to_f(posterior: &GaussianMsg, f_to_x: &GaussianMsg) -> GaussianMsg {
    GaussianMsg::divide(posterior, f_to_x)
        .filter(|m| m.mean.re.is_finite() && m.mean.im.is_finite())
        .unwrap_or(*posterior)
}

/// Collapses the factor-to-channel mixture
/// `sum_a theta(a) CN(w; z / a, tau / |a|^2)` with
/// `theta(a) ~ |a|^-2 probs(a)` onto one Gaussian.
pub fn collapse_mixture(z: C64, tau: f64, points: &[C64], probs: &[f64]) -> GaussianMsg {
    let norm: f64 = probs
        .iter()
        .zip(points)
        .map(|(p, a)| p / a.norm_sqr())
        .sum();
    let mut inv_mean = C64::new(0.0, 0.0);
    let mut inv_sq = 0.0;
    for (&p, &a) in probs.iter().zip(points) {
        let theta = p / a.norm_sqr() / norm;
        inv_mean += theta / a;
        inv_sq += theta / a.norm_sqr();
    }
    let mean = z * inv_mean;
    let var = (tau + z.norm_sqr()) * inv_sq - mean.norm_sqr();
    safeguarded(mean, var.max(0.0))
}

/// BP-GA edge metric `|z - w a|^2 / (tau + nu_w |a|^2) + ln(tau + nu_w |a|^2)`.
#[inline]
pub fn bp_ga_delta(stats: InterferenceStats, w_to_f: &GaussianMsg, a: C64) -> f64 {
    let s = stats.tau + w_to_f.var * a.norm_sqr();
    (stats.z - w_to_f.mean * a).norm_sqr() / s + s.ln()
}

/// Second-order expansion of `H(z, tau, u) = |z|^2 / tau + ln tau + |u|^2 / nu`
/// around `(z0, tau0, u0)`:
///
/// ```text
/// H ~ value + 2 Re{grad_z dz + grad_u du} + grad_tau dtau
///       + curv_z |dz|^2 + curv_u |du|^2
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticExpansion {
    pub value: f64,
    /// `dH/dz = z0* / tau0`.
    pub grad_z: C64,
    /// `dH/dtau = 1 / tau0 - |z0|^2 / tau0^2`.
    pub grad_tau: f64,
    /// `dH/du = u0* / nu`.
    pub grad_u: C64,
    pub curv_z: f64,
    pub curv_u: f64,
}

impl QuadraticExpansion {
    pub fn eval(&self, dz: C64, dtau: f64, du: C64) -> f64 {
        self.value
            + 2.0 * (self.grad_z * dz + self.grad_u * du).re
            + self.grad_tau * dtau
            + self.curv_z * dz.norm_sqr()
            + self.curv_u * du.norm_sqr()
    }
}

/// The function being expanded.
pub fn wirtinger_h(z: C64, tau: f64, u: C64, nu: f64) -> f64 {
    z.norm_sqr() / tau + tau.ln() + u.norm_sqr() / nu
}

pub fn wirtinger_expand(z0: C64, tau0: f64, u0: C64, nu: f64) -> QuadraticExpansion {
    QuadraticExpansion {
        value: wirtinger_h(z0, tau0, u0, nu),
        grad_z: z0.conj() / tau0,
        grad_tau: 1.0 / tau0 - z0.norm_sqr() / (tau0 * tau0),
        grad_u: u0.conj() / nu,
        curv_z: 1.0 / tau0,
        curv_u: 1.0 / nu,
    }
}

/// Per-frame detector state.
#[derive(Debug, Clone)]
pub struct DetectorState {
    kind: DetectorKind,
    antennas: usize,
    users: usize,
    data_len: usize,
    constellation: Constellation,
    /// Symbol-to-factor messages `(j, m, n)`.
    x_to_f: Vec<GaussianMsg>,
    /// Factor-to-symbol messages `(j, m, n)` (EP-QA only).
    f_to_x: Vec<GaussianMsg>,
    /// Factor-to-channel messages `(j, m, n)`.
    f_to_w: Vec<GaussianMsg>,
    /// Projected symbol posteriors `(j, n)`.
    x_post: Vec<GaussianMsg>,
    /// Log symbol-to-mapper message `(j, n, a)`.
    mapper_in: Vec<f64>,
    /// Log mapper-to-symbol message `(j, n, a)`.
    log_prior: Vec<f64>,
    /// A priori LLRs `(n, j, q)`.
    llr_a: Vec<f64>,
    /// BP-GA edge metrics `(j, m, n, a)`.
    delta: Vec<f64>,
    /// BP-GA discrete symbol-to-factor messages `(j, m, n, a)`.
    x_to_f_probs: Vec<f64>,
    stats: Vec<InterferenceStats>,
}

impl DetectorState {
    /// Cold start: symbol messages `(0, 1)`, zero a priori LLRs.
    pub fn new(
        kind: DetectorKind,
        antennas: usize,
        users: usize,
        data_len: usize,
        constellation: Constellation,
    ) -> Self {
        let edges = data_len * antennas * users;
        let symbols = data_len * users;
        let a = constellation.size();
        let q = constellation.bits_per_symbol();
        let unit = GaussianMsg::new(C64::new(0.0, 0.0), 1.0);
        let (delta, probs) = match kind {
            DetectorKind::EpQa => (Vec::new(), Vec::new()),
            DetectorKind::BpGa => (vec![0.0; edges * a], vec![1.0 / a as f64; edges * a]),
        };
        let mut log_prior = vec![0.0; symbols * a];
        let mut prior0 = vec![0.0; a];
        symbol_log_prior(&vec![0.0; q], &constellation, &mut prior0);
        for chunk in log_prior.chunks_mut(a) {
            chunk.copy_from_slice(&prior0);
        }
        Self {
            kind,
            antennas,
            users,
            data_len,
            x_to_f: vec![unit; edges],
            f_to_x: vec![unit; if kind == DetectorKind::EpQa { edges } else { 0 }],
            f_to_w: vec![GaussianMsg::uninformative(); edges],
            x_post: vec![unit; symbols],
            mapper_in: vec![0.0; symbols * a],
            log_prior,
            llr_a: vec![0.0; users * data_len * q],
            delta,
            x_to_f_probs: probs,
            stats: vec![
                InterferenceStats {
                    z: C64::new(0.0, 0.0),
                    tau: 0.0
                };
                users
            ],
            constellation,
        }
    }

    pub fn kind(&self) -> DetectorKind {
        self.kind
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    #[inline]
    fn edge(&self, j: usize, m: usize, n: usize) -> usize {
        (j * self.antennas + m) * self.users + n
    }

    pub fn x_to_f(&self) -> &[GaussianMsg] {
        &self.x_to_f
    }

    /// Factor-to-channel messages `(j, m, n)` from the last detection pass.
    pub fn f_to_w(&self) -> &[GaussianMsg] {
        &self.f_to_w
    }

    /// Symbol posteriors `(j, n)`.
    pub fn x_post(&self) -> &[GaussianMsg] {
        &self.x_post
    }

    pub fn llr_a(&self) -> &[f64] {
        &self.llr_a
    }

    /// One detection pass. `w_to_f` holds the channel-to-factor messages in
    /// `(j, m, n)` layout and `w_post` the channel posteriors in `(m, n, k)`
    /// layout. Returns extrinsic LLRs `(n, j, q)`.
    pub fn detect(
        &mut self,
        rx: &RxObservation,
        data: &[ResourceElement],
        w_to_f: &[GaussianMsg],
        w_post: &[GaussianMsg],
    ) -> Result<Vec<f64>> {
        let (m_tot, n_tot, k_tot) = (self.antennas, self.users, rx.subcarriers);
        Error::check_len("data resource elements", self.data_len, data.len())?;
        Error::check_len("channel-to-factor messages", self.x_to_f.len(), w_to_f.len())?;
        Error::check_len("channel posteriors", m_tot * n_tot * k_tot, w_post.len())?;
        Error::check_len("antennas", m_tot, rx.antennas)?;
        let a_tot = self.constellation.size();
        let points = self.constellation.points().to_vec();
        let mut stats = std::mem::take(&mut self.stats);
        for (j, &(t, k)) in data.iter().enumerate() {
            for m in 0..m_tot {
                let e0 = self.edge(j, m, 0);
                interference_stats(
                    rx.at(t, m, k),
                    rx.noise_var,
                    &w_to_f[e0..e0 + n_tot],
                    &self.x_to_f[e0..e0 + n_tot],
                    &mut stats,
                );
                for n in 0..n_tot {
                    let e = e0 + n;
                    let w_hat = w_post[(m * n_tot + n) * k_tot + k].mean;
                    match self.kind {
                        DetectorKind::EpQa => {
                            self.f_to_x[e] =
                                ep_msg_to_x(stats[n], &w_to_f[e], self.x_post[j * n_tot + n].mean);
                            self.f_to_w[e] = ep_msg_to_w(stats[n], &self.x_to_f[e], w_hat);
                        }
                        DetectorKind::BpGa => {
                            let probs = &self.x_to_f_probs[e * a_tot..(e + 1) * a_tot];
                            self.f_to_w[e] = collapse_mixture(stats[n].z, stats[n].tau, &points, probs);
                            for (a, &pt) in points.iter().enumerate() {
                                self.delta[e * a_tot + a] = bp_ga_delta(stats[n], &w_to_f[e], pt);
                            }
                        }
                    }
                }
            }
            for n in 0..n_tot {
                let s = (j * n_tot + n) * a_tot;
                match self.kind {
                    DetectorKind::EpQa => {
                        let l = combine_to_mapper((0..m_tot).map(|m| &self.f_to_x[self.edge(j, m, n)]));
                        for (a, &pt) in points.iter().enumerate() {
                            self.mapper_in[s + a] = gaussian_log_kernel(&l, pt);
                        }
                    }
                    DetectorKind::BpGa => {
                        for a in 0..a_tot {
                            self.mapper_in[s + a] = -(0..m_tot)
                                .map(|m| self.delta[self.edge(j, m, n) * a_tot + a])
                                .sum::<f64>();
                        }
                    }
                }
            }
        }
        self.stats = stats;

        let q_tot = self.constellation.bits_per_symbol();
        let mut llr_e = vec![0.0; self.llr_a.len()];
        for n in 0..n_tot {
            for j in 0..self.data_len {
                let s = (j * n_tot + n) * a_tot;
                let b = (n * self.data_len + j) * q_tot;
                extrinsic_llrs(
                    &self.mapper_in[s..s + a_tot],
                    &self.log_prior[s..s + a_tot],
                    &self.llr_a[b..b + q_tot],
                    &self.constellation,
                    &mut llr_e[b..b + q_tot],
                );
            }
        }
        Ok(llr_e)
    }

    /// Takes the decoder's a priori LLRs `(n, j, q)`, recomputes the symbol
    /// posteriors and the symbol-to-factor messages.
    pub fn update_symbols(&mut self, llr_a: &[f64]) -> Result<()> {
        Error::check_len("a priori LLRs", self.llr_a.len(), llr_a.len())?;
        self.llr_a.iter_mut().zip(llr_a).for_each(|(d, &s)| *d = clamp_llr(s));
        let (m_tot, n_tot) = (self.antennas, self.users);
        let a_tot = self.constellation.size();
        let q_tot = self.constellation.bits_per_symbol();
        let points = self.constellation.points().to_vec();
        let mut log_w = vec![0.0; a_tot];
        let mut probs = vec![0.0; a_tot];
        for j in 0..self.data_len {
            for n in 0..n_tot {
                let s = (j * n_tot + n) * a_tot;
                let b = (n * self.data_len + j) * q_tot;
                symbol_log_prior(
                    &self.llr_a[b..b + q_tot],
                    &self.constellation,
                    &mut self.log_prior[s..s + a_tot],
                );
                for a in 0..a_tot {
                    log_w[a] = self.log_prior[s + a] + self.mapper_in[s + a];
                }
                normalize_log_weights(&log_w, &mut probs);
                let (mean, var) = moments(&probs, &points);
                let post = GaussianMsg::new(mean, var);
                self.x_post[j * n_tot + n] = post;
                for m in 0..m_tot {
                    let e = self.edge(j, m, n);
                    match self.kind {
                        DetectorKind::EpQa => {
                            self.x_to_f[e] = ep_msg_x_to_f(&post, &self.f_to_x[e]);
                        }
                        DetectorKind::BpGa => {
                            for a in 0..a_tot {
                                log_w[a] = self.log_prior[s + a] + self.mapper_in[s + a]
                                    + self.delta[e * a_tot + a];
                            }
                            let edge_probs = &mut self.x_to_f_probs[e * a_tot..(e + 1) * a_tot];
                            normalize_log_weights(&log_w, edge_probs);
                            let (mean, var) = moments(edge_probs, &points);
                            self.x_to_f[e] = GaussianMsg::new(mean, var);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn g(mean: C64, var: f64) -> GaussianMsg {
        GaussianMsg::new(mean, var)
    }

    fn rand_c(rng: &mut ChaCha8Rng) -> C64 {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_user_has_no_interference() {
        let mut out = [InterferenceStats { z: c(0.0, 0.0), tau: 0.0 }];
        interference_stats(c(0.3, 0.4), 0.2, &[g(c(1.0, 0.0), 0.5)], &[g(c(1.0, 0.0), 0.5)], &mut out);
        assert_eq!(out[0].z, c(0.3, 0.4));
        assert_eq!(out[0].tau, 0.2);
    }

    #[test]
    fn one_interferer_hand_value() {
        // User 0 is the target; user 1 interferes.
        let w = [g(c(0.0, 0.0), 0.0), g(c(1.0, 0.0), 0.2)];
        let x = [g(c(0.0, 0.0), 0.0), g(c(0.5, 0.0), 0.1)];
        let mut out = [InterferenceStats { z: c(0.0, 0.0), tau: 0.0 }; 2];
        interference_stats(c(1.0, 0.0), 0.1, &w, &x, &mut out);
        assert!((out[0].z - c(0.5, 0.0)).norm() < 1e-15);
        assert!((out[0].tau - 0.27).abs() < 1e-15);
    }

    #[test]
    fn sum_minus_self_matches_exclusion_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 6;
        let w: Vec<_> = (0..n).map(|_| g(rand_c(&mut rng), rng.random_range(0.01..1.0))).collect();
        let x: Vec<_> = (0..n).map(|_| g(rand_c(&mut rng), rng.random_range(0.01..1.0))).collect();
        let y = rand_c(&mut rng);
        let mut out = vec![InterferenceStats { z: c(0.0, 0.0), tau: 0.0 }; n];
        interference_stats(y, 0.3, &w, &x, &mut out);
        for i in 0..n {
            let mut z = y;
            let mut tau = 0.3;
            for j in (0..n).filter(|&j| j != i) {
                z -= w[j].mean * x[j].mean;
                tau += w[j].mean.norm_sqr() * x[j].var + w[j].var * x[j].mean.norm_sqr() + w[j].var * x[j].var;
            }
            assert!((out[i].z - z).norm() < 1e-12);
            assert!((out[i].tau - tau).abs() < 1e-12);
            // Exclusion consistency: z_n - w_n x_n is the same for every n.
            let full = out[i].z - w[i].mean * x[i].mean;
            let ref0 = out[0].z - w[0].mean * x[0].mean;
            assert!((full - ref0).norm() < 1e-10);
        }
    }

    #[test]
    fn known_symbol_reduces_to_pilot_form() {
        let x = c(0.6, -0.8);
        let stats = InterferenceStats { z: c(0.2, 0.9), tau: 0.4 };
        let m = ep_msg_to_w(stats, &g(x, 0.0), c(0.7, 0.1));
        assert!((m.var - 0.4 / x.norm_sqr()).abs() < 1e-14);
        assert!((m.mean - stats.z / x).norm() < 1e-14);
    }

    #[test]
    fn perfect_csi_reduces_to_matched_filter() {
        let w = c(1.2, 0.5);
        let stats = InterferenceStats { z: c(-0.3, 0.9), tau: 0.25 };
        let m = ep_msg_to_x(stats, &g(w, 0.0), c(0.4, 0.4));
        assert!((m.var - 0.25 / w.norm_sqr()).abs() < 1e-14);
        assert!((m.mean - stats.z / w).norm() < 1e-14);
    }

    #[test]
    fn uninformative_partner() {
        let stats = InterferenceStats { z: c(0.0, 0.0), tau: 0.7 };
        let m = ep_msg_to_w(stats, &g(c(0.0, 0.0), 1.0), c(0.0, 0.0));
        assert!((m.var - 0.7).abs() < 1e-15);
        assert_eq!(m.mean, c(0.0, 0.0));
        let m = ep_msg_to_x(stats, &g(c(0.0, 0.0), 1.0), c(0.0, 0.0));
        assert!((m.var - 0.7).abs() < 1e-15);
    }

    #[test]
    fn negative_variance_safeguard() {
        // |z_hat|^2 / tau_hat = 4 makes the denominator negative.
        let stats = InterferenceStats { z: c(2.0, 0.0), tau: 1.0 };
        let m = ep_msg_to_w(stats, &g(c(0.0, 0.0), 1.0), c(0.0, 0.0));
        assert_eq!(m.var, LARGE_VARIANCE);
        // The symbol side keeps the raw value: tau_hat / (0 + 1 (1 - 4)).
        let m = ep_msg_to_x(stats, &g(c(0.0, 0.0), 1.0), c(0.0, 0.0));
        assert_eq!(m.var, -1.0 / 3.0);
        let flat = InterferenceStats { z: c(1.0, 0.0), tau: 1.0 };
        assert!(!ep_msg_to_x(flat, &g(c(0.0, 0.0), 1.0), c(0.0, 0.0)).is_informative());
    }

    #[test]
    fn negative_symbol_message_ranks_like_matched_filter() {
        // Tiny noise, uncertain channel, cold expansion point.
        let w = c(0.6, -0.8);
        let stats = InterferenceStats { z: w * c(-1.0, 1.0) * FRAC_1_SQRT_2, tau: 1e-8 };
        let m = ep_msg_to_x(stats, &g(w, 0.05), c(0.0, 0.0));
        assert!(m.var < 0.0);
        let con = Constellation::new(2).unwrap();
        let best = (0..4)
            .max_by(|&a, &b| m.log_kernel(con.points()[a]).total_cmp(&m.log_kernel(con.points()[b])))
            .unwrap();
        assert!((con.points()[best] - c(-1.0, 1.0) * FRAC_1_SQRT_2).norm() < 1e-12);
        // Division by a negative-variance message adds precision.
        let post = g(c(0.1, 0.0), 0.5);
        let out = ep_msg_x_to_f(&post, &g(c(0.0, 0.0), -2.0));
        assert!((out.var - 0.4).abs() < 1e-15);
    }

    #[test]
    fn swap_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let stats = InterferenceStats { z: rand_c(&mut rng), tau: rng.random_range(0.5..2.0) };
            let partner = g(rand_c(&mut rng), rng.random_range(0.01..1.0));
            let point = rand_c(&mut rng);
            assert_eq!(ep_msg_to_w(stats, &partner, point), ep_msg_to_x(stats, &partner, point));
        }
    }

    #[test]
    fn mapper_combination() {
        let p = combine_to_mapper(&[g(c(0.0, 0.0), 1.0), g(c(2.0, 0.0), 1.0)]);
        assert!((p.mean - c(1.0, 0.0)).norm() < 1e-15 && (p.var - 0.5).abs() < 1e-15);
        let one = g(c(0.3, 0.1), 0.2);
        let p = combine_to_mapper(&[one]);
        assert!((p.mean - one.mean).norm() < 1e-15 && (p.var - one.var).abs() < 1e-15);
    }

    #[test]
    fn mapper_product_matches_log_density_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let msgs: Vec<_> = (0..8).map(|_| g(rand_c(&mut rng), rng.random_range(0.1..2.0))).collect();
        let p = combine_to_mapper(&msgs);
        // The sum of quadratic log kernels is itself a quadratic with the
        // product's curvature and stationary point.
        let curv: f64 = msgs.iter().map(|m| 1.0 / m.var).sum();
        let lin: C64 = msgs.iter().map(|m| m.mean / m.var).sum();
        assert!((p.var - 1.0 / curv).abs() < 1e-12);
        assert!((p.mean - lin / curv).norm() < 1e-12);
    }

    #[test]
    fn symmetric_likelihood_gives_zero_llrs() {
        let con = Constellation::new(2).unwrap();
        let like = g(c(0.0, 0.0), 0.5);
        let log_like: Vec<f64> = con.points().iter().map(|&a| like.log_kernel(a)).collect();
        let mut prior = vec![0.0; 4];
        symbol_log_prior(&[0.0, 0.0], &con, &mut prior);
        let mut out = [1.0; 2];
        extrinsic_llrs(&log_like, &prior, &[0.0, 0.0], &con, &mut out);
        assert!(out.iter().all(|l| l.abs() < 1e-14));
    }

    #[test]
    fn hard_limit_saturates_with_correct_sign() {
        let con = Constellation::new(4).unwrap();
        let label = 0b1001;
        let like = g(con.points()[label], 1e-6);
        let log_like: Vec<f64> = con.points().iter().map(|&a| like.log_kernel(a)).collect();
        let mut prior = vec![0.0; 16];
        symbol_log_prior(&[0.0; 4], &con, &mut prior);
        let mut out = [0.0; 4];
        extrinsic_llrs(&log_like, &prior, &[0.0; 4], &con, &mut out);
        for q in 0..4 {
            let sign = if con.bit(label, q) == 1 { 1.0 } else { -1.0 };
            assert_eq!(out[q], sign * LLR_CLAMP);
        }
    }

    #[test]
    fn extrinsic_matches_brute_force_and_adds_back_to_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for q in [2, 4, 6] {
            let con = Constellation::new(q).unwrap();
            for _ in 0..20 {
                let like = g(rand_c(&mut rng), rng.random_range(0.05..1.0));
                let llr_a: Vec<f64> = (0..q).map(|_| rng.random_range(-3.0..3.0)).collect();
                let log_like: Vec<f64> = con.points().iter().map(|&a| like.log_kernel(a)).collect();
                let mut prior = vec![0.0; con.size()];
                symbol_log_prior(&llr_a, &con, &mut prior);
                let mut out = vec![0.0; q];
                extrinsic_llrs(&log_like, &prior, &llr_a, &con, &mut out);
                for bit in 0..q {
                    let (mut one, mut zero) = (0.0f64, 0.0f64);
                    for (label, &a) in con.points().iter().enumerate() {
                        let mut p = (-(a - like.mean).norm_sqr() / like.var).exp();
                        for qq in 0..q {
                            let l = llr_a[qq];
                            p *= if con.bit(label, qq) == 1 { l.exp() } else { 1.0 } / (1.0 + l.exp());
                        }
                        if con.bit(label, bit) == 1 {
                            one += p;
                        } else {
                            zero += p;
                        }
                    }
                    let full = (one / zero).ln();
                    assert!((out[bit] - (full - llr_a[bit])).abs() < 1e-9);
                    assert!((out[bit] + llr_a[bit] - full).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn mapper_prior_cases() {
        let con = Constellation::new(4).unwrap();
        let u = mapper_to_symbol_prior(&[0.0; 4], &con);
        assert!(u.probs.iter().all(|&p| (p - 1.0 / 16.0).abs() < 1e-15));
        let sure = mapper_to_symbol_prior(&[1e9; 4], &con);
        assert!((sure.probs[15] - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
        let s: f64 = mapper_to_symbol_prior(&l, &con).probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_limits() {
        let con = Constellation::new(4).unwrap();
        let (_, p) = symbol_posterior_project(&DiscreteMsg::uniform(16), &g(c(0.3, 0.0), 1e300), con.points());
        assert!(p.mean.norm() < 1e-12 && (p.var - 1.0).abs() < 1e-12);
        let mut probs = vec![0.0; 16];
        probs[5] = 1.0;
        let (_, p) = symbol_posterior_project(&DiscreteMsg { probs }, &g(c(0.0, 0.0), 0.3), con.points());
        assert!((p.mean - con.points()[5]).norm() < 1e-15 && p.var.abs() < 1e-15);
    }

    #[test]
    fn division_cases() {
        let post = g(c(0.2, -0.1), 0.3);
        let m = ep_msg_x_to_f(&post, &g(post.mean, 0.6));
        assert!((m.var - 0.6).abs() < 1e-15 && (m.mean - post.mean).norm() < 1e-15);
        assert_eq!(ep_msg_x_to_f(&post, &g(c(1.0, 1.0), 0.3)), post);
        let f = g(c(-0.5, 0.4), 0.9);
        let m = ep_msg_x_to_f(&post, &f);
        let back = GaussianMsg::product([&m, &f]);
        assert!((back.var - post.var).abs() < 1e-10 && (back.mean - post.mean).norm() < 1e-10);
    }

    #[test]
    fn degenerate_mixture() {
        let m = collapse_mixture(c(0.4, 0.2), 0.3, &[c(0.5, 0.5)], &[1.0]);
        let a = c(0.5, 0.5);
        assert!((m.mean - c(0.4, 0.2) / a).norm() < 1e-14);
        assert!((m.var - 0.3 / a.norm_sqr()).abs() < 1e-14);
    }

    #[test]
    fn uniform_qpsk_mixture_hand_value() {
        let con = Constellation::new(2).unwrap();
        let z = c(0.3, -0.6);
        let m = collapse_mixture(z, 0.2, con.points(), &[0.25; 4]);
        let inv_mean: C64 = con.points().iter().map(|a| 0.25 / a).sum();
        assert!((m.mean - z * inv_mean).norm() < 1e-15);
        // E[1/x] vanishes for symmetric QPSK.
        assert!(m.mean.norm() < 1e-15);
        assert!((m.var - (0.2 + z.norm_sqr())).abs() < 1e-14);
    }

    #[test]
    fn expansion_point_value() {
        let e = wirtinger_expand(c(0.3, 0.4), 2.0, c(-1.0, 0.5), 0.8);
        let h = 0.25 / 2.0 + 2f64.ln() + 1.25 / 0.8;
        assert!((e.eval(c(0.0, 0.0), 0.0, c(0.0, 0.0)) - h).abs() < 1e-12);
        assert_eq!(e.curv_z, 0.5);
    }

    fn detector_instance(kind: DetectorKind, seed: u64) -> (DetectorState, RxObservation, Vec<ResourceElement>, Vec<GaussianMsg>, Vec<GaussianMsg>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m_tot, n_tot, k_tot) = (6, 2, 3);
        let data: Vec<_> = (0..k_tot).map(|k| (0, k)).collect();
        let con = Constellation::new(2).unwrap();
        let w: Vec<C64> = (0..m_tot * n_tot * k_tot).map(|_| rand_c(&mut rng) * 2.0).collect();
        let labels: Vec<usize> = (0..n_tot * k_tot).map(|_| rng.random_range(0..4)).collect();
        let mut y = vec![c(0.0, 0.0); m_tot * k_tot];
        for m in 0..m_tot {
            for k in 0..k_tot {
                for n in 0..n_tot {
                    y[m * k_tot + k] += w[(m * n_tot + n) * k_tot + k] * con.points()[labels[k * n_tot + n]];
                }
                y[m * k_tot + k] += rand_c(&mut rng) * 0.01;
            }
        }
        let rx = RxObservation { symbols: 1, antennas: m_tot, subcarriers: k_tot, y, noise_var: 1e-3 };
        let w_post: Vec<_> = w.iter().map(|&v| g(v, 1e-4)).collect();
        let w_to_f: Vec<_> = (0..k_tot)
            .flat_map(|k| (0..m_tot).flat_map(move |m| (0..n_tot).map(move |n| (m, n, k))))
            .map(|(m, n, k)| w_post[(m * n_tot + n) * k_tot + k])
            .collect();
        (DetectorState::new(kind, m_tot, n_tot, k_tot, con), rx, data, w_to_f, w_post)
    }

    #[test]
    fn ep_and_bp_ga_channel_messages_agree_at_high_snr() {
        let (mut ep, rx, data, wf, wp) = detector_instance(DetectorKind::EpQa, 6);
        let (mut bp, _, _, _, _) = detector_instance(DetectorKind::BpGa, 6);
        for _ in 0..4 {
            let le = ep.detect(&rx, &data, &wf, &wp).unwrap();
            ep.update_symbols(&le.iter().map(|l| l * 0.0).collect::<Vec<_>>()).unwrap();
            let lb = bp.detect(&rx, &data, &wf, &wp).unwrap();
            bp.update_symbols(&lb.iter().map(|l| l * 0.0).collect::<Vec<_>>()).unwrap();
        }
        let mut worst: f64 = 0.0;
        for (a, b) in ep.f_to_w().iter().zip(bp.f_to_w()) {
            worst = worst.max((a.mean - b.mean).norm() / b.mean.norm().max(1e-3));
        }
        assert!(worst < 0.1, "{worst}");
    }

    #[test]
    fn perfect_csi_single_user_posterior_is_exact() {
        let con = Constellation::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m_tot = 3;
        let w: Vec<C64> = (0..m_tot).map(|_| rand_c(&mut rng)).collect();
        let x = con.points()[11];
        let noise = 0.2;
        let y: Vec<C64> = w.iter().map(|wm| wm * x + rand_c(&mut rng) * 0.3).collect();
        let rx = RxObservation { symbols: 1, antennas: m_tot, subcarriers: 1, y: y.clone(), noise_var: noise };
        let w_msgs: Vec<_> = w.iter().map(|&v| g(v, 0.0)).collect();
        let mut det = DetectorState::new(DetectorKind::EpQa, m_tot, 1, 1, con.clone());
        let llr_e = det.detect(&rx, &[(0, 0)], &w_msgs, &w_msgs).unwrap();
        det.update_symbols(&vec![0.0; 4]).unwrap();
        let _ = llr_e;
        let mut logp: Vec<f64> = con
            .points()
            .iter()
            .map(|&a| -y.iter().zip(&w).map(|(yy, ww)| (yy - ww * a).norm_sqr()).sum::<f64>() / noise)
            .collect();
        let mx = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        logp.iter_mut().for_each(|l| *l = (*l - mx).exp());
        let s: f64 = logp.iter().sum();
        let mean: C64 = logp.iter().zip(con.points()).map(|(p, a)| a * (p / s)).sum();
        let second: f64 = logp.iter().zip(con.points()).map(|(p, a)| p / s * a.norm_sqr()).sum();
        let post = det.x_post()[0];
        assert!((post.mean - mean).norm() < 1e-10);
        assert!((post.var - (second - mean.norm_sqr())).abs() < 1e-10);
    }

    #[test]
    fn init_values() {
        let det = DetectorState::new(DetectorKind::EpQa, 2, 3, 5, Constellation::new(2).unwrap());
        assert!(det.x_to_f().iter().all(|m| m.mean == c(0.0, 0.0) && m.var == 1.0));
        assert!(det.llr_a().iter().all(|&l| l == 0.0));
    }

    #[test]
    fn adversarial_inputs_keep_variances_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let scale = 10f64.powf(rng.random_range(-6.0..6.0));
            let stats = InterferenceStats { z: rand_c(&mut rng) * scale, tau: rng.random_range(1e-9..1.0) };
            let partner = g(rand_c(&mut rng) * scale, rng.random_range(0.0..10.0));
            let m = ep_msg_to_w(stats, &partner, rand_c(&mut rng) * scale);
            assert!(m.var > 0.0 && m.var.is_finite());
        }
    }

    proptest! {
        #[test]
        fn mapper_prior_normalized(l in proptest::collection::vec(-60.0f64..60.0, 6)) {
            let con = Constellation::new(6).unwrap();
            let s: f64 = mapper_to_symbol_prior(&l, &con).probs.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn posterior_normalized_and_nonnegative_var(re in -2.0f64..2.0, im in -2.0f64..2.0, v in 1e-4f64..10.0) {
            let con = Constellation::new(4).unwrap();
            let (post, proj) = symbol_posterior_project(&DiscreteMsg::uniform(16), &g(c(re, im), v), con.points());
            prop_assert!((post.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(proj.var >= 0.0);
        }

        #[test]
        fn mixture_collapse_variance_nonnegative(re in -3.0f64..3.0, im in -3.0f64..3.0, tau in 1e-3f64..5.0, seed in any::<u64>()) {
            let con = Constellation::new(4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= s);
            let m = collapse_mixture(c(re, im), tau, con.points(), &p);
            prop_assert!(m.var > 0.0);
        }
    }
}
