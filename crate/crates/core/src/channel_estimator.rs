//! Channel estimation by Gaussian message passing over the CIR taps.
//!
//! Each link `(m, n)` is estimated independently from the per-subcarrier
//! messages on its CFR, using `w = Phi h`. Tap priors are `CN(0, p_nl)` with
//! `p_nl` either the true power (oracle mode) or learned across antennas by
//! variational EM.
//!
//! Infinite message variance encodes "no information"; IEEE arithmetic then
//! makes the corresponding precision exactly zero.

use serde::{Deserialize, Serialize};

use crate::channel_model::{DftWeights, PowerDelayProfile, TapIndexing};
use crate::link::RxObservation;
use crate::msg::{GaussianMsg, LARGE_VARIANCE};
use crate::txchain::{PilotPattern, ResourceElement};
use crate::{Error, Result, C64};

/// Form of the correction terms in the tap and CFR updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GmpCorrection {
    /// `xi = Phi^H (z / tau) + h sum(1 / tau)` and
    /// `eps = z sum(nu_h) / tau`. Its fixed point is the LMMSE estimate.
    #[default]
    FirstOrder,
    /// The full update, including the `-(nu_h / tau_bar) xi` memory term and
    /// the second-order terms of `eps`.
    Table,
}

/// Where the tap prior powers come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// `p_nl = (1/M) sum_m (|h|^2 + nu_h)` from the previous iterate.
    #[default]
    Learned,
    /// The true power-delay profile.
    Oracle,
}

/// Factor-to-channel message of a known pilot: `CN(y / x, noise / |x|^2)`.
pub fn pilot_message(y: C64, x: C64, noise_var: f64) -> Result<GaussianMsg> {
    let e = x.norm_sqr();
    if !(e > 0.0) {
        return Err(Error::config("pilot symbol must be nonzero"));
    }
    Ok(GaussianMsg::new(y / x, noise_var / e))
}

/// Pilot messages in `(m, n, k)` layout; entries without a pilot are
/// uninformative.
pub fn pilot_messages(rx: &RxObservation, users: usize, pattern: &PilotPattern) -> Result<Vec<GaussianMsg>> {
    let (m_tot, k_tot) = (rx.antennas, rx.subcarriers);
    Error::check_len("pilot sets", users, pattern.sets.len())?;
    let mut out = vec![GaussianMsg::uninformative(); m_tot * users * k_tot];
    for m in 0..m_tot {
        for n in 0..users {
            for (&(t, k), &x) in pattern.sets[n].iter().zip(&pattern.values[n]) {
                out[(m * users + n) * k_tot + k] = pilot_message(rx.at(t, m, k), x, rx.noise_var)?;
            }
        }
    }
    Ok(out)
}

/// Multiplies the data-position factor-to-channel messages `(j, m, n)` into
/// the pilot messages `(m, n, k)`, giving the channel-to-GMP messages.
pub fn combine_incoming(
    pilot: &[GaussianMsg],
    data_msgs: &[GaussianMsg],
    data: &[ResourceElement],
    antennas: usize,
    users: usize,
    subcarriers: usize,
) -> Result<Vec<GaussianMsg>> {
    Error::check_len("pilot messages", antennas * users * subcarriers, pilot.len())?;
    Error::check_len("data messages", data.len() * antennas * users, data_msgs.len())?;
    let mut prec: Vec<f64> = pilot.iter().map(|g| g.precision()).collect();
    let mut nat: Vec<C64> = pilot.iter().map(|g| g.natural_mean()).collect();
    for (j, &(_, k)) in data.iter().enumerate() {
        for m in 0..antennas {
            for n in 0..users {
                let g = &data_msgs[(j * antennas + m) * users + n];
                let i = (m * users + n) * subcarriers + k;
                prec[i] += g.precision();
                nat[i] += g.natural_mean();
            }
        }
    }
    Ok(prec
        .into_iter()
        .zip(nat)
        .map(|(p, v)| GaussianMsg::from_natural(p, v))
        .collect())
}

/// Learned tap powers and the Gamma belief on the tap precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPdp {
    /// `(n, l)` layout.
    pub power: Vec<f64>,
    /// Shape of the Gamma belief (the antenna count).
    pub gamma_shape: f64,
    /// Rates `sum_m (|h|^2 + nu_h)`, `(n, l)` layout.
    pub gamma_rate: Vec<f64>,
}

/// Per-frame estimator state. Tap arrays are `(m, n, l)`, subcarrier arrays
/// `(m, n, k)`.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    antennas: usize,
    users: usize,
    taps: usize,
    subcarriers: usize,
    dft: DftWeights,
    correction: GmpCorrection,
    pub h_mean: Vec<C64>,
    pub h_var: Vec<f64>,
    pub xi: Vec<C64>,
    pub eps: Vec<C64>,
    pub z_g: Vec<C64>,
    pub tau_g: Vec<f64>,
    /// Messages from the DFT constraint to the CFR.
    pub g_to_w: Vec<GaussianMsg>,
    /// CFR posteriors.
    pub w_post: Vec<GaussianMsg>,
    pub tau_bar: Vec<f64>,
    pub nu_bar: Vec<f64>,
}

impl EstimatorState {
    /// `h = 0`, `nu_h = 1/L`, `xi = 0`, `eps = 0`; the CFR posterior starts at
    /// the prior `CN(0, 1)`.
    pub fn new(
        antennas: usize,
        users: usize,
        taps: usize,
        subcarriers: usize,
        indexing: TapIndexing,
        correction: GmpCorrection,
    ) -> Result<Self> {
        if taps == 0 || taps > subcarriers {
            return Err(Error::config("need 1 <= taps <= subcarriers"));
        }
        let nt = antennas * users * taps;
        let nk = antennas * users * subcarriers;
        let links = antennas * users;
        let nu0 = 1.0 / taps as f64;
        Ok(Self {
            antennas,
            users,
            taps,
            subcarriers,
            dft: DftWeights::new(subcarriers, taps, indexing),
            correction,
            h_mean: vec![C64::new(0.0, 0.0); nt],
            h_var: vec![nu0; nt],
            xi: vec![C64::new(0.0, 0.0); nt],
            eps: vec![C64::new(0.0, 0.0); nk],
            z_g: vec![C64::new(0.0, 0.0); nk],
            tau_g: vec![0.0; nk],
            g_to_w: vec![GaussianMsg::new(C64::new(0.0, 0.0), 1.0); nk],
            w_post: vec![GaussianMsg::new(C64::new(0.0, 0.0), 1.0); nk],
            tau_bar: vec![0.0; links],
            nu_bar: vec![nu0; links],
        })
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    /// Tap prior powers `(n, l)` for the next update.
    fn prior_power(&self, mode: PriorMode, truth: Option<&PowerDelayProfile>) -> Result<Vec<f64>> {
        match mode {
            PriorMode::Learned => Ok(pdp_update(self).power),
            PriorMode::Oracle => {
                let pdp = truth.ok_or_else(|| Error::config("oracle prior needs the true PDP"))?;
                Error::check_len("PDP taps", self.taps, pdp.taps())?;
                Ok((0..self.users).flat_map(|_| pdp.powers.iter().copied()).collect())
            }
        }
    }

    /// One GMP iteration for every link, given the channel-to-GMP messages
    /// `w_to_g` in `(m, n, k)` layout.
    pub fn gmp_pass(
        &mut self,
        w_to_g: &[GaussianMsg],
        mode: PriorMode,
        truth: Option<&PowerDelayProfile>,
    ) -> Result<()> {
        let (l_tot, k_tot) = (self.taps, self.subcarriers);
        Error::check_len("channel-to-GMP messages", self.antennas * self.users * k_tot, w_to_g.len())?;
        let power = self.prior_power(mode, truth)?;
        let mut inv_tau = vec![0.0; k_tot];
        let mut zt = vec![C64::new(0.0, 0.0); k_tot];
        let mut back = vec![C64::new(0.0, 0.0); l_tot];
        let mut w_h = vec![C64::new(0.0, 0.0); k_tot];
        for m in 0..self.antennas {
            for n in 0..self.users {
                let link = m * self.users + n;
                let ts = link * l_tot..(link + 1) * l_tot;
                let ks = link * k_tot..(link + 1) * k_tot;
                let h_prev: Vec<C64> = self.h_mean[ts.clone()].to_vec();
                let v_prev: Vec<f64> = self.h_var[ts.clone()].to_vec();
                let sum_v_prev: f64 = v_prev.iter().sum();

                self.dft.forward(&h_prev, &mut w_h);
                for (k, i) in ks.clone().enumerate() {
                    let msg = &w_to_g[i];
                    let mean = if msg.is_informative() { msg.mean } else { C64::new(0.0, 0.0) };
                    self.z_g[i] = mean - w_h[k] + self.eps[i];
                    self.tau_g[i] = msg.var + sum_v_prev;
                    inv_tau[k] = 1.0 / self.tau_g[i];
                    zt[k] = self.z_g[i] * inv_tau[k];
                }
                let tau_bar = self.tau_g[ks.clone()].iter().sum::<f64>() / k_tot as f64;
                self.tau_bar[link] = tau_bar;
                let sum_inv_tau: f64 = inv_tau.iter().sum();

                self.dft.adjoint_weighted(&zt, &vec![1.0; k_tot], &mut back);
                for l in 0..l_tot {
                    let i = ts.start + l;
                    let mut xi = back[l] + h_prev[l] * sum_inv_tau;
                    if self.correction == GmpCorrection::Table {
                        xi -= self.xi[i] * (v_prev[l] / tau_bar);
                    }
                    self.xi[i] = xi;
                    self.h_var[i] = 1.0 / (1.0 / power[n * l_tot + l] + sum_inv_tau);
                    self.h_mean[i] = self.h_var[i] * xi;
                }
                let v_new = &self.h_var[ts.clone()];
                let sum_v: f64 = v_new.iter().sum();
                let nu_bar = sum_v / l_tot as f64;
                self.nu_bar[link] = nu_bar;

                let weighted: Vec<C64> = h_prev.iter().zip(v_new).map(|(h, v)| h * v).collect();
                let mut phi_vh = vec![C64::new(0.0, 0.0); k_tot];
                if self.correction == GmpCorrection::Table {
                    self.dft.forward(&weighted, &mut phi_vh);
                }
                self.dft.forward(&self.h_mean[ts.clone()], &mut w_h);
                for (k, i) in ks.clone().enumerate() {
                    let eps = match self.correction {
                        GmpCorrection::FirstOrder => self.z_g[i] * (sum_v * inv_tau[k]),
                        GmpCorrection::Table => {
                            (self.z_g[i] * sum_v + phi_vh[k] - self.eps[i] * nu_bar) * inv_tau[k]
                        }
                    };
                    self.eps[i] = eps;
                    self.g_to_w[i] = GaussianMsg::new(w_h[k] - eps, sum_v);
                    self.w_post[i] = GaussianMsg::product([&self.g_to_w[i], &w_to_g[i]]);
                }
            }
        }
        Ok(())
    }

    /// Channel-to-factor messages for the data edges `(j, m, n)`: the CFR
    /// posterior divided by each edge's own factor message. Failed divisions
    /// become `CN(0, LARGE_VARIANCE)`.
    pub fn outgoing(&self, data: &[ResourceElement], f_to_w: Option<&[GaussianMsg]>) -> Result<Vec<GaussianMsg>> {
        let (m_tot, n_tot, k_tot) = (self.antennas, self.users, self.subcarriers);
        let edges = data.len() * m_tot * n_tot;
        if let Some(f) = f_to_w {
            Error::check_len("factor-to-channel messages", edges, f.len())?;
        }
        let mut out = Vec::with_capacity(edges);
        for &(_, k) in data {
            for m in 0..m_tot {
                for n in 0..n_tot {
                    let post = &self.w_post[(m * n_tot + n) * k_tot + k];
                    let msg = match f_to_w {
                        None => *post,
                        Some(f) => {
                            let inc = &f[out.len()];
                            if inc.is_informative() {
                                GaussianMsg::divide(post, inc)
                                    .unwrap_or(GaussianMsg::new(C64::new(0.0, 0.0), LARGE_VARIANCE))
                            } else {
                                *post
                            }
                        }
                    };
                    out.push(msg);
                }
            }
        }
        Ok(out)
    }
}

/// Variational update of the tap powers from the current tap beliefs.
pub fn pdp_update(state: &EstimatorState) -> LearnedPdp {
    let (m_tot, n_tot, l_tot) = (state.antennas, state.users, state.taps);
    let mut rate = vec![0.0; n_tot * l_tot];
    for m in 0..m_tot {
        for n in 0..n_tot {
            for l in 0..l_tot {
                let i = (m * n_tot + n) * l_tot + l;
                rate[n * l_tot + l] += state.h_mean[i].norm_sqr() + state.h_var[i];
            }
        }
    }
    LearnedPdp {
        power: rate.iter().map(|r| r / m_tot as f64).collect(),
        gamma_shape: m_tot as f64,
        gamma_rate: rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_model::complex_gaussian;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn pilot_message_values() {
        let m = pilot_message(c(2.0, 0.0), c(1.0, 1.0), 0.5).unwrap();
        assert!((m.mean - c(1.0, -1.0)).norm() < 1e-15);
        assert!((m.var - 0.25).abs() < 1e-15);
        let u = pilot_message(c(0.3, 0.1), C64::from_polar(1.0, 0.7), 0.2).unwrap();
        assert!((u.var - 0.2).abs() < 1e-15);
        let w = c(0.4, -0.9);
        let x = c(0.6, 0.8);
        assert!((pilot_message(w * x, x, 0.1).unwrap().mean - w).norm() < 1e-15);
        assert!(pilot_message(c(1.0, 0.0), c(0.0, 0.0), 0.1).unwrap_err().is_config());
    }

    #[test]
    fn init_values() {
        let s = EstimatorState::new(2, 2, 16, 64, TapIndexing::OneBased, GmpCorrection::FirstOrder).unwrap();
        assert!(s.h_var.iter().all(|&v| v == 0.0625));
        assert!(s.h_mean.iter().all(|h| h.norm() == 0.0));
        assert!(s.eps.iter().all(|e| e.norm() == 0.0));
        assert!(s.xi.iter().all(|e| e.norm() == 0.0));
    }

    #[test]
    fn scalar_case_is_mmse_combine() {
        let mut s = EstimatorState::new(1, 1, 1, 1, TapIndexing::OneBased, GmpCorrection::FirstOrder).unwrap();
        let (y, x, noise) = (c(0.7, -0.2), c(0.6, 0.8), 0.3);
        let obs = pilot_message(y, x, noise).unwrap();
        let pdp = PowerDelayProfile::new(vec![1.0]).unwrap();
        for _ in 0..100 {
            s.gmp_pass(&[obs], PriorMode::Oracle, Some(&pdp)).unwrap();
        }
        let v = 1.0 / (1.0 + 1.0 / obs.var);
        let mean = obs.mean * (v / obs.var);
        // The mean reaches the MMSE value; the variance settles where
        // nu = 1 / (1 + 1 / (obs.var + nu)).
        let nu = s.h_var[0];
        assert!((nu - 1.0 / (1.0 + 1.0 / (obs.var + nu))).abs() < 1e-14);
        assert!(nu > v);
        // phi = exp(-j 2 pi) = 1 for K = L = 1.
        assert!((s.h_mean[0] - mean).norm() < 1e-12);
    }

    #[test]
    fn no_information_keeps_prior() {
        let mut s = EstimatorState::new(1, 1, 4, 8, TapIndexing::OneBased, GmpCorrection::FirstOrder).unwrap();
        let pdp = PowerDelayProfile::exponential(4, 6.0).unwrap();
        s.gmp_pass(&vec![GaussianMsg::uninformative(); 8], PriorMode::Oracle, Some(&pdp)).unwrap();
        assert!(s.h_mean.iter().all(|h| h.norm() == 0.0));
        for (v, p) in s.h_var.iter().zip(&pdp.powers) {
            assert!((v - p).abs() < 1e-15);
        }
        for t in &s.tau_g {
            assert!(t.is_infinite());
        }
    }

    fn lmmse(phi: &DMatrix<C64>, msgs: &[GaussianMsg], alpha: &[f64]) -> DVector<C64> {
        let idx: Vec<usize> = (0..msgs.len()).filter(|&k| msgs[k].is_informative()).collect();
        let l = alpha.len();
        let a = DMatrix::from_fn(idx.len(), l, |r, c| phi[(idx[r], c)]);
        let sinv = DMatrix::from_diagonal(&DVector::from_iterator(
            idx.len(),
            idx.iter().map(|&k| C64::new(1.0 / msgs[k].var, 0.0)),
        ));
        let yp = DVector::from_iterator(idx.len(), idx.iter().map(|&k| msgs[k].mean));
        let gamma_inv = DMatrix::from_diagonal(&DVector::from_iterator(l, alpha.iter().map(|a| C64::new(1.0 / a, 0.0))));
        let lhs = gamma_inv + a.adjoint() * &sinv * &a;
        lhs.try_inverse().unwrap() * a.adjoint() * sinv * yp
    }

    fn pilot_link(rng: &mut ChaCha8Rng, k_tot: usize, pilots: usize, pdp: &PowerDelayProfile, noise: f64) -> (Vec<C64>, Vec<GaussianMsg>) {
        let h: Vec<C64> = pdp.powers.iter().map(|&p| complex_gaussian(rng, p)).collect();
        let w = crate::channel_model::cir_to_cfr(&h, k_tot, TapIndexing::OneBased);
        let mut msgs = vec![GaussianMsg::uninformative(); k_tot];
        for j in 0..pilots {
            let k = j * (k_tot / pilots);
            let x = C64::from_polar(1.0, std::f64::consts::FRAC_PI_4 * (2 * rng.random_range(0..4) + 1) as f64);
            let y = w[k] * x + complex_gaussian(rng, noise);
            msgs[k] = pilot_message(y, x, noise).unwrap();
        }
        (h, msgs)
    }

    #[test]
    fn first_order_fixed_point_is_lmmse_at_high_snr() {
        let (k_tot, l_tot) = (32, 8);
        let pdp = PowerDelayProfile::exponential(l_tot, 6.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dft = DftWeights::new(k_tot, l_tot, TapIndexing::OneBased);
        let phi = DMatrix::from_fn(k_tot, l_tot, |k, l| dft.at(k, l));
        for _ in 0..5 {
            let (_, msgs) = pilot_link(&mut rng, k_tot, 8, &pdp, 0.1);
            let mut s = EstimatorState::new(1, 1, l_tot, k_tot, TapIndexing::OneBased, GmpCorrection::FirstOrder).unwrap();
            for _ in 0..200 {
                s.gmp_pass(&msgs, PriorMode::Oracle, Some(&pdp)).unwrap();
            }
            let oracle = lmmse(&phi, &msgs, &pdp.powers);
            let err: f64 = s.h_mean.iter().zip(oracle.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            assert!(err / oracle.norm() < 1e-9, "{}", err / oracle.norm());
        }
    }

    #[test]
    fn noiseless_full_pilots_recover_taps() {
        let (k_tot, l_tot) = (16, 4);
        let pdp = PowerDelayProfile::exponential(l_tot, 6.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (h, mut msgs) = pilot_link(&mut rng, k_tot, k_tot, &pdp, 1e-30);
        msgs.iter_mut().for_each(|m| m.var = 1e-14);
        let mut s = EstimatorState::new(1, 1, l_tot, k_tot, TapIndexing::OneBased, GmpCorrection::FirstOrder).unwrap();
        for _ in 0..40 {
            s.gmp_pass(&msgs, PriorMode::Oracle, Some(&pdp)).unwrap();
        }
        for (a, b) in s.h_mean.iter().zip(&h) {
            assert!((a - b).norm() < 1e-8, "{a} {b}");
        }
    }

    #[test]
    fn table_invariants_hold() {
        let (k_tot, l_tot) = (16, 4);
        let pdp = PowerDelayProfile::exponential(l_tot, 6.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for corr in [GmpCorrection::FirstOrder, GmpCorrection::Table] {
            let (_, msgs) = pilot_link(&mut rng, k_tot, 4, &pdp, 0.5);
            let mut s = EstimatorState::new(1, 1, l_tot, k_tot, TapIndexing::OneBased, corr).unwrap();
            for _ in 0..3 {
                let prev_sum: f64 = s.h_var.iter().sum();
                s.gmp_pass(&msgs, PriorMode::Learned, None).unwrap();
                for k in 0..k_tot {
                    assert_eq!(s.tau_g[k], msgs[k].var + prev_sum);
                    let post = s.w_post[k].var;
                    assert!(post <= s.g_to_w[k].var.min(msgs[k].var) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn learned_power_cases() {
        let s = EstimatorState::new(3, 2, 4, 8, TapIndexing::OneBased, GmpCorrection::FirstOrder).unwrap();
        let p = pdp_update(&s);
        assert!(p.power.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let mut one = EstimatorState::new(1, 1, 1, 1, TapIndexing::OneBased, GmpCorrection::FirstOrder).unwrap();
        one.h_mean[0] = c(1.0, 0.0);
        one.h_var[0] = 0.0;
        let p = pdp_update(&one);
        assert_eq!(p.power, vec![1.0]);
        assert_eq!((p.gamma_shape, p.gamma_rate[0]), (1.0, 1.0));
    }

    #[test]
    fn learned_power_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut s = EstimatorState::new(4, 1, 2, 4, TapIndexing::OneBased, GmpCorrection::FirstOrder).unwrap();
        for i in 0..8 {
            s.h_mean[i] = complex_gaussian(&mut rng, 1.0);
            s.h_var[i] = rng.random_range(0.0..0.5);
        }
        let p = pdp_update(&s);
        let mut swapped = s.clone();
        for l in 0..2 {
            swapped.h_mean.swap(l, 6 + l);
            swapped.h_var.swap(l, 6 + l);
        }
        let q = pdp_update(&swapped);
        for l in 0..2 {
            assert!((p.power[l] - q.power[l]).abs() < 1e-15);
            let max = (0..4).map(|m| s.h_mean[m * 2 + l].norm_sqr() + s.h_var[m * 2 + l]).fold(0.0, f64::max);
            assert!(p.power[l] >= 0.0 && p.power[l] <= max);
        }
    }

    #[test]
    fn oracle_equals_learned_when_powers_match() {
        let (k_tot, l_tot) = (8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let pdp = PowerDelayProfile::new(vec![0.5, 0.5]).unwrap();
        let (_, msgs) = pilot_link(&mut rng, k_tot, 4, &pdp, 0.2);
        // At the cold start the learned power is 1/L = 0.5 for both taps.
        let mut a = EstimatorState::new(1, 1, l_tot, k_tot, TapIndexing::OneBased, GmpCorrection::FirstOrder).unwrap();
        let mut b = a.clone();
        a.gmp_pass(&msgs, PriorMode::Learned, None).unwrap();
        b.gmp_pass(&msgs, PriorMode::Oracle, Some(&pdp)).unwrap();
        assert_eq!(a.h_mean, b.h_mean);
        assert_eq!(a.h_var, b.h_var);
    }

    #[test]
    fn outgoing_division_and_fallback() {
        let mut s = EstimatorState::new(1, 1, 1, 2, TapIndexing::OneBased, GmpCorrection::FirstOrder).unwrap();
        s.w_post[1] = GaussianMsg::new(c(1.0, 0.0), 0.5);
        let data = [(1, 1), (2, 1)];
        let f = [GaussianMsg::new(c(0.5, 0.0), 1.0), GaussianMsg::new(c(0.0, 0.0), 0.25)];
        let out = s.outgoing(&data, Some(&f)).unwrap();
        assert!((out[0].var - 1.0).abs() < 1e-15);
        assert!((out[0].mean - c(1.5, 0.0)).norm() < 1e-14);
        assert_eq!(out[1], GaussianMsg::new(c(0.0, 0.0), LARGE_VARIANCE));
    }

    proptest::proptest! {
        #[test]
        fn gmp_invariants(seed in proptest::prelude::any::<u64>(), noise in 1e-3f64..2.0, table in proptest::prelude::any::<bool>()) {
            let (k_tot, l_tot) = (16, 4);
            let pdp = PowerDelayProfile::exponential(l_tot, 6.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, msgs) = pilot_link(&mut rng, k_tot, 4, &pdp, noise);
            let corr = if table { GmpCorrection::Table } else { GmpCorrection::FirstOrder };
            let mut s = EstimatorState::new(1, 1, l_tot, k_tot, TapIndexing::OneBased, corr).unwrap();
            for _ in 0..3 {
                let v_prev: f64 = s.h_var.iter().sum();
                s.gmp_pass(&msgs, PriorMode::Learned, None).unwrap();
                for k in 0..k_tot {
                    proptest::prop_assert!((s.tau_g[k] - (msgs[k].var + v_prev)).abs() <= 1e-12 * s.tau_g[k].max(1.0) || msgs[k].var.is_infinite());
                    let bound = msgs[k].var.min(s.g_to_w[k].var);
                    proptest::prop_assert!(s.w_post[k].var <= bound * (1.0 + 1e-12));
                }
                let learned = pdp_update(&s);
                let cap = s.h_mean.iter().zip(&s.h_var).map(|(h, v)| h.norm_sqr() + v).fold(0.0, f64::max);
                proptest::prop_assert!(learned.power.iter().all(|&p| p >= 0.0 && p <= cap * (1.0 + 1e-12)));
            }
        }
    }
}
