//! Message types shared by the detector and the channel estimator.

use crate::C64;

/// Replacement for a non-positive message variance ("+infinity in principle,
/// a large constant in practice").
pub const LARGE_VARIANCE: f64 = 1e6;

/// Circularly-symmetric complex Gaussian message `CN(mean, var)`.
///
/// A variance of `f64::INFINITY` encodes a message that carries no
/// information; its mean is ignored and kept at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMsg {
    pub mean: C64,
    pub var: f64,
}

impl Default for GaussianMsg {
    fn default() -> Self {
        Self::uninformative()
    }
}

impl GaussianMsg {
    pub const fn new(mean: C64, var: f64) -> Self {
        Self { mean, var }
    }

    pub const fn uninformative() -> Self {
        Self {
            mean: C64::new(0.0, 0.0),
            var: f64::INFINITY,
        }
    }

    pub fn precision(&self) -> f64 {
        1.0 / self.var
    }

    /// `mean / var`, zero for uninformative messages.
    pub fn natural_mean(&self) -> C64 {
        if self.var.is_infinite() {
            C64::new(0.0, 0.0)
        } else {
            self.mean / self.var
        }
    }

    pub fn is_informative(&self) -> bool {
        self.var.is_finite()
    }

    /// Builds a message from precision and natural mean.
    pub fn from_natural(precision: f64, natural_mean: C64) -> Self {
        if precision <= 0.0 {
            Self::uninformative()
        } else {
            let var = 1.0 / precision;
            Self {
                mean: natural_mean * var,
                var,
            }
        }
    }

    /// Normalized product of Gaussian messages, summed in iteration order.
    pub fn product<'a, I>(msgs: I) -> Self
    where
        I: IntoIterator<Item = &'a GaussianMsg>,
    {
        let (prec, nat) = msgs
            .into_iter()
            .fold((0.0, C64::new(0.0, 0.0)), |(p, n), m| {
                (p + m.precision(), n + m.natural_mean())
            });
        Self::from_natural(prec, nat)
    }

    /// Gaussian division `posterior / incoming`, or `None` when the quotient
    /// would have a non-positive (or undefined) variance.
    pub fn divide(posterior: &GaussianMsg, incoming: &GaussianMsg) -> Option<GaussianMsg> {
        let prec = posterior.precision() - incoming.precision();
        if !(prec > 0.0) || !prec.is_finite() {
            return None;
        }
        let var = 1.0 / prec;
        let mean = var * (posterior.natural_mean() - incoming.natural_mean());
        Some(GaussianMsg { mean, var })
    }

    /// Log-density up to the normalizing constant: `-|x - mean|^2 / var`.
    pub fn log_kernel(&self, x: C64) -> f64 {
        -(x - self.mean).norm_sqr() / self.var
    }
}

/// Probability vector over the constellation points.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMsg {
    pub probs: Vec<f64>,
}

impl DiscreteMsg {
    pub fn uniform(size: usize) -> Self {
        Self {
            probs: vec![1.0 / size as f64; size],
        }
    }

    /// Normalizes unnormalized log-weights; `-inf` entries get zero mass.
    pub fn from_log_weights(log_w: &[f64]) -> Self {
        let mut probs = vec![0.0; log_w.len()];
        normalize_log_weights(log_w, &mut probs);
        Self { probs }
    }

    /// First two moments `(mean, variance)` over the given points.
    pub fn moments(&self, points: &[C64]) -> (C64, f64) {
        moments(&self.probs, points)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Writes `exp(log_w - max)` normalized to sum one into `out`.
///
/// Falls back to uniform if every weight is `-inf` or NaN.
pub(crate) fn normalize_log_weights(log_w: &[f64], out: &mut [f64]) {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let u = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|p| *p = u);
        return;
    }
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(log_w) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn moments(probs: &[f64], points: &[C64]) -> (C64, f64) {
    let mut mean = C64::new(0.0, 0.0);
    let mut second = 0.0;
    for (&p, &a) in probs.iter().zip(points) {
        mean += a * p;
        second += p * a.norm_sqr();
    }
    (mean, (second - mean.norm_sqr()).max(0.0))
}
