use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel_estimator::{GmpCorrection, PriorMode};
use crate::channel_model::{AngleSharing, ArrayGeometry, ChannelConfig, PowerDelayProfile, TapIndexing};
use crate::decoder::BcjrMetric;
use crate::ep_detector::DetectorKind;
use crate::link::spectral_efficiency;
use crate::txchain::{CodeConfig, FrameConfig};
use crate::{Error, Result};

/// Receiver under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// EP-QA detection with GMP estimation and learned PDP.
    #[serde(rename = "ep-qa-l")]
    EpQaL,
    /// EP-QA detection with GMP estimation and oracle PDP.
    #[serde(rename = "ep-qa")]
    EpQa,
    /// BP-GA detection with GMP estimation and oracle PDP.
    #[serde(rename = "bp-ga")]
    BpGa,
    /// Matched-filter bound with perfect CSI and interference cancellation.
    #[serde(rename = "mfb-pcsi")]
    MfbPcsi,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::EpQaL, Variant::EpQa, Variant::BpGa, Variant::MfbPcsi];

    pub fn label(self) -> &'static str {
        match self {
            Variant::EpQaL => "ep-qa-l",
            Variant::EpQa => "ep-qa",
            Variant::BpGa => "bp-ga",
            Variant::MfbPcsi => "mfb-pcsi",
        }
    }

    /// Detector and tap prior for the iterative receivers.
    pub fn receiver(self) -> Option<(DetectorKind, PriorMode)> {
        match self {
            Variant::EpQaL => Some((DetectorKind::EpQa, PriorMode::Learned)),
            Variant::EpQa => Some((DetectorKind::EpQa, PriorMode::Oracle)),
            Variant::BpGa => Some((DetectorKind::BpGa, PriorMode::Oracle)),
            Variant::MfbPcsi => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown variant `{s}`")))
    }
}

/// Full simulation description. Every field has a default, so a config
/// file only needs the entries it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// OFDM symbols per block-static frame.
    pub symbols: usize,
    pub users: usize,
    pub subcarriers: usize,
    /// Pilot subcarriers per user.
    pub pilots: usize,
    pub cp_len: usize,
    pub bits_per_symbol: usize,
    /// Octal generators as integers, e.g. `0o117`.
    pub code_feedback: u32,
    pub code_feedforward: u32,
    pub code_terminate: bool,
    /// Nominal code rate used in the Eb/N0 conversion.
    pub code_rate: f64,
    /// Elevation rows of the planar array.
    pub array_rows: usize,
    /// Azimuth columns of the planar array.
    pub array_cols: usize,
    /// Element spacings in wavelengths.
    pub spacing_el: f64,
    pub spacing_az: f64,
    pub taps: usize,
    pub pdp_decay: f64,
    pub angles: AngleSharing,
    pub indexing: TapIndexing,
    pub eb_n0_db: Vec<f64>,
    pub turbo_iters: usize,
    /// GMP inner iterations in the first turbo iteration.
    pub first_inner: usize,
    /// GMP inner iterations in later turbo iterations.
    pub later_inner: usize,
    pub variants: Vec<Variant>,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub correction: GmpCorrection,
    pub metric: BcjrMetric,
}

impl Default for SimConfig {
    /// Desk-scale 8 x 4 QPSK system.
    fn default() -> Self {
        let code = CodeConfig::default();
        Self {
            symbols: 4,
            users: 4,
            subcarriers: 64,
            pilots: 8,
            cp_len: 8,
            bits_per_symbol: 2,
            code_feedback: code.feedback,
            code_feedforward: code.feedforward,
            code_terminate: code.terminate,
            code_rate: 0.5,
            array_rows: 2,
            array_cols: 4,
            spacing_el: 1.0,
            spacing_az: 1.0,
            taps: 8,
            pdp_decay: 6.0,
            angles: AngleSharing::default(),
            indexing: TapIndexing::default(),
            eb_n0_db: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            turbo_iters: 8,
            first_inner: 5,
            later_inner: 1,
            variants: vec![Variant::EpQaL, Variant::EpQa, Variant::BpGa, Variant::MfbPcsi],
            trials: 500,
            seed: 1,
            workers: 0,
            correction: GmpCorrection::default(),
            metric: BcjrMetric::default(),
        }
    }
}

impl SimConfig {
    /// The 64 x 8 16QAM system of the long-run experiments.
    pub fn full_scale() -> Self {
        Self {
            symbols: 8,
            users: 8,
            subcarriers: 128,
            pilots: 16,
            cp_len: 16,
            bits_per_symbol: 4,
            array_rows: 4,
            array_cols: 16,
            taps: 16,
            ..Self::default()
        }
    }

    pub fn frame(&self) -> FrameConfig {
        FrameConfig {
            symbols: self.symbols,
            users: self.users,
            subcarriers: self.subcarriers,
            pilots: self.pilots,
            cp_len: self.cp_len,
            bits_per_symbol: self.bits_per_symbol,
        }
    }

    pub fn code(&self) -> CodeConfig {
        CodeConfig {
            feedback: self.code_feedback,
            feedforward: self.code_feedforward,
            terminate: self.code_terminate,
        }
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.array_rows, self.array_cols, self.spacing_el, self.spacing_az, 1.0)
    }

    pub fn antennas(&self) -> usize {
        self.array_rows * self.array_cols
    }

    pub fn pdp(&self) -> Result<PowerDelayProfile> {
        PowerDelayProfile::exponential(self.taps, self.pdp_decay)
    }

    pub fn channel(&self) -> Result<ChannelConfig> {
        Ok(ChannelConfig {
            geometry: self.geometry()?,
            users: self.users,
            taps: self.taps,
            subcarriers: self.subcarriers,
            pdp: self.pdp()?,
            angles: self.angles,
            indexing: self.indexing,
        })
    }

    /// Overhead-normalized spectral efficiency of the frame.
    pub fn efficiency(&self) -> f64 {
        spectral_efficiency(&self.frame())
    }

    pub fn validate(&self) -> Result<()> {
        self.frame().validate()?;
        self.code().validate()?;
        self.frame().info_len(&self.code())?;
        self.geometry()?;
        self.pdp()?;
        if self.taps > self.subcarriers {
            return Err(Error::config("taps exceed subcarriers"));
        }
        if self.eb_n0_db.is_empty() || self.eb_n0_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("Eb/N0 grid must be nonempty and finite"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("at least one variant is required"));
        }
        if self.trials == 0 {
            return Err(Error::config("trial count must be at least 1"));
        }
        if self.turbo_iters == 0 || self.first_inner == 0 {
            return Err(Error::config("turbo and first inner iteration counts must be at least 1"));
        }
        if !(self.code_rate > 0.0 && self.code_rate <= 1.0) {
            return Err(Error::config("code rate must lie in (0, 1]"));
        }
        if self.pilots == 0 && self.variants.iter().any(|v| v.receiver().is_some()) {
            return Err(Error::config("iterative receivers need pilots"));
        }
        Ok(())
    }
}
