//! 3D spatially correlated frequency-selective channel generation.
//!
//! Each user-to-array path gain vector is drawn as `R^{1/2} g` with
//! `g ~ CN(0, alpha I)` and `R = R_az (x) R_el`, the Kronecker product of the
//! azimuth (array columns) and elevation (array rows) correlation matrices of
//! a uniform planar array. Antenna `m` sits at column `w = m / rows` and row
//! `d = m % rows`.

use std::f64::consts::PI;
use std::io::{self, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

/// Uniform planar array at the base station. Spacings are in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    pub d_el: f64,
    pub d_az: f64,
    /// Carrier wavelength in meters. The correlation entries depend only on
    /// spacing over wavelength, so 1.0 is fine.
    pub wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(rows: usize, cols: usize, d_el: f64, d_az: f64, wavelength: f64) -> Result<Self> {
        let g = Self {
            rows,
            cols,
            d_el,
            d_az,
            wavelength,
        };
        g.validate()?;
        Ok(g)
    }

    /// Half-wavelength-free default used in the experiments: one-wavelength
    /// spacing in both directions.
    pub fn with_unit_spacing(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, 1.0, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::config("array needs at least one row and one column"));
        }
        if !(self.d_el > 0.0 && self.d_az > 0.0 && self.wavelength > 0.0) {
            return Err(Error::config("antenna spacings and wavelength must be positive"));
        }
        Ok(())
    }

    pub fn num_antennas(&self) -> usize {
        self.rows * self.cols
    }

    fn spacing_az_m(&self) -> f64 {
        self.d_az * self.wavelength
    }

    fn spacing_el_m(&self) -> f64 {
        self.d_el * self.wavelength
    }
}

/// Angular statistics of one path: mean departure angles and their
/// variances (radians, radians^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathAngles {
    pub az_mean: f64,
    pub el_mean: f64,
    pub az_var: f64,
    pub el_var: f64,
}

impl PathAngles {
    /// Uniform draw: azimuth mean in [pi/6, 5pi/6), elevation mean in
    /// [pi/12, pi/3), both standard deviations in [pi/12, pi/6).
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let az_mean = rng.random_range(PI / 6.0..5.0 * PI / 6.0);
        let el_mean = rng.random_range(PI / 12.0..PI / 3.0);
        let az_std: f64 = rng.random_range(PI / 12.0..PI / 6.0);
        let el_std: f64 = rng.random_range(PI / 12.0..PI / 6.0);
        Self {
            az_mean,
            el_mean,
            az_var: az_std * az_std,
            el_var: el_std * el_std,
        }
    }
}

/// Entry `(w, w2)` of the azimuth correlation matrix.
pub fn azimuth_correlation(geom: &ArrayGeometry, ang: &PathAngles, w: usize, w2: usize) -> C64 {
    let sep = w2 as f64 - w as f64;
    let k = 2.0 * PI * geom.spacing_az_m() / geom.wavelength * sep;
    let a = k * ang.el_var.sqrt() * ang.el_mean.cos();
    let b = ang.az_var * a * a * ang.az_mean.sin().powi(2) + 1.0;
    let c = k * ang.el_mean.sin();
    let (cos_az, sin_az) = (ang.az_mean.cos(), ang.az_mean.sin());
    let num = C64::new(
        a * a * cos_az * cos_az + ang.az_var * (c * sin_az).powi(2),
        -2.0 * c * cos_az,
    );
    (-num / (2.0 * b)).exp() / b.sqrt()
}

/// Entry `(d, d2)` of the elevation correlation matrix.
pub fn elevation_correlation(geom: &ArrayGeometry, ang: &PathAngles, d: usize, d2: usize) -> C64 {
    let sep = d2 as f64 - d as f64;
    let lambda = geom.wavelength;
    let dist = geom.spacing_el_m() * sep;
    let phase = PI * lambda * dist * ang.el_mean.cos();
    let spread = ang.el_var * (PI * dist * ang.el_mean.sin()).powi(2);
    (C64::new(-spread, phase) * 2.0 / (lambda * lambda)).exp()
}

pub fn azimuth_matrix(geom: &ArrayGeometry, ang: &PathAngles) -> DMatrix<C64> {
    DMatrix::from_fn(geom.cols, geom.cols, |i, j| azimuth_correlation(geom, ang, i, j))
}

pub fn elevation_matrix(geom: &ArrayGeometry, ang: &PathAngles) -> DMatrix<C64> {
    DMatrix::from_fn(geom.rows, geom.rows, |i, j| elevation_correlation(geom, ang, i, j))
}

/// `R_az (x) R_el` before any PSD repair.
pub fn kronecker_correlation(geom: &ArrayGeometry, ang: &PathAngles) -> DMatrix<C64> {
    azimuth_matrix(geom, ang).kronecker(&elevation_matrix(geom, ang))
}

/// Receive correlation matrix projected onto the PSD cone with unit diagonal.
pub fn build_receive_correlation(geom: &ArrayGeometry, ang: &PathAngles) -> DMatrix<C64> {
    project_psd(&kronecker_correlation(geom, ang))
}

/// Clips negative eigenvalues to zero, then rescales to unit diagonal.
pub fn project_psd(r: &DMatrix<C64>) -> DMatrix<C64> {
    let herm = (r + r.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let u = &eig.eigenvectors;
    let diag = DMatrix::from_diagonal(&clipped.map(|v| C64::new(v, 0.0)));
    let mut p = u * diag * u.adjoint();
    let scale: Vec<f64> = (0..p.nrows())
        .map(|i| {
            let d = p[(i, i)].re;
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    for j in 0..p.ncols() {
        for i in 0..p.nrows() {
            p[(i, j)] *= scale[i] * scale[j];
        }
    }
    p
}

/// Hermitian square root `U diag(sqrt(lambda)) U^H` of a PSD matrix.
#[derive(Debug, Clone)]
pub struct CorrelationRoot {
    root: DMatrix<C64>,
}

impl CorrelationRoot {
    pub fn new(r: &DMatrix<C64>) -> Self {
        let herm = (r + r.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(herm);
        let sq = eig.eigenvalues.map(|v| C64::new(v.max(0.0).sqrt(), 0.0));
        let u = &eig.eigenvectors;
        Self {
            root: u * DMatrix::from_diagonal(&sq) * u.adjoint(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.root.nrows()
    }
}

/// Draws `CN(0, sigma2)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, sigma2: f64) -> C64 {
    let s = (sigma2 / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// One path gain vector across the array, `R^{1/2} g` with `g ~ CN(0, power I)`.
pub fn sample_cir<R: Rng + ?Sized>(rng: &mut R, root: &CorrelationRoot, power: f64) -> Vec<C64> {
    let m = root.dim();
    let g: Vec<C64> = (0..m).map(|_| complex_gaussian(rng, power)).collect();
    let r = root.matrix();
    (0..m)
        .map(|i| (0..m).fold(C64::new(0.0, 0.0), |acc, j| acc + r[(i, j)] * g[j]))
        .collect()
}

/// Index convention for the DFT relating taps and subcarriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TapIndexing {
    /// Taps at delays `1..=L`, subcarriers `1..=K`.
    #[default]
    OneBased,
    /// Taps at delays `0..L`, subcarriers `0..K`.
    ZeroBased,
}

impl TapIndexing {
    fn offset(self) -> usize {
        match self {
            TapIndexing::OneBased => 1,
            TapIndexing::ZeroBased => 0,
        }
    }
}

/// The `K x L` matrix `phi[k][l] = exp(-j 2 pi l k / K)`, row-major.
#[derive(Debug, Clone)]
pub struct DftWeights {
    k: usize,
    l: usize,
    phi: Vec<C64>,
}

impl DftWeights {
    pub fn new(subcarriers: usize, taps: usize, indexing: TapIndexing) -> Self {
        let off = indexing.offset();
        let mut phi = Vec::with_capacity(subcarriers * taps);
        for k in 0..subcarriers {
            for l in 0..taps {
                // Reduce modulo K first so large products keep full precision.
                let r = ((l + off) * (k + off)) % subcarriers;
                let theta = -2.0 * PI * r as f64 / subcarriers as f64;
                phi.push(C64::from_polar(1.0, theta));
            }
        }
        Self {
            k: subcarriers,
            l: taps,
            phi,
        }
    }

    pub fn subcarriers(&self) -> usize {
        self.k
    }

    pub fn taps(&self) -> usize {
        self.l
    }

    #[inline]
    pub fn at(&self, k: usize, l: usize) -> C64 {
        self.phi[k * self.l + l]
    }

    /// `Phi h`.
    pub fn forward(&self, h: &[C64], out: &mut [C64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.phi[k * self.l..(k + 1) * self.l];
            *o = row.iter().zip(h).fold(C64::new(0.0, 0.0), |a, (p, x)| a + p * x);
        }
    }

    /// `Phi^H z`, skipping entries where `weight` is zero.
    pub fn adjoint_weighted(&self, z: &[C64], weight: &[f64], out: &mut [C64]) {
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for k in 0..self.k {
            if weight[k] == 0.0 {
                continue;
            }
            let zk = z[k] * weight[k];
            let row = &self.phi[k * self.l..(k + 1) * self.l];
            for (o, p) in out.iter_mut().zip(row) {
                *o += p.conj() * zk;
            }
        }
    }
}

/// Frequency response of one impulse response on `subcarriers` tones.
pub fn cir_to_cfr(h: &[C64], subcarriers: usize, indexing: TapIndexing) -> Vec<C64> {
    let dft = DftWeights::new(subcarriers, h.len(), indexing);
    let mut w = vec![C64::new(0.0, 0.0); subcarriers];
    dft.forward(h, &mut w);
    w
}

/// Per-tap average powers, shared by every user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDelayProfile {
    pub powers: Vec<f64>,
}

impl PowerDelayProfile {
    pub fn new(powers: Vec<f64>) -> Result<Self> {
        if powers.is_empty() || powers.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::config("tap powers must be nonnegative and nonempty"));
        }
        let total: f64 = powers.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("tap powers sum to {total}, not 1")));
        }
        Ok(Self { powers })
    }

    /// `alpha_l` proportional to `exp(-l / decay)` for `l = 1..=taps`.
    pub fn exponential(taps: usize, decay: f64) -> Result<Self> {
        if taps == 0 || !(decay > 0.0) {
            return Err(Error::config("exponential PDP needs taps >= 1 and decay > 0"));
        }
        let raw: Vec<f64> = (1..=taps).map(|l| (-(l as f64) / decay).exp()).collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            powers: raw.into_iter().map(|p| p / total).collect(),
        })
    }

    pub fn taps(&self) -> usize {
        self.powers.len()
    }

    /// Tap precisions `1 / alpha_l` (infinite for empty taps).
    pub fn precisions(&self) -> Vec<f64> {
        self.powers.iter().map(|&p| 1.0 / p).collect()
    }
}

/// How departure angles are drawn across the taps of one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleSharing {
    /// One angle set per user, reused for all of its taps.
    #[default]
    PerUser,
    /// Independent angle set for every (user, tap).
    PerTap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub geometry: ArrayGeometry,
    pub users: usize,
    pub taps: usize,
    pub subcarriers: usize,
    pub pdp: PowerDelayProfile,
    pub angles: AngleSharing,
    pub indexing: TapIndexing,
}

/// One block-static channel draw: CIR `h[m][n][l]` and CFR `wf[m][n][k]`,
/// both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub antennas: usize,
    pub users: usize,
    pub taps: usize,
    pub subcarriers: usize,
    pub h: Vec<C64>,
    pub wf: Vec<C64>,
}

impl ChannelRealization {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R, cfg: &ChannelConfig) -> Result<Self> {
        cfg.geometry.validate()?;
        Error::check_len("PDP taps", cfg.taps, cfg.pdp.taps())?;
        if cfg.taps > cfg.subcarriers {
            return Err(Error::config("channel taps exceed subcarrier count"));
        }
        let m_ant = cfg.geometry.num_antennas();
        let (n_usr, n_tap) = (cfg.users, cfg.taps);
        let mut h = vec![C64::new(0.0, 0.0); m_ant * n_usr * n_tap];
        for n in 0..n_usr {
            let mut root = None;
            for l in 0..n_tap {
                if root.is_none() || cfg.angles == AngleSharing::PerTap {
                    let ang = PathAngles::draw(rng);
                    root = Some(CorrelationRoot::new(&build_receive_correlation(
                        &cfg.geometry,
                        &ang,
                    )));
                }
                let g = sample_cir(rng, root.as_ref().unwrap(), cfg.pdp.powers[l]);
                for (m, v) in g.into_iter().enumerate() {
                    h[(m * n_usr + n) * n_tap + l] = v;
                }
            }
        }
        Ok(Self::from_cir(m_ant, n_usr, n_tap, cfg.subcarriers, h, cfg.indexing))
    }

    /// Derives the CFR from a given CIR tensor.
    pub fn from_cir(
        antennas: usize,
        users: usize,
        taps: usize,
        subcarriers: usize,
        h: Vec<C64>,
        indexing: TapIndexing,
    ) -> Self {
        let dft = DftWeights::new(subcarriers, taps, indexing);
        let mut wf = vec![C64::new(0.0, 0.0); antennas * users * subcarriers];
        for (link, taps_h) in h.chunks(taps).enumerate() {
            dft.forward(taps_h, &mut wf[link * subcarriers..(link + 1) * subcarriers]);
        }
        Self {
            antennas,
            users,
            taps,
            subcarriers,
            h,
            wf,
        }
    }

    #[inline]
    pub fn cir(&self, m: usize, n: usize) -> &[C64] {
        let s = (m * self.users + n) * self.taps;
        &self.h[s..s + self.taps]
    }

    #[inline]
    pub fn cfr(&self, m: usize, n: usize) -> &[C64] {
        let s = (m * self.users + n) * self.subcarriers;
        &self.wf[s..s + self.subcarriers]
    }

    /// Flat binary record: `M, N, L, K` as little-endian `u32`, then `H` and
    /// `Wf` as interleaved little-endian `f32` pairs (re, im).
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        for d in [self.antennas, self.users, self.taps, self.subcarriers] {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in self.h.iter().chain(&self.wf) {
            out.write_all(&(v.re as f32).to_le_bytes())?;
            out.write_all(&(v.im as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Parses a record written by [`write_binary`](Self::write_binary).
    pub fn read_binary(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<u32> {
            bytes
                .get(4 * i..4 * i + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::config("truncated channel header"))
        };
        let (m, n, l, k) = (
            word(0)? as usize,
            word(1)? as usize,
            word(2)? as usize,
            word(3)? as usize,
        );
        let count = m * n * (l + k);
        Error::check_len("channel record bytes", 16 + 8 * count, bytes.len())?;
        let vals: Vec<C64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
                let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
                C64::new(re as f64, im as f64)
            })
            .collect();
        let split = m * n * l;
        Ok(Self {
            antennas: m,
            users: n,
            taps: l,
            subcarriers: k,
            h: vals[..split].to_vec(),
            wf: vals[split..].to_vec(),
        })
    }

    /// CSV with columns `kind,m,n,index,re,im` (`kind` is `h` or `w`).
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "kind,m,n,index,re,im")?;
        for m in 0..self.antennas {
            for n in 0..self.users {
                for (l, v) in self.cir(m, n).iter().enumerate() {
                    writeln!(out, "h,{m},{n},{l},{:.9e},{:.9e}", v.re, v.im)?;
                }
            }
        }
        for m in 0..self.antennas {
            for n in 0..self.users {
                for (k, v) in self.cfr(m, n).iter().enumerate() {
                    writeln!(out, "w,{m},{n},{k},{:.9e},{:.9e}", v.re, v.im)?;
                }
            }
        }
        Ok(())
    }
}
