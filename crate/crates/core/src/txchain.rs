//! Transmit chain: RSC encoding, random interleaving, Gray-mapped QAM and
//! frequency-division pilot framing.
//!
//! # Labeling
//!
//! A label of `Q` bits `b_0 .. b_{Q-1}` (bit 0 is the most significant bit of
//! the label index) is split into `Q/2` in-phase bits followed by `Q/2`
//! quadrature bits. Each half maps to a PAM level through the reflected Gray
//! recursion
//!
//! ```text
//! level(b_0 .. b_{m-1}) = (1 - 2 b_0) * mag(b_1 .. b_{m-1})
//! mag()                 = 1
//! mag(b_j .. b_{m-1})   = 2^(m-j) - (1 - 2 b_j) * mag(b_{j+1} .. b_{m-1})
//! ```
//!
//! and the symbol is `(level_I + j level_Q) / sqrt(E)` with `E` equal to 2, 10
//! or 42 for QPSK, 16QAM and 64QAM. QPSK:
//!
//! | label | symbol            |
//! |-------|-------------------|
//! | 00    | ( 1 + 1j) / sqrt2 |
//! | 01    | ( 1 - 1j) / sqrt2 |
//! | 10    | (-1 + 1j) / sqrt2 |
//! | 11    | (-1 - 1j) / sqrt2 |
//!
//! 16QAM in-phase levels for `(b_0 b_1)`: `00 -> 1`, `01 -> 3`, `10 -> -1`,
//! `11 -> -3` (before scaling); the quadrature bits `(b_2 b_3)` follow the
//! same table.
//!
//! # Pilots
//!
//! All pilots sit in the first OFDM symbol. With spacing `S = K / K_p`, user
//! `n` (0-based) owns subcarriers `n, n + S, n + 2S, ...`. Other users send
//! zero there. Every remaining resource element carries data for all users.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result, C64};

/// Rate-1/2 recursive systematic convolutional code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeConfig {
    /// Feedback generator, octal digits written as a number (e.g. `0o117`).
    pub feedback: u32,
    /// Feedforward (parity) generator.
    pub feedforward: u32,
    /// Drive the encoder back to the zero state with tail bits.
    pub terminate: bool,
}

impl Default for CodeConfig {
    fn default() -> Self {
        Self {
            feedback: 0o117,
            feedforward: 0o155,
            terminate: true,
        }
    }
}

fn parity(x: u32) -> u8 {
    (x.count_ones() & 1) as u8
}

impl CodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feedback == 0 || self.feedforward == 0 {
            return Err(Error::config("code generators must be nonzero"));
        }
        if self.memory() == 0 || self.memory() > 16 {
            return Err(Error::config("code memory must be between 1 and 16"));
        }
        if self.feedback >> self.memory() & 1 == 0 {
            return Err(Error::config("feedback generator must include the input tap"));
        }
        Ok(())
    }

    /// Number of delay elements.
    pub fn memory(&self) -> usize {
        let hi = self.feedback.max(self.feedforward);
        (32 - hi.leading_zeros()).saturating_sub(1) as usize
    }

    pub fn num_states(&self) -> usize {
        1 << self.memory()
    }

    pub fn tail_len(&self) -> usize {
        if self.terminate {
            self.memory()
        } else {
            0
        }
    }

    /// Coded length for `info_len` information bits.
    pub fn coded_len(&self, info_len: usize) -> usize {
        2 * (info_len + self.tail_len())
    }

    /// Tap mask over the state register, where state bit `i - 1` holds the
    /// register value delayed by `i`.
    fn state_mask(&self, g: u32) -> u32 {
        let nu = self.memory();
        (1..=nu).fold(0, |m, i| m | (((g >> (nu - i)) & 1) << (i - 1)))
    }

    /// One encoder step from `state` with input `u`. Returns
    /// `(next_state, parity_bit)`.
    pub fn step(&self, state: u32, u: u8) -> (u32, u8) {
        let nu = self.memory();
        let a = u ^ parity(state & self.state_mask(self.feedback));
        let g0 = ((self.feedforward >> nu) & 1) as u8;
        let p = (g0 & a) ^ parity(state & self.state_mask(self.feedforward));
        let next = ((state << 1) | a as u32) & ((1 << nu) - 1);
        (next, p)
    }

    /// The input that forces the register bit to zero (used for the tail).
    pub fn tail_input(&self, state: u32) -> u8 {
        parity(state & self.state_mask(self.feedback))
    }
}

/// Encodes `bits` (0/1) and emits systematic and parity bits interleaved
/// per step, followed by the tail steps when termination is on.
pub fn rsc_encode(bits: &[u8], cfg: &CodeConfig) -> Vec<u8> {
    let mut out = Vec::with_capacity(cfg.coded_len(bits.len()));
    let mut state = 0;
    for &u in bits {
        let (next, p) = cfg.step(state, u & 1);
        out.extend([u & 1, p]);
        state = next;
    }
    for _ in 0..cfg.tail_len() {
        let u = cfg.tail_input(state);
        let (next, p) = cfg.step(state, u);
        out.extend([u, p]);
        state = next;
    }
    debug_assert!(!cfg.terminate || state == 0);
    out
}

/// Seeded uniform random permutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut rng: ChaCha8Rng = seed::rng(seed, &[]);
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut rng);
        Self { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// `out[i] = input[perm[i]]`.
    pub fn interleave<T: Copy>(&self, input: &[T]) -> Vec<T> {
        assert_eq!(input.len(), self.perm.len(), "interleaver length");
        self.perm.iter().map(|&p| input[p]).collect()
    }

    pub fn deinterleave<T: Copy + Default>(&self, input: &[T]) -> Vec<T> {
        assert_eq!(input.len(), self.perm.len(), "interleaver length");
        let mut out = vec![T::default(); input.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = input[i];
        }
        out
    }
}

/// Square Gray-labeled QAM constellation with unit average energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    bits_per_symbol: usize,
    points: Vec<C64>,
}

fn pam_level(bits: &[u8]) -> f64 {
    let m = bits.len();
    let mut mag = 1.0;
    for j in (1..m).rev() {
        mag = (1u32 << (m - j)) as f64 - (1.0 - 2.0 * bits[j] as f64) * mag;
    }
    (1.0 - 2.0 * bits[0] as f64) * mag
}

impl Constellation {
    pub fn new(bits_per_symbol: usize) -> Result<Self> {
        let energy = match bits_per_symbol {
            2 => 2.0,
            4 => 10.0,
            6 => 42.0,
            q => return Err(Error::config(format!("unsupported bits per symbol {q}"))),
        };
        let scale = 1.0 / f64::sqrt(energy);
        let half = bits_per_symbol / 2;
        let points = (0..1usize << bits_per_symbol)
            .map(|label| {
                let bits = label_bits(label, bits_per_symbol);
                C64::new(pam_level(&bits[..half]), pam_level(&bits[half..])) * scale
            })
            .collect();
        Ok(Self {
            bits_per_symbol,
            points,
        })
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    /// Points indexed by label.
    pub fn points(&self) -> &[C64] {
        &self.points
    }

    /// Bit `q` of `label`, most significant first.
    #[inline]
    pub fn bit(&self, label: usize, q: usize) -> u8 {
        ((label >> (self.bits_per_symbol - 1 - q)) & 1) as u8
    }

    /// Maps exactly `Q` bits to a symbol.
    pub fn map(&self, bits: &[u8]) -> Result<C64> {
        Error::check_len("bits per symbol", self.bits_per_symbol, bits.len())?;
        let label = bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
        Ok(self.points[label])
    }
}

fn label_bits(label: usize, q: usize) -> Vec<u8> {
    (0..q).map(|i| ((label >> (q - 1 - i)) & 1) as u8).collect()
}

/// Maps `Q` bits to a symbol of `constellation`.
pub fn gray_map(bits: &[u8], constellation: &Constellation) -> Result<C64> {
    constellation.map(bits)
}

/// Frame geometry shared by transmitter and receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameConfig {
    /// OFDM symbols per frame.
    pub symbols: usize,
    pub users: usize,
    pub subcarriers: usize,
    /// Pilot subcarriers per user.
    pub pilots: usize,
    /// Cyclic prefix length (only used for spectral efficiency).
    pub cp_len: usize,
    pub bits_per_symbol: usize,
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.symbols == 0 || self.users == 0 || self.subcarriers == 0 {
            return Err(Error::config("frame needs at least one symbol, user and subcarrier"));
        }
        if !matches!(self.bits_per_symbol, 2 | 4 | 6) {
            return Err(Error::config(format!(
                "bits per symbol must be 2, 4 or 6, got {}",
                self.bits_per_symbol
            )));
        }
        if self.users * self.pilots > self.subcarriers {
            return Err(Error::config(format!(
                "{} users x {} pilots exceed {} subcarriers",
                self.users, self.pilots, self.subcarriers
            )));
        }
        if self.pilots > 0 && self.subcarriers % self.pilots != 0 {
            return Err(Error::config("pilot count must divide the subcarrier count"));
        }
        Ok(())
    }

    pub fn resource_elements(&self) -> usize {
        self.symbols * self.subcarriers
    }

    /// Data resource elements, identical for every user.
    pub fn data_len(&self) -> usize {
        self.resource_elements() - self.users * self.pilots
    }

    pub fn coded_len(&self) -> usize {
        self.bits_per_symbol * self.data_len()
    }

    /// Information bits per user that fill the frame exactly.
    pub fn info_len(&self, code: &CodeConfig) -> Result<usize> {
        let coded = self.coded_len();
        let steps = coded / 2;
        if coded % 2 != 0 || steps <= code.tail_len() {
            return Err(Error::config("frame too small for the code"));
        }
        Ok(steps - code.tail_len())
    }

    #[inline]
    pub fn x_index(&self, t: usize, n: usize, k: usize) -> usize {
        (t * self.users + n) * self.subcarriers + k
    }
}

/// A resource element `(symbol, subcarrier)`, both 0-based.
pub type ResourceElement = (usize, usize);

/// Pilot placement and values.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotPattern {
    /// `sets[n]` lists user `n`'s pilot resource elements in subcarrier order.
    pub sets: Vec<Vec<ResourceElement>>,
    /// `values[n][j]` is the pilot sent on `sets[n][j]`.
    pub values: Vec<Vec<C64>>,
    /// Resource elements not used by any pilot, symbol-major.
    pub data: Vec<ResourceElement>,
    /// For each resource element `t * K + k`, the owner of a pilot there.
    owner: Vec<Option<usize>>,
}

impl PilotPattern {
    pub fn pilot_owner(&self, t: usize, k: usize, subcarriers: usize) -> Option<usize> {
        self.owner[t * subcarriers + k]
    }
}

/// Places pilots and draws unit-modulus QPSK pilot values from `seed`.
pub fn build_pilot_pattern(cfg: &FrameConfig, seed: u64) -> Result<PilotPattern> {
    cfg.validate()?;
    let (n_usr, k_tot) = (cfg.users, cfg.subcarriers);
    let mut owner = vec![None; cfg.resource_elements()];
    let mut sets = vec![Vec::with_capacity(cfg.pilots); n_usr];
    if cfg.pilots > 0 {
        let spacing = k_tot / cfg.pilots;
        for (n, set) in sets.iter_mut().enumerate() {
            for j in 0..cfg.pilots {
                let k = n + j * spacing;
                owner[k] = Some(n);
                set.push((0, k));
            }
        }
    }
    let mut rng = seed::rng(seed, &[seed::tag::PILOTS]);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let values = sets
        .iter()
        .map(|set| {
            set.iter()
                .map(|_| {
                    let re = if rng.random::<bool>() { s } else { -s };
                    let im = if rng.random::<bool>() { s } else { -s };
                    C64::new(re, im)
                })
                .collect()
        })
        .collect();
    let data = (0..cfg.symbols)
        .flat_map(|t| (0..k_tot).map(move |k| (t, k)))
        .filter(|&(t, k)| owner[t * k_tot + k].is_none())
        .collect();
    Ok(PilotPattern {
        sets,
        values,
        data,
        owner,
    })
}

/// One transmitted frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Information bits per user (empty when built from coded bits only).
    pub info_bits: Vec<Vec<u8>>,
    /// Interleaved coded bits per user, in mapping order.
    pub coded_bits: Vec<Vec<u8>>,
    /// Symbol tensor `x[t][n][k]`, row-major.
    pub x: Vec<C64>,
    /// Constellation label of each data symbol, `labels[n][j]` for
    /// `pattern.data[j]`.
    pub labels: Vec<Vec<usize>>,
}

/// Maps interleaved coded bits onto the data positions and inserts pilots.
pub fn assemble_frame(
    coded_bits: Vec<Vec<u8>>,
    cfg: &FrameConfig,
    pattern: &PilotPattern,
    constellation: &Constellation,
) -> Result<Frame> {
    cfg.validate()?;
    Error::check_len("users", cfg.users, coded_bits.len())?;
    let q = cfg.bits_per_symbol;
    Error::check_len("bits per symbol", q, constellation.bits_per_symbol())?;
    let mut x = vec![C64::new(0.0, 0.0); cfg.users * cfg.resource_elements()];
    let mut labels = Vec::with_capacity(cfg.users);
    for (n, bits) in coded_bits.iter().enumerate() {
        Error::check_len("coded bits", q * pattern.data.len(), bits.len())?;
        let mut user_labels = Vec::with_capacity(pattern.data.len());
        for (&(t, k), chunk) in pattern.data.iter().zip(bits.chunks(q)) {
            let label = chunk.iter().fold(0usize, |a, &b| (a << 1) | (b & 1) as usize);
            x[cfg.x_index(t, n, k)] = constellation.points()[label];
            user_labels.push(label);
        }
        for (&(t, k), &v) in pattern.sets[n].iter().zip(&pattern.values[n]) {
            x[cfg.x_index(t, n, k)] = v;
        }
        labels.push(user_labels);
    }
    Ok(Frame {
        info_bits: Vec::new(),
        coded_bits,
        x,
        labels,
    })
}

/// Reads user `n`'s data symbols back out of a frame, in data order.
pub fn extract_data(frame: &Frame, cfg: &FrameConfig, pattern: &PilotPattern, n: usize) -> Vec<C64> {
    pattern
        .data
        .iter()
        .map(|&(t, k)| frame.x[cfg.x_index(t, n, k)])
        .collect()
}

/// Everything the transmitter and receiver share about the coding chain.
#[derive(Debug, Clone)]
pub struct TxChain {
    pub frame: FrameConfig,
    pub code: CodeConfig,
    pub constellation: Constellation,
    pub pattern: PilotPattern,
    /// One interleaver per user.
    pub interleavers: Vec<Interleaver>,
    pub info_len: usize,
}

impl TxChain {
    pub fn new(frame: FrameConfig, code: CodeConfig, seed: u64) -> Result<Self> {
        frame.validate()?;
        code.validate()?;
        let constellation = Constellation::new(frame.bits_per_symbol)?;
        let pattern = build_pilot_pattern(&frame, seed)?;
        let info_len = frame.info_len(&code)?;
        let coded = code.coded_len(info_len);
        Error::check_len("coded bits", frame.coded_len(), coded)?;
        let interleavers = (0..frame.users)
            .map(|n| Interleaver::new(coded, seed::derive(seed, &[seed::tag::INTERLEAVER, n as u64])))
            .collect();
        Ok(Self {
            frame,
            code,
            constellation,
            pattern,
            interleavers,
            info_len,
        })
    }

    /// Draws uniform information bits for every user.
    pub fn random_info<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<u8>> {
        (0..self.frame.users)
            .map(|_| (0..self.info_len).map(|_| rng.random::<bool>() as u8).collect())
            .collect()
    }

    /// Encodes, interleaves and frames the given information bits.
    pub fn transmit(&self, info_bits: Vec<Vec<u8>>) -> Result<Frame> {
        Error::check_len("users", self.frame.users, info_bits.len())?;
        let mut coded = Vec::with_capacity(info_bits.len());
        for (bits, il) in info_bits.iter().zip(&self.interleavers) {
            Error::check_len("information bits", self.info_len, bits.len())?;
            coded.push(il.interleave(&rsc_encode(bits, &self.code)));
        }
        let mut frame = assemble_frame(coded, &self.frame, &self.pattern, &self.constellation)?;
        frame.info_bits = info_bits;
        Ok(frame)
    }
}
