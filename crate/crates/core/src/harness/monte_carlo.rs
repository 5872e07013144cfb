use std::io::Write;
use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::metrics::{bit_errors, nmse, MetricRecord, CSV_HEADER};
use super::mfb::mfb_pcsi;
use super::receiver::{run_turbo_receiver, ReceiverConfig};
use super::{SimConfig, Variant};
use crate::channel_model::ChannelRealization;
use crate::link::{ebn0_to_symbol_noise, synthesize_rx};
use crate::seed::{self, tag};
use crate::txchain::TxChain;
use crate::{Error, Result};

/// How trials are scheduled. Results are identical for every choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Trials spread over a dedicated pool; `0` workers means one per core.
    #[cfg(feature = "parallel")]
    Parallel { workers: usize },
}

impl Execution {
    /// Parallel when the feature is on, sequential otherwise.
    pub fn from_workers(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            if workers != 1 {
                return Execution::Parallel { workers };
            }
        }
        let _ = workers;
        Execution::Sequential
    }
}

/// One cell of one trial: a `(variant, Eb/N0 index, iteration)` result.
#[derive(Debug, Clone, PartialEq)]
struct Cell {
    variant: Variant,
    ebn0_idx: usize,
    turbo_iter: usize,
    nmse: f64,
    errors: usize,
    bits: usize,
    elapsed_s: f64,
}

/// All cells of one trial in `(variant, Eb/N0, iteration)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    cells: Vec<Cell>,
}

impl TrialOutcome {
    /// `(variant, Eb/N0 index, iteration, nmse, bit errors, bits)` per cell.
    pub fn cells(&self) -> impl Iterator<Item = (Variant, usize, usize, f64, usize, usize)> + '_ {
        self.cells
            .iter()
            .map(|c| (c.variant, c.ebn0_idx, c.turbo_iter, c.nmse, c.errors, c.bits))
    }
}

/// Runs trial `trial` of `cfg`: fresh channel and bits, then every Eb/N0
/// point and variant on the same draws.
pub fn run_trial(cfg: &SimConfig, chain: &TxChain, trial: u64) -> Result<TrialOutcome> {
    let ch_cfg = cfg.channel()?;
    let pdp = ch_cfg.pdp.clone();
    let channel = ChannelRealization::generate(&mut seed::rng(cfg.seed, &[trial, tag::CHANNEL]), &ch_cfg)?;
    let info = chain.random_info(&mut seed::rng(cfg.seed, &[trial, tag::BITS]));
    let frame = chain.transmit(info)?;
    let truth: Vec<u8> = frame.info_bits.concat();
    let eta = cfg.efficiency();

    let mut cells = Vec::new();
    for (ei, &ebn0) in cfg.eb_n0_db.iter().enumerate() {
        let noise = ebn0_to_symbol_noise(ebn0, &chain.frame, channel.antennas, cfg.code_rate, eta)?;
        let mut rng = seed::rng(cfg.seed, &[trial, tag::NOISE, ei as u64]);
        let rx = synthesize_rx(&channel, &frame.x, &chain.frame, noise, &mut rng)?;
        for &variant in &cfg.variants {
            let start = Instant::now();
            match variant.receiver() {
                Some((detector, prior)) => {
                    let rc = ReceiverConfig {
                        detector,
                        prior,
                        correction: cfg.correction,
                        metric: cfg.metric,
                        turbo_iters: cfg.turbo_iters,
                        first_inner: cfg.first_inner,
                        later_inner: cfg.later_inner,
                        taps: cfg.taps,
                        indexing: cfg.indexing,
                    };
                    let snaps = run_turbo_receiver(chain, &rx, &rc, Some(&pdp))?;
                    let per_iter = start.elapsed().as_secs_f64() / snaps.len() as f64;
                    for (i, s) in snaps.iter().enumerate() {
                        cells.push(Cell {
                            variant,
                            ebn0_idx: ei,
                            turbo_iter: i + 1,
                            nmse: nmse(&channel.h, &s.h_mean, cfg.taps)?,
                            errors: bit_errors(&truth, &s.info_bits.concat())?,
                            bits: truth.len(),
                            elapsed_s: per_iter,
                        });
                    }
                }
                None => {
                    let bits = mfb_pcsi(chain, &frame, &rx, &channel, cfg.metric)?;
                    cells.push(Cell {
                        variant,
                        ebn0_idx: ei,
                        turbo_iter: 0,
                        nmse: 0.0,
                        errors: bit_errors(&truth, &bits.concat())?,
                        bits: truth.len(),
                        elapsed_s: start.elapsed().as_secs_f64(),
                    });
                }
            }
        }
    }
    Ok(TrialOutcome { cells })
}

fn run_all(cfg: &SimConfig, chain: &TxChain, exec: Execution) -> Result<Vec<TrialOutcome>> {
    let trials = cfg.trials as u64;
    match exec {
        Execution::Sequential => (0..trials).map(|t| run_trial(cfg, chain, t)).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel { workers } => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
            pool.install(|| {
                (0..trials)
                    .into_par_iter()
                    .map(|t| run_trial(cfg, chain, t))
                    .collect()
            })
        }
    }
}

/// Runs `cfg.trials` independent trials and aggregates them per
/// `(variant, Eb/N0, iteration)`: NMSE is the mean over trials, BER the
/// pooled error rate. Reduction runs in trial order, so the records do not
/// depend on the execution mode.
pub fn monte_carlo(cfg: &SimConfig, exec: Execution) -> Result<Vec<MetricRecord>> {
    cfg.validate()?;
    let chain = TxChain::new(cfg.frame(), cfg.code(), cfg.seed)?;
    let outcomes = run_all(cfg, &chain, exec)?;
    let first = outcomes.first().ok_or_else(|| Error::config("no trials"))?;
    let mut records: Vec<MetricRecord> = first
        .cells
        .iter()
        .map(|c| MetricRecord {
            variant: c.variant,
            eb_n0_db: cfg.eb_n0_db[c.ebn0_idx],
            turbo_iter: c.turbo_iter,
            nmse: 0.0,
            ber: 0.0,
            frames: 0,
            bits: 0,
            seed: cfg.seed,
            elapsed_s: 0.0,
        })
        .collect();
    let mut errors = vec![0usize; records.len()];
    for outcome in &outcomes {
        Error::check_len("trial cells", records.len(), outcome.cells.len())?;
        for ((rec, err), cell) in records.iter_mut().zip(errors.iter_mut()).zip(&outcome.cells) {
            rec.nmse += cell.nmse;
            rec.frames += 1;
            rec.bits += cell.bits;
            rec.elapsed_s += cell.elapsed_s;
            *err += cell.errors;
        }
    }
    for (rec, err) in records.iter_mut().zip(errors) {
        rec.nmse /= rec.frames as f64;
        rec.ber = if rec.bits == 0 { 0.0 } else { err as f64 / rec.bits as f64 };
    }
    Ok(records)
}

pub fn write_csv<W: Write>(records: &[MetricRecord], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}
