//! Monte Carlo experiments: NMSE sweeps, Gram conditioning, eigenvalue
//! spectra, solver timing and pilot-overhead accounting.
//!
//! NMSE sweeps hold the RIS-BS channel fixed (stream 0 of the master seed)
//! and draw fresh User-RIS channels per trial (stream `trial + 1`). Noise and
//! initial-estimate errors come from keyed streams that do not depend on the
//! sweep point, so neighbouring points see the same underlying draws at a
//! different scale.

use std::collections::HashMap;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{
    sample_channel, sample_ris_bs, sample_user_sequence, ChannelModel, ChannelRealization, RisBsDraw,
};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::estimator::{
    b_min, benchmark_small_timescale, estimate_block, gram_hadamard, piece_conditioning, required_sweeps,
    BenchmarkMode, SolveOptions, RANK_THRESHOLD,
};
use crate::linalg::{fro_norm_sqr, random_vector, CMat};
use crate::rng::{keyed_rng, substream, trial_rng, RIS_BS_STREAM};
use crate::spectral::relative_eigenvalue_ratios;
use crate::timescale::{
    perturb_initial, reconstruct_effective, InitialAccuracy, PiecewiseDecomposition, RankRule, SmallTimescaleChannel,
};
use crate::training::{
    build_schedule, calibrate_sweep_noise, simulate_and_despread, simulate_sweep, sweep_combiners, training_blocks,
};

const KEY_INITIAL_ERROR: u64 = 0x1a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    /// Piecewise beam training with multi-LS.
    Tsp,
    Pwclra,
    Clra,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Tsp, Method::Pwclra, Method::Clra];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tsp => "tsp",
            Method::Pwclra => "pwclra",
            Method::Clra => "clra",
        }
    }

    fn noise_key(self) -> u64 {
        match self {
            Method::Tsp => 0x10,
            Method::Pwclra => 0x11,
            Method::Clra => 0x12,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tsp" => Ok(Method::Tsp),
            "pwclra" => Ok(Method::Pwclra),
            "clra" => Ok(Method::Clra),
            other => Err(Error::Parse(format!("unknown method `{other}`"))),
        }
    }
}

/// Comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Method::from_str)
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(Error::Parse("empty method list".into()));
    }
    Ok(methods)
}

/// How many combiner groups the benchmark sweeps use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum SweepCoverage {
    /// Enough groups to cover every DFT beam, `ceil(N / N_RF)`.
    #[default]
    Full,
    /// Just enough to identify the coefficients, `ceil(rank / N_RF)`.
    Minimum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessOptions {
    pub model: ChannelModel,
    /// Subframes per block for tsp; `None` means `2 B_min`.
    pub b_subframes: Option<usize>,
    pub accuracy: InitialAccuracy,
    pub coverage: SweepCoverage,
    /// Subspace rank used by clra; `None` means `N_RF`.
    pub clra_rank: Option<usize>,
    pub solve: SolveOptions,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            model: ChannelModel::NearField,
            b_subframes: None,
            accuracy: InitialAccuracy::Perfect,
            coverage: SweepCoverage::Full,
            clra_rank: None,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NmseSweep {
    /// Subframe counts `B`; the per-block overhead is `Q B`.
    Overhead(Vec<usize>),
    Snr(Vec<f64>),
    NRf(Vec<usize>),
    Ia(Vec<InitialAccuracy>),
}

impl NmseSweep {
    pub fn variable(&self) -> &'static str {
        match self {
            NmseSweep::Overhead(_) => "overhead",
            NmseSweep::Snr(_) => "snr",
            NmseSweep::NRf(_) => "n_rf",
            NmseSweep::Ia(_) => "ia",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NmseSweep::Overhead(v) => v.len(),
            NmseSweep::Snr(v) => v.len(),
            NmseSweep::NRf(v) => v.len(),
            NmseSweep::Ia(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> String {
        match self {
            NmseSweep::Overhead(v) => v[i].to_string(),
            NmseSweep::Snr(v) => v[i].to_string(),
            NmseSweep::NRf(v) => v[i].to_string(),
            NmseSweep::Ia(v) => v[i].label(),
        }
    }

    fn point(&self, i: usize, base: &SystemConfig, options: &HarnessOptions) -> PointSetup {
        let mut setup = PointSetup {
            config: base.clone(),
            b_subframes: options.b_subframes,
            accuracy: options.accuracy,
        };
        match self {
            NmseSweep::Overhead(v) => setup.b_subframes = Some(v[i]),
            NmseSweep::Snr(v) => setup.config.snr_db = v[i],
            NmseSweep::NRf(v) => setup.config.n_rf = v[i],
            NmseSweep::Ia(v) => setup.accuracy = v[i],
        }
        setup
    }
}

#[derive(Debug, Clone)]
struct PointSetup {
    config: SystemConfig,
    b_subframes: Option<usize>,
    accuracy: InitialAccuracy,
}

/// One raw NMSE row per (sweep point, method, trial).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NmseRow {
    pub sweep: String,
    pub point: String,
    pub method: String,
    pub seed: u64,
    pub trial: usize,
    pub config_hash: String,
    /// Subframes per block (tsp only).
    pub b: Option<usize>,
    /// Pilot symbols spent per small-timescale block.
    pub overhead: usize,
    pub snr_db: f64,
    pub n_rf: usize,
    pub ia: String,
    /// Mean over blocks `1..T` of the per-block NMSE, linear.
    pub nmse: Option<f64>,
    pub nmse_db: Option<f64>,
    /// Set for singular solves and unidentifiable configurations.
    pub flagged: bool,
    /// Degenerate channel draws replaced before this trial.
    pub resampled: usize,
    pub note: String,
}

/// Reduced statistics of one (point, series) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub point: String,
    pub series: String,
    pub count: usize,
    pub mean: Option<f64>,
    pub std_err: Option<f64>,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult<R> {
    pub sweep_variable: String,
    pub values: Vec<String>,
    pub trials: usize,
    pub config: SystemConfig,
    pub rows: Vec<R>,
    pub summary: Vec<SummaryRow>,
}

impl<R: Serialize> ExperimentResult<R> {
    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(&self.rows, out)
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(&self.summary, out)
    }

    pub fn summary_for(&self, point: &str, series: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.point == point && s.series == series)
    }

    /// Means of `series` in sweep order; `None` where a cell has no value.
    pub fn series_means(&self, series: &str) -> Vec<Option<f64>> {
        self.values
            .iter()
            .map(|v| self.summary_for(v, series).and_then(|s| s.mean))
            .collect()
    }
}

fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard error of the mean.
fn mean_and_se(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

/// NMSE cells are reported as `10 log10` of the mean linear NMSE; the
/// standard error is carried to dB to first order.
fn nmse_summary(point: &str, series: &str, rows: &[&NmseRow]) -> SummaryRow {
    let values: Vec<f64> = rows.iter().filter_map(|r| r.nmse).collect();
    let stats = mean_and_se(&values).filter(|(m, _)| *m > 0.0);
    SummaryRow {
        point: point.to_string(),
        series: series.to_string(),
        count: values.len(),
        mean: stats.map(|(m, _)| 10.0 * m.log10()),
        std_err: stats.map(|(m, se)| 10.0 / std::f64::consts::LN_10 * se / m),
        flagged: rows.iter().filter(|r| r.flagged).count(),
    }
}

struct Evaluation {
    nmse: Option<f64>,
    b: Option<usize>,
    overhead: usize,
    flagged: bool,
    note: String,
}

fn nmse(estimate: &CMat, truth: &CMat) -> f64 {
    fro_norm_sqr(&(estimate - truth)) / fro_norm_sqr(truth)
}

/// Decompositions of one trial keyed by (pieces, fixed rank, accuracy label).
/// They do not depend on SNR or `B`, so sweep points share them.
type DecompositionCache = HashMap<(usize, Option<usize>, String), PiecewiseDecomposition>;

fn cached_decomposition<'a>(
    cache: &'a mut DecompositionCache,
    real: &ChannelRealization,
    accuracy: InitialAccuracy,
    q: usize,
    fixed_rank: Option<usize>,
    master: u64,
    trial: usize,
) -> Result<&'a PiecewiseDecomposition> {
    let key = (q, fixed_rank, accuracy.label());
    if !cache.contains_key(&key) {
        let mut ia_rng = keyed_rng(master, KEY_INITIAL_ERROR, trial as u64);
        let h0_hat = perturb_initial(&real.h_eff_seq[0], accuracy, &mut ia_rng)?;
        let rule = fixed_rank.map_or(RankRule::Threshold(RANK_THRESHOLD), RankRule::Fixed);
        cache.insert(key.clone(), PiecewiseDecomposition::new(&h0_hat, q, rule)?);
    }
    Ok(&cache[&key])
}

fn evaluate(
    method: Method,
    setup: &PointSetup,
    real: &ChannelRealization,
    options: &HarnessOptions,
    cache: &mut DecompositionCache,
    master: u64,
    trial: usize,
) -> Result<Evaluation> {
    let cfg = &setup.config;
    let mut rng = keyed_rng(master, method.noise_key(), trial as u64);
    let blocks = training_blocks(real.t_blocks());
    let block_count = blocks.len() as f64;

    match method {
        Method::Tsp => {
            let dec = cached_decomposition(cache, real, setup.accuracy, cfg.q_pieces, None, master, trial)?;
            let minimum = b_min(cfg.m_ris, cfg.q_pieces, cfg.n_rf, &dec.ranks)?;
            let b = setup.b_subframes.unwrap_or(2 * minimum).min(cfg.m_sub());
            let schedule = build_schedule(cfg, b)?;
            let channels: Vec<&CMat> = blocks.clone().map(|t| &real.h_eff_seq[t]).collect();
            let sigma = calibrate_sweep_noise(
                &channels,
                std::slice::from_ref(&schedule.combiner),
                cfg.snr_db,
                cfg.pilot_power,
            )?;
            let mut total = 0.0;
            let mut singular = 0;
            for t in blocks {
                let obs = simulate_and_despread(real, &schedule, t, sigma, cfg.pilot_power, &mut rng)?;
                let (pieces, diags) = estimate_block(dec, &schedule, &obs, options.solve)?;
                singular += diags.iter().filter(|d| !d.unique).count();
                let h_hat = reconstruct_effective(dec, &SmallTimescaleChannel { block: t, pieces })?;
                total += nmse(&h_hat, &real.h_eff_seq[t]);
            }
            let mut note = String::new();
            if b < minimum {
                note = format!("B={b} below B_min={minimum}");
            } else if singular > 0 {
                note = format!("{singular} singular piece solves");
            }
            Ok(Evaluation {
                nmse: Some(total / block_count),
                b: Some(b),
                overhead: cfg.q_pieces * b,
                flagged: singular > 0 || b < minimum,
                note,
            })
        }
        Method::Pwclra | Method::Clra => {
            let (mode, q, fixed_rank) = if method == Method::Pwclra {
                (BenchmarkMode::Pwclra, cfg.q_pieces, None)
            } else {
                let full = cfg.n_bs.min(cfg.m_ris);
                (
                    BenchmarkMode::Clra,
                    1,
                    Some(options.clra_rank.unwrap_or(cfg.n_rf).clamp(1, full)),
                )
            };
            let dec = cached_decomposition(cache, real, setup.accuracy, q, fixed_rank, master, trial)?;
            let max_rank = dec.ranks.iter().copied().max().unwrap_or(1);
            let required = required_sweeps(max_rank, cfg.n_rf);
            let sweeps = match options.coverage {
                SweepCoverage::Full => required.max(cfg.n_bs.div_ceil(cfg.n_rf)),
                SweepCoverage::Minimum => required,
            };
            let combiners = sweep_combiners(cfg.n_bs, cfg.n_rf, cfg.combiner_row_offset, sweeps)?;
            let channels: Vec<&CMat> = blocks.clone().map(|t| &real.h_eff_seq[t]).collect();
            let sigma = calibrate_sweep_noise(&channels, &combiners, cfg.snr_db, cfg.pilot_power)?;
            let mut total = 0.0;
            for t in blocks {
                let obs = simulate_sweep(&real.h_eff_seq[t], &combiners, t, sigma, cfg.pilot_power, &mut rng)?;
                match benchmark_small_timescale(mode, &dec.subspaces, &obs) {
                    Ok(est) => total += nmse(&est.channel, &real.h_eff_seq[t]),
                    Err(Error::InsufficientObservations { required, available }) => {
                        return Ok(Evaluation {
                            nmse: None,
                            b: None,
                            overhead: sweeps * cfg.m_ris,
                            flagged: true,
                            note: format!("needs {required} sweeps, has {available}"),
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(Evaluation {
                nmse: Some(total / block_count),
                b: None,
                overhead: sweeps * cfg.m_ris,
                flagged: false,
                note: String::new(),
            })
        }
    }
}

/// Draws the RIS-BS channel shared by every trial of a sweep.
pub fn sweep_ris_bs(config: &SystemConfig, model: ChannelModel) -> Result<RisBsDraw> {
    sample_ris_bs(model, config, &mut substream(config.seed, RIS_BS_STREAM))
}

/// Redraws allowed for a realization with a degenerate initial user-RIS channel.
pub const MAX_RESAMPLES: usize = 16;

/// Calls `draw` until it yields a non-degenerate realization; also returns
/// how many draws were rejected.
pub fn resample_degenerate<F>(mut draw: F) -> Result<(ChannelRealization, usize)>
where
    F: FnMut() -> Result<ChannelRealization>,
{
    let mut last = None;
    for rejected in 0..=MAX_RESAMPLES {
        match draw() {
            Ok(real) => return Ok((real, rejected)),
            Err(e @ Error::DegenerateChannel { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one draw"))
}

/// Trial `trial` of a sweep: the shared RIS-BS channel with fresh User-RIS
/// draws, plus the number of degenerate draws that were replaced.
pub fn trial_realization(
    config: &SystemConfig,
    model: ChannelModel,
    rb: &RisBsDraw,
    trial: usize,
) -> Result<(ChannelRealization, usize)> {
    let mut rng = trial_rng(config.seed, trial);
    resample_degenerate(|| ChannelRealization::from_parts(rb.clone(), sample_user_sequence(model, config, &mut rng)?))
}

pub fn run_nmse_sweep(
    config: &SystemConfig,
    sweep: &NmseSweep,
    methods: &[Method],
    options: &HarnessOptions,
) -> Result<ExperimentResult<NmseRow>> {
    config.validate()?;
    if config.trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if sweep.is_empty() || methods.is_empty() {
        return Err(Error::InvalidArgument("empty sweep or method list".into()));
    }
    let setups: Vec<PointSetup> = (0..sweep.len()).map(|i| sweep.point(i, config, options)).collect();
    for s in &setups {
        s.config.validate()?;
        if let Some(b) = s.b_subframes {
            if b == 0 || b > s.config.m_sub() {
                return Err(Error::InvalidArgument(format!(
                    "B = {b} outside 1..={}",
                    s.config.m_sub()
                )));
            }
        }
    }
    let rb = sweep_ris_bs(config, options.model)?;
    let master = config.seed;

    let per_trial: Vec<Vec<NmseRow>> = (0..config.trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<NmseRow>> {
            let (real, resampled) = trial_realization(config, options.model, &rb, trial)?;
            let mut rows = Vec::with_capacity(setups.len() * methods.len());
            let mut cache = DecompositionCache::new();
            for (i, setup) in setups.iter().enumerate() {
                for &method in methods {
                    let e = evaluate(method, setup, &real, options, &mut cache, master, trial)?;
                    rows.push(NmseRow {
                        sweep: sweep.variable().to_string(),
                        point: sweep.label(i),
                        method: method.name().to_string(),
                        seed: master,
                        trial,
                        config_hash: setup.config.config_hash(),
                        b: e.b,
                        overhead: e.overhead,
                        snr_db: setup.config.snr_db,
                        n_rf: setup.config.n_rf,
                        ia: setup.accuracy.label(),
                        nmse_db: e.nmse.map(|v| 10.0 * v.log10()),
                        nmse: e.nmse,
                        flagged: e.flagged,
                        resampled,
                        note: e.note,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<NmseRow> = per_trial.into_iter().flatten().collect();
    rows.sort_by_key(|r| {
        let point = (0..sweep.len()).find(|&i| sweep.label(i) == r.point).unwrap_or(0);
        let method = methods.iter().position(|m| m.name() == r.method).unwrap_or(0);
        (point, method, r.trial)
    });

    let values: Vec<String> = (0..sweep.len()).map(|i| sweep.label(i)).collect();
    let mut summary = Vec::new();
    for v in &values {
        for m in methods {
            let cell: Vec<&NmseRow> = rows.iter().filter(|r| &r.point == v && r.method == m.name()).collect();
            summary.push(nmse_summary(v, m.name(), &cell));
        }
    }
    Ok(ExperimentResult {
        sweep_variable: sweep.variable().to_string(),
        values,
        trials: config.trials,
        config: config.clone(),
        rows,
        summary,
    })
}

/// One Gram-conditioning row per (model, B, trial, piece).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionRow {
    pub model: String,
    pub b: usize,
    pub seed: u64,
    pub trial: usize,
    pub config_hash: String,
    pub q: usize,
    /// `log10` condition number, capped for singular matrices.
    pub kappa: f64,
    pub singular: bool,
    pub rank: usize,
    pub resampled: usize,
}

/// Average `kappa(G_q)` over pieces and trials for every (model, B).
///
/// Each trial draws a complete channel (RIS-BS included) from its own stream
/// and uses the exact initial channel.
pub fn run_condition_sweep(
    config: &SystemConfig,
    models: &[ChannelModel],
    b_values: &[usize],
) -> Result<ExperimentResult<ConditionRow>> {
    config.validate()?;
    if let Some(&b) = b_values.iter().find(|&&b| b == 0 || b > config.m_sub()) {
        return Err(Error::InvalidArgument(format!(
            "B = {b} outside 1..={}",
            config.m_sub()
        )));
    }
    let schedules = b_values
        .iter()
        .map(|&b| build_schedule(config, b))
        .collect::<Result<Vec<_>>>()?;
    let hash = config.config_hash();
    let mut rows = Vec::new();
    for &model in models {
        let per_trial: Vec<Vec<ConditionRow>> = (0..config.trials)
            .into_par_iter()
            .map(|trial| -> Result<Vec<ConditionRow>> {
                let mut rng = trial_rng(config.seed, trial);
                let (real, resampled) = resample_degenerate(|| sample_channel(model, config, &mut rng))?;
                let dec = PiecewiseDecomposition::new(
                    &real.h_eff_seq[0],
                    config.q_pieces,
                    RankRule::Threshold(RANK_THRESHOLD),
                )?;
                let mut out = Vec::new();
                for schedule in &schedules {
                    for (q, piece) in dec.pieces.iter().enumerate() {
                        let (cond, rank) = piece_conditioning(piece, schedule)?;
                        out.push(ConditionRow {
                            model: model.name().to_string(),
                            b: schedule.b_subframes,
                            seed: config.seed,
                            trial,
                            config_hash: hash.clone(),
                            q,
                            kappa: cond.capped(),
                            singular: cond.is_singular(),
                            rank,
                            resampled,
                        });
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        rows.extend(per_trial.into_iter().flatten());
    }
    rows.sort_by(|a, b| {
        (models.iter().position(|m| m.name() == a.model), a.b, a.trial, a.q).cmp(&(
            models.iter().position(|m| m.name() == b.model),
            b.b,
            b.trial,
            b.q,
        ))
    });

    let values: Vec<String> = b_values.iter().map(|b| b.to_string()).collect();
    let mut summary = Vec::new();
    for &b in b_values {
        for model in models {
            let cell: Vec<&ConditionRow> = rows.iter().filter(|r| r.b == b && r.model == model.name()).collect();
            let kappas: Vec<f64> = cell.iter().map(|r| r.kappa).collect();
            let stats = mean_and_se(&kappas);
            summary.push(SummaryRow {
                point: b.to_string(),
                series: model.name().to_string(),
                count: cell.len(),
                mean: stats.map(|s| s.0),
                std_err: stats.map(|s| s.1),
                flagged: cell.iter().filter(|r| r.singular).count(),
            });
        }
    }
    Ok(ExperimentResult {
        sweep_variable: "b".into(),
        values,
        trials: config.trials,
        config: config.clone(),
        rows,
        summary,
    })
}

/// One eigenvalue-ratio row per (model, trial, order).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenRow {
    pub model: String,
    pub seed: u64,
    pub trial: usize,
    pub config_hash: String,
    pub n: usize,
    pub zeta: f64,
    pub resampled: usize,
}

/// `zeta_n` curves of `H_0 H_0^H` per model, averaged over trials.
pub fn run_eigen_analysis(config: &SystemConfig, models: &[ChannelModel]) -> Result<ExperimentResult<EigenRow>> {
    config.validate()?;
    let hash = config.config_hash();
    let mut rows = Vec::new();
    for &model in models {
        let per_trial: Vec<Vec<EigenRow>> = (0..config.trials)
            .into_par_iter()
            .map(|trial| -> Result<Vec<EigenRow>> {
                let mut rng = trial_rng(config.seed, trial);
                let (real, resampled) = resample_degenerate(|| sample_channel(model, config, &mut rng))?;
                let report = relative_eigenvalue_ratios(&real.h_eff_seq[0])?;
                Ok(report
                    .ratios
                    .iter()
                    .enumerate()
                    .map(|(i, &zeta)| EigenRow {
                        model: model.name().to_string(),
                        seed: config.seed,
                        trial,
                        config_hash: hash.clone(),
                        n: i + 1,
                        zeta,
                        resampled,
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        rows.extend(per_trial.into_iter().flatten());
    }
    let values: Vec<String> = (1..=config.n_bs).map(|n| n.to_string()).collect();
    let mut summary = Vec::new();
    for n in 1..=config.n_bs {
        for model in models {
            let zetas: Vec<f64> = rows
                .iter()
                .filter(|r| r.n == n && r.model == model.name())
                .map(|r| r.zeta)
                .collect();
            let stats = mean_and_se(&zetas);
            summary.push(SummaryRow {
                point: n.to_string(),
                series: model.name().to_string(),
                count: zetas.len(),
                mean: stats.map(|s| s.0),
                std_err: stats.map(|s| s.1),
                flagged: 0,
            });
        }
    }
    Ok(ExperimentResult {
        sweep_variable: "n".into(),
        values,
        trials: config.trials,
        config: config.clone(),
        rows,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeRow {
    pub m: usize,
    pub q: usize,
    pub b: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Fastest batch average of one complete multi-LS solve (all pieces).
    pub seconds: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeOptions {
    pub batches: usize,
    /// Each batch repeats the solve until it has run at least this long.
    pub min_batch_seconds: f64,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self {
            batches: 5,
            min_batch_seconds: 0.02,
        }
    }
}

/// Times the Cholesky solve of every `G_q` for each `(M, Q)` cell at `B = 2 B_min`.
///
/// Only the solve is timed; channel synthesis and Gram assembly are not.
/// A Gram matrix that fails Cholesky is solved by LU instead.
pub fn run_runtime_table(
    config: &SystemConfig,
    m_values: &[usize],
    q_values: &[usize],
    options: RuntimeOptions,
) -> Result<ExperimentResult<RuntimeRow>> {
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for &m in m_values {
        for &q in q_values {
            if q == 0 || m % q != 0 {
                return Err(Error::InvalidArgument(format!("Q = {q} does not divide M = {m}")));
            }
            let cfg = SystemConfig {
                m_ris: m,
                q_pieces: q,
                ..config.clone()
            };
            cfg.validate()?;
            let mut rng = substream(cfg.seed, RIS_BS_STREAM);
            let (real, _) = resample_degenerate(|| sample_channel(ChannelModel::NearField, &cfg, &mut rng))?;
            let dec = PiecewiseDecomposition::new(&real.h_eff_seq[0], q, RankRule::Threshold(RANK_THRESHOLD))?;
            let b = (2 * b_min(m, q, cfg.n_rf, &dec.ranks)?).min(cfg.m_sub());
            let schedule = build_schedule(&cfg, b)?;
            let grams: Vec<CMat> = dec
                .pieces
                .iter()
                .map(|p| gram_hadamard(&(&schedule.combiner * p), &schedule.subframe_vectors))
                .collect::<Result<_>>()?;
            let rhs: Vec<_> = grams.iter().map(|g| random_vector(g.nrows(), &mut rng)).collect();

            let solve_all = || {
                let mut sink = 0.0;
                for (g, r) in grams.iter().zip(&rhs) {
                    match g.clone().cholesky() {
                        Some(ch) => sink += ch.solve(r)[0].re,
                        None => sink += g.clone().lu().solve(r).map_or(0.0, |d| d[0].re),
                    }
                }
                std::hint::black_box(sink);
            };
            let mut reps = 1usize;
            loop {
                let start = Instant::now();
                for _ in 0..reps {
                    solve_all();
                }
                if start.elapsed().as_secs_f64() >= options.min_batch_seconds || reps >= 1 << 24 {
                    break;
                }
                reps *= 2;
            }
            let mut best = f64::INFINITY;
            for _ in 0..options.batches.max(1) {
                let start = Instant::now();
                for _ in 0..reps {
                    solve_all();
                }
                best = best.min(start.elapsed().as_secs_f64() / reps as f64);
            }
            values.push(format!("M={m},Q={q}"));
            rows.push(RuntimeRow {
                m,
                q,
                b,
                seed: cfg.seed,
                config_hash: cfg.config_hash(),
                seconds: best,
                repetitions: reps,
            });
        }
    }
    let summary = rows
        .iter()
        .map(|r| SummaryRow {
            point: format!("M={},Q={}", r.m, r.q),
            series: "multi-ls".into(),
            count: 1,
            mean: Some(r.seconds),
            std_err: None,
            flagged: 0,
        })
        .collect();
    Ok(ExperimentResult {
        sweep_variable: "m,q".into(),
        values,
        trials: 1,
        config: config.clone(),
        rows,
        summary,
    })
}

/// Checks the runtime law: slower with larger `M`, faster with larger `Q`.
pub fn runtime_law_violations(result: &ExperimentResult<RuntimeRow>) -> Vec<String> {
    let mut out = Vec::new();
    let time = |m: usize, q: usize| result.rows.iter().find(|r| r.m == m && r.q == q).map(|r| r.seconds);
    let mut ms: Vec<usize> = result.rows.iter().map(|r| r.m).collect();
    let mut qs: Vec<usize> = result.rows.iter().map(|r| r.q).collect();
    ms.sort_unstable();
    ms.dedup();
    qs.sort_unstable();
    qs.dedup();
    for &q in &qs {
        for w in ms.windows(2) {
            if let (Some(a), Some(b)) = (time(w[0], q), time(w[1], q)) {
                if b <= a {
                    out.push(format!(
                        "Q={q}: M={} took {b:.3e}s, not above M={} at {a:.3e}s",
                        w[1], w[0]
                    ));
                }
            }
        }
    }
    for &m in &ms {
        for w in qs.windows(2) {
            if let (Some(a), Some(b)) = (time(m, w[0]), time(m, w[1])) {
                if b >= a {
                    out.push(format!(
                        "M={m}: Q={} took {b:.3e}s, not below Q={} at {a:.3e}s",
                        w[1], w[0]
                    ));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    pub method: String,
    /// Pilots of the initial block, `Q ceil(N / N_RF) + M`.
    pub initial: usize,
    /// Minimum pilots per later block.
    pub per_block: usize,
    /// Pilots per later block as simulated by the harness.
    pub per_block_simulated: usize,
    pub b: Option<usize>,
}

/// Pilot accounting per method. `b_subframes` applies to tsp only.
pub fn report_overhead(
    config: &SystemConfig,
    method: Method,
    b_subframes: usize,
    options: &HarnessOptions,
) -> Result<OverheadReport> {
    config.validate()?;
    let initial = config.q_pieces * config.n_bs.div_ceil(config.n_rf) + config.m_ris;
    let beams = config.n_bs.div_ceil(config.n_rf);
    let (per_block, simulated, b) = match method {
        Method::Tsp => (
            config.q_pieces * b_subframes,
            config.q_pieces * b_subframes,
            Some(b_subframes),
        ),
        Method::Pwclra => {
            let min = config.m_ris;
            let sim = match options.coverage {
                SweepCoverage::Full => {
                    beams.max(required_sweeps(config.m_sub().min(config.n_bs), config.n_rf)) * config.m_ris
                }
                SweepCoverage::Minimum => required_sweeps(config.m_sub().min(config.n_bs), config.n_rf) * config.m_ris,
            };
            (min, sim, None)
        }
        Method::Clra => {
            let rank = options.clra_rank.unwrap_or(config.n_rf);
            let min = required_sweeps(rank, config.n_rf) * config.m_ris;
            let sim = match options.coverage {
                SweepCoverage::Full => beams.max(required_sweeps(rank, config.n_rf)) * config.m_ris,
                SweepCoverage::Minimum => min,
            };
            (min, sim, None)
        }
    };
    Ok(OverheadReport {
        method: method.name().to_string(),
        initial,
        per_block,
        per_block_simulated: simulated,
        b,
    })
}

/// Schema check: every NMSE row has a finite value unless it is flagged.
pub fn nmse_schema_violations(result: &ExperimentResult<NmseRow>) -> Vec<String> {
    result
        .rows
        .iter()
        .filter(|r| !r.flagged && !r.nmse.is_some_and(f64::is_finite))
        .map(|r| format!("{} {}={} trial {}: missing NMSE", r.method, r.sweep, r.point, r.trial))
        .collect()
}

/// Cells whose mean rises by more than one standard error along the sweep.
/// Cells holding flagged rows are left out.
pub fn monotone_violations(result: &ExperimentResult<NmseRow>, series: &str) -> Vec<String> {
    let cells: Vec<Option<&SummaryRow>> = result.values.iter().map(|v| result.summary_for(v, series)).collect();
    let mut out = Vec::new();
    for w in cells.windows(2) {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            if a.flagged > 0 || b.flagged > 0 {
                continue;
            }
            if let (Some(ma), Some(mb)) = (a.mean, b.mean) {
                let tol = a.std_err.unwrap_or(0.0).max(b.std_err.unwrap_or(0.0));
                if mb > ma + tol {
                    out.push(format!(
                        "{series}: {} -> {} rises {ma:.2} -> {mb:.2} dB (tol {tol:.2})",
                        a.point, b.point
                    ));
                }
            }
        }
    }
    out
}

/// `B_min` assuming every piece has full rank `min(N, M_sub)`.
pub fn nominal_b_min(config: &SystemConfig) -> Result<usize> {
    let rank = config.n_bs.min(config.m_sub());
    b_min(config.m_ris, config.q_pieces, config.n_rf, &vec![rank; config.q_pieces])
}

/// Default subframe grid: multiples of the nominal `B_min` up to `M_sub`.
pub fn default_b_grid(config: &SystemConfig) -> Result<Vec<usize>> {
    let base = nominal_b_min(config)?;
    let mut grid: Vec<usize> = [2, 3, 4, 6, 8, 12, 16]
        .iter()
        .map(|&k| k * base / 2)
        .filter(|&b| b >= base && b <= config.m_sub())
        .collect();
    grid.dedup();
    Ok(grid)
}

/// Phase-transition ordering of the Gram conditioning around `B_min`.
///
/// Near-field and Rayleigh drop by at least three decades from `B = 1` to
/// `B_min`; the sparse channel stays three decades above the near-field one.
pub fn condition_violations(result: &ExperimentResult<ConditionRow>, b_min: usize) -> Vec<String> {
    let mut out = Vec::new();
    let nf_at_min = mean_kappa(result, ChannelModel::NearField, b_min);
    for model in [ChannelModel::NearField, ChannelModel::Rayleigh] {
        if let (Some(k1), Some(k2)) = (mean_kappa(result, model, 1), mean_kappa(result, model, b_min)) {
            if k1 - k2 < 3.0 {
                out.push(format!("{}: kappa {k1:.2} at B=1, {k2:.2} at B={b_min}", model.name()));
            }
        }
    }
    if let (Some(ks), Some(kn)) = (mean_kappa(result, ChannelModel::Sparse, b_min), nf_at_min) {
        if ks - kn < 3.0 {
            out.push(format!(
                "sparse kappa {ks:.2} within three decades of near-field {kn:.2} at B={b_min}"
            ));
        }
    }
    out
}

/// Per-trial rank structure of the eigenvalue spectra at `1e-6` relative.
///
/// The sparse channel stays at or below `L_RB + 1`; near-field and Rayleigh
/// keep at least `N / 2` eigenvalues.
pub fn eigen_structure_violations(result: &ExperimentResult<EigenRow>) -> Vec<String> {
    let cfg = &result.config;
    let threshold = -6.0;
    let mut out = Vec::new();
    for model in ChannelModel::ALL {
        for trial in 0..result.trials {
            let rows: Vec<&EigenRow> = result
                .rows
                .iter()
                .filter(|r| r.model == model.name() && r.trial == trial)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let count = rows.iter().filter(|r| r.zeta >= threshold).count();
            let ok = match model {
                ChannelModel::Sparse => count <= cfg.nlos_paths_rb + 1,
                _ => count >= cfg.n_bs / 2,
            };
            if !ok {
                out.push(format!(
                    "{} trial {trial}: {count} eigenvalues above 1e-6",
                    model.name()
                ));
            }
        }
    }
    out
}

/// Average capped `kappa` of one (model, B) cell.
pub fn mean_kappa(result: &ExperimentResult<ConditionRow>, model: ChannelModel, b: usize) -> Option<f64> {
    result.summary_for(&b.to_string(), model.name()).and_then(|s| s.mean)
}
