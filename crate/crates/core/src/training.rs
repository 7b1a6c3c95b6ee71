//! Piecewise reflection schedules, the analog combiner, pilot simulation and
//! de-spreading.
//!
//! Subframe `b` spends `Q` pilot slots. In slot `i` the RIS applies
//!
//! ```text
//! nu_[b,i](M_q) = sqrt(Q) * Phi_Q(q, i) * v_b
//! ```
//!
//! and the BS receives `y = W (H_t nu s + n)`. Dividing by the pilot `s` and
//! de-spreading with `Phi_Q^H` separates the pieces:
//! `z_[b,q,t] = W H_[q,t] v_b + u_[b,q,t]`.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{
    dft_matrix, fro_norm_sqr, hadamard_matrix, random_matrix, random_vector, vec_norm_sqr, CMat, CVec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Spreading {
    #[default]
    Dft,
    /// Only for power-of-two `Q`.
    Hadamard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionSchedule {
    /// `Q x Q` unitary spreading matrix.
    pub phi_q: CMat,
    /// `B` unit-modulus vectors of length `M_sub`.
    pub subframe_vectors: Vec<CVec>,
    /// `N_RF x N` combiner with orthonormal rows.
    pub combiner: CMat,
    pub b_subframes: usize,
}

impl ReflectionSchedule {
    pub fn q_pieces(&self) -> usize {
        self.phi_q.nrows()
    }

    pub fn m_sub(&self) -> usize {
        self.subframe_vectors.first().map_or(0, |v| v.len())
    }

    pub fn m_ris(&self) -> usize {
        self.q_pieces() * self.m_sub()
    }

    /// Full-length reflection vector of slot `i` in subframe `b`.
    pub fn reflection_vector(&self, b: usize, i: usize) -> CVec {
        let q_pieces = self.q_pieces();
        let m_sub = self.m_sub();
        let v = &self.subframe_vectors[b];
        let root_q = (q_pieces as f64).sqrt();
        let mut out = CVec::zeros(q_pieces * m_sub);
        for q in 0..q_pieces {
            let w = self.phi_q[(q, i)] * root_q;
            out.rows_mut(q * m_sub, m_sub).copy_from(&(v * w));
        }
        out
    }

    /// Every reflection vector in slot order `(b, i)`.
    pub fn all_reflections(&self) -> Vec<CVec> {
        (0..self.b_subframes)
            .flat_map(|b| (0..self.q_pieces()).map(move |i| (b, i)))
            .map(|(b, i)| self.reflection_vector(b, i))
            .collect()
    }

    /// Pilot slots per block, `Q * B`.
    pub fn pilot_slots(&self) -> usize {
        self.q_pieces() * self.b_subframes
    }

    /// CSV of every reflection vector, columns `b,i,m,re,im`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["b", "i", "m", "re", "im"])?;
        for b in 0..self.b_subframes {
            for i in 0..self.q_pieces() {
                for (m, z) in self.reflection_vector(b, i).iter().enumerate() {
                    w.write_record([
                        b.to_string(),
                        i.to_string(),
                        m.to_string(),
                        format!("{:.17e}", z.re),
                        format!("{:.17e}", z.im),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `n_rf` consecutive rows of the unitary `n`-point DFT, starting at `offset` (wrapping).
pub fn dft_combiner(n: usize, n_rf: usize, offset: usize) -> Result<CMat> {
    if n_rf == 0 || n_rf > n {
        return Err(Error::InvalidArgument(format!("{n_rf} RF chains for {n} antennas")));
    }
    let f = dft_matrix(n, 1.0 / (n as f64).sqrt());
    Ok(CMat::from_fn(n_rf, n, |r, c| f[((offset + r) % n, c)]))
}

/// Unit-modulus DFT column `b` on `len` points: `exp(-j 2 pi m b / len)`.
pub fn dft_column(len: usize, b: usize) -> CVec {
    CVec::from_fn(len, |m, _| {
        let phase = -2.0 * std::f64::consts::PI * ((m * b) % len) as f64 / len as f64;
        Complex64::from_polar(1.0, phase)
    })
}

pub fn build_schedule(config: &SystemConfig, b_subframes: usize) -> Result<ReflectionSchedule> {
    build_schedule_with(config, b_subframes, Spreading::Dft)
}

pub fn build_schedule_with(
    config: &SystemConfig,
    b_subframes: usize,
    spreading: Spreading,
) -> Result<ReflectionSchedule> {
    config.validate()?;
    let q = config.q_pieces;
    let m_sub = config.m_sub();
    if b_subframes == 0 || b_subframes > m_sub {
        return Err(Error::InvalidArgument(format!("B = {b_subframes} outside 1..={m_sub}")));
    }
    let scale = 1.0 / (q as f64).sqrt();
    let phi_q = match spreading {
        Spreading::Dft => dft_matrix(q, scale),
        Spreading::Hadamard => hadamard_matrix(q, scale)
            .ok_or_else(|| Error::InvalidArgument(format!("no Hadamard spreading for Q = {q}")))?,
    };
    Ok(ReflectionSchedule {
        phi_q,
        subframe_vectors: (0..b_subframes).map(|b| dft_column(m_sub, b)).collect(),
        combiner: dft_combiner(config.n_bs, config.n_rf, config.combiner_row_offset)?,
        b_subframes,
    })
}

/// Blocks whose pilots enter the SNR average: the small-timescale blocks
/// `1..T`, or block 0 alone when `T = 1`.
pub fn training_blocks(t_blocks: usize) -> std::ops::Range<usize> {
    if t_blocks <= 1 {
        0..t_blocks
    } else {
        1..t_blocks
    }
}

/// Noise standard deviation per BS antenna that makes the average pilot SNR
/// `P avg ||W H_t nu||^2 / (sigma^2 ||W||_F^2)` equal `snr_db`.
pub fn calibrate_noise(
    realization: &ChannelRealization,
    schedule: &ReflectionSchedule,
    snr_db: f64,
    pilot_power: f64,
) -> Result<f64> {
    let blocks: Vec<&CMat> = training_blocks(realization.t_blocks())
        .map(|t| &realization.h_eff_seq[t])
        .collect();
    calibrate_noise_for(
        &blocks,
        &schedule.combiner,
        &schedule.all_reflections(),
        snr_db,
        pilot_power,
    )
}

/// [`calibrate_noise`] for an arbitrary set of channels, combiner and reflections.
pub fn calibrate_noise_for(
    channels: &[&CMat],
    combiner: &CMat,
    reflections: &[CVec],
    snr_db: f64,
    pilot_power: f64,
) -> Result<f64> {
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if !snr_db.is_finite() || !(pilot_power > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "SNR {snr_db} dB with pilot power {pilot_power}"
        )));
    }
    if channels.is_empty() || reflections.is_empty() {
        return Err(Error::InvalidArgument("no pilot slots to calibrate over".into()));
    }
    let mut total = 0.0;
    for h in channels {
        let wh = combiner * *h;
        for nu in reflections {
            total += vec_norm_sqr(&(&wh * nu));
        }
    }
    let signal = total / (channels.len() * reflections.len()) as f64;
    if signal <= 0.0 {
        return Err(Error::ZeroSignal);
    }
    let sigma_sq = pilot_power * signal / (fro_norm_sqr(combiner) * 10f64.powf(snr_db / 10.0));
    Ok(sigma_sq.sqrt())
}

/// De-spread observations of one block, indexed `[b][q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockObservations {
    pub block: usize,
    pub z: Vec<Vec<CVec>>,
    /// The noise part of `z`, kept for error-bound diagnostics.
    pub noise: Vec<Vec<CVec>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservations {
    pub blocks: Vec<BlockObservations>,
    pub noise_sigma: f64,
    pub pilot_power: f64,
}

/// Raw per-slot quantities of one block, indexed `[b][i]`, before de-spreading.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSignals {
    /// `y / s`.
    pub y_tilde: Vec<Vec<CVec>>,
    /// `W n / s`.
    pub noise_tilde: Vec<Vec<CVec>>,
}

/// Receives every pilot slot of block `t` with fresh noise.
pub fn simulate_slots<R: Rng + ?Sized>(
    h_t: &CMat,
    schedule: &ReflectionSchedule,
    sigma: f64,
    pilot_power: f64,
    rng: &mut R,
) -> Result<SlotSignals> {
    check_dims(h_t, schedule)?;
    let wh = &schedule.combiner * h_t;
    let s = Complex64::new(pilot_power.sqrt(), 0.0);
    let n_bs = h_t.nrows();
    let mut y_tilde = Vec::with_capacity(schedule.b_subframes);
    let mut noise_tilde = Vec::with_capacity(schedule.b_subframes);
    for b in 0..schedule.b_subframes {
        let mut ys = Vec::with_capacity(schedule.q_pieces());
        let mut ns = Vec::with_capacity(schedule.q_pieces());
        for i in 0..schedule.q_pieces() {
            let clean = &wh * schedule.reflection_vector(b, i);
            let noise = if sigma > 0.0 {
                &schedule.combiner * random_vector(n_bs, rng) * Complex64::new(sigma, 0.0) / s
            } else {
                CVec::zeros(clean.len())
            };
            ys.push(clean + &noise);
            ns.push(noise);
        }
        y_tilde.push(ys);
        noise_tilde.push(ns);
    }
    Ok(SlotSignals { y_tilde, noise_tilde })
}

/// `Z = (1/sqrt(Q)) [y_1 ... y_Q] Phi_Q^H`, returned column by column.
pub fn despread(slots: &[CVec], phi_q: &CMat) -> Vec<CVec> {
    let q_pieces = phi_q.nrows();
    let norm = 1.0 / (q_pieces as f64).sqrt();
    (0..q_pieces)
        .map(|q| {
            let mut acc = CVec::zeros(slots[0].len());
            for (i, y) in slots.iter().enumerate() {
                acc.axpy(phi_q[(q, i)].conj() * norm, y, Complex64::new(1.0, 0.0));
            }
            acc
        })
        .collect()
}

/// Simulates block `t` and de-spreads it into piecewise observations.
pub fn simulate_and_despread<R: Rng + ?Sized>(
    realization: &ChannelRealization,
    schedule: &ReflectionSchedule,
    t: usize,
    sigma: f64,
    pilot_power: f64,
    rng: &mut R,
) -> Result<BlockObservations> {
    let h_t = realization
        .h_eff_seq
        .get(t)
        .ok_or_else(|| Error::InvalidArgument(format!("block {t} of {}", realization.t_blocks())))?;
    observe_block(h_t, schedule, t, sigma, pilot_power, rng)
}

/// [`simulate_and_despread`] on an explicit effective channel.
pub fn observe_block<R: Rng + ?Sized>(
    h_t: &CMat,
    schedule: &ReflectionSchedule,
    t: usize,
    sigma: f64,
    pilot_power: f64,
    rng: &mut R,
) -> Result<BlockObservations> {
    let slots = simulate_slots(h_t, schedule, sigma, pilot_power, rng)?;
    Ok(BlockObservations {
        block: t,
        z: slots.y_tilde.iter().map(|ys| despread(ys, &schedule.phi_q)).collect(),
        noise: slots
            .noise_tilde
            .iter()
            .map(|ns| despread(ns, &schedule.phi_q))
            .collect(),
    })
}

fn check_dims(h_t: &CMat, schedule: &ReflectionSchedule) -> Result<()> {
    if h_t.nrows() != schedule.combiner.ncols() || h_t.ncols() != schedule.m_ris() {
        return Err(Error::DimensionMismatch(format!(
            "channel is {}x{}, schedule expects {}x{}",
            h_t.nrows(),
            h_t.ncols(),
            schedule.combiner.ncols(),
            schedule.m_ris()
        )));
    }
    Ok(())
}

/// Full-aperture sweep used by the low-rank benchmarks: every column of the
/// unit-modulus `M`-point DFT, once per combiner.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepObservations {
    pub block: usize,
    pub combiners: Vec<CMat>,
    /// Per combiner, `Y V^H / M`, an `N_RF x M` noisy copy of `W H_t`.
    pub y_hat: Vec<CMat>,
}

/// `sweeps` combiners taking consecutive DFT row groups after `offset`.
pub fn sweep_combiners(n: usize, n_rf: usize, offset: usize, sweeps: usize) -> Result<Vec<CMat>> {
    (0..sweeps).map(|k| dft_combiner(n, n_rf, offset + k * n_rf)).collect()
}

/// Unit-modulus reflections of one full sweep.
pub fn sweep_reflections(m_ris: usize) -> Vec<CVec> {
    (0..m_ris).map(|m| dft_column(m_ris, m)).collect()
}

/// Noise level for a full sweep at `snr_db`.
///
/// A DFT sweep satisfies `sum_m f_m f_m^H = M I`, so the per-slot signal power
/// averaged over the sweep is `||W H||_F^2`; this avoids forming all `M` slots.
pub fn calibrate_sweep_noise(channels: &[&CMat], combiners: &[CMat], snr_db: f64, pilot_power: f64) -> Result<f64> {
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if !snr_db.is_finite() || !(pilot_power > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "SNR {snr_db} dB with pilot power {pilot_power}"
        )));
    }
    if channels.is_empty() || combiners.is_empty() {
        return Err(Error::InvalidArgument("no pilot slots to calibrate over".into()));
    }
    let mut signal = 0.0;
    let mut noise_gain = 0.0;
    for w in combiners {
        noise_gain += fro_norm_sqr(w);
        for h in channels {
            signal += fro_norm_sqr(&(w * *h));
        }
    }
    signal /= (channels.len() * combiners.len()) as f64;
    noise_gain /= combiners.len() as f64;
    if signal <= 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok((pilot_power * signal / (noise_gain * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// Simulates one full sweep per combiner and returns `Y V^H / M`.
///
/// The slot noise `W n_m / s` enters as `W N V^H / (M s)`; with `N` i.i.d.
/// and `V / sqrt(M)` unitary, `N V^H / sqrt(M)` is again i.i.d., so the
/// de-swept noise is drawn directly as `W N' / (s sqrt(M))`.
pub fn simulate_sweep<R: Rng + ?Sized>(
    h_t: &CMat,
    combiners: &[CMat],
    t: usize,
    sigma: f64,
    pilot_power: f64,
    rng: &mut R,
) -> Result<SweepObservations> {
    let m = h_t.ncols();
    let n = h_t.nrows();
    let scale = Complex64::new(sigma / (pilot_power * m as f64).sqrt(), 0.0);
    let mut y_hat = Vec::with_capacity(combiners.len());
    for w in combiners {
        if w.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "combiner has {} columns for {n} antennas",
                w.ncols()
            )));
        }
        let mut y = w * h_t;
        if sigma > 0.0 {
            y += w * random_matrix(n, m, rng) * scale;
        }
        y_hat.push(y);
    }
    Ok(SweepObservations {
        block: t,
        combiners: combiners.to_vec(),
        y_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::assemble_channels;
    use crate::linalg::{cplx, random_matrix};
    use crate::rng::seeded;

    fn tiny() -> SystemConfig {
        SystemConfig {
            n_bs: 8,
            m_ris: 16,
            n_rf: 4,
            q_pieces: 4,
            t_blocks: 2,
            ..SystemConfig::desk()
        }
    }

    #[test]
    fn schedule_invariants() {
        let cfg = SystemConfig::desk();
        let s = build_schedule(&cfg, 4).unwrap();
        let q = cfg.q_pieces as f64;
        assert!((&s.phi_q * s.phi_q.adjoint() - CMat::identity(8, 8)).norm() < 1e-10);
        assert!(s.phi_q.iter().all(|z| (z.norm() - 1.0 / q.sqrt()).abs() < 1e-12));
        for (a, va) in s.subframe_vectors.iter().enumerate() {
            assert!(va.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            for vb in &s.subframe_vectors[a + 1..] {
                assert!(va.dotc(vb).norm() < 1e-10);
            }
        }
        let n = cfg.n_bs as f64;
        assert!(s.combiner.iter().all(|z| (z.norm() - 1.0 / n.sqrt()).abs() < 1e-12));
        assert!((&s.combiner * s.combiner.adjoint() - CMat::identity(8, 8)).norm() < 1e-10);
        for nu in s.all_reflections() {
            assert!(nu.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn reflection_blocks_follow_construction() {
        let cfg = tiny();
        let s = build_schedule(&cfg, 3).unwrap();
        let nu = s.reflection_vector(2, 1);
        for q in 0..4 {
            for m in 0..4 {
                let expect = s.phi_q[(q, 1)] * 2.0 * s.subframe_vectors[2][m];
                assert!((nu[q * 4 + m] - expect).norm() < 1e-12);
            }
        }
        let single = build_schedule(&SystemConfig { q_pieces: 1, ..tiny() }, 2).unwrap();
        assert_eq!(single.phi_q, CMat::identity(1, 1));
        assert_eq!(single.reflection_vector(1, 0), single.subframe_vectors[1]);
    }

    #[test]
    fn schedule_rejects_too_many_subframes() {
        assert!(build_schedule(&tiny(), 5).is_err());
        assert!(build_schedule(&tiny(), 0).is_err());
        assert!(build_schedule_with(&tiny(), 2, Spreading::Hadamard).is_ok());
        assert!(build_schedule_with(
            &SystemConfig {
                q_pieces: 8,
                m_ris: 24,
                ..tiny()
            },
            2,
            Spreading::Dft
        )
        .is_ok());
    }

    #[test]
    fn hadamard_spreading_despreads_exactly() {
        let cfg = tiny();
        let s = build_schedule_with(&cfg, 2, Spreading::Hadamard).unwrap();
        let mut rng = seeded(4);
        let h = random_matrix(8, 16, &mut rng);
        let obs = observe_block(&h, &s, 0, 0.0, 1.0, &mut rng).unwrap();
        for b in 0..2 {
            for q in 0..4 {
                let expect = &s.combiner * h.columns(q * 4, 4) * &s.subframe_vectors[b];
                assert!((&obs.z[b][q] - expect).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn noiseless_observations_match_unrolled_model() {
        let cfg = tiny();
        let mut rng = seeded(11);
        let real = assemble_channels(&cfg, &mut rng).unwrap();
        let s = build_schedule(&cfg, 4).unwrap();
        let obs = simulate_and_despread(&real, &s, 1, 0.0, 1.0, &mut rng).unwrap();
        let h = &real.h_eff_seq[1];
        for b in 0..4 {
            for q in 0..4 {
                let expect = &s.combiner * h.columns(q * 4, 4) * &s.subframe_vectors[b];
                assert!((&obs.z[b][q] - &expect).norm() <= 1e-10 * expect.norm());
            }
        }
    }

    #[test]
    fn pieces_are_separated() {
        let cfg = tiny();
        let mut rng = seeded(12);
        let h = random_matrix(8, 16, &mut rng);
        let mut zeroed = h.clone();
        zeroed.columns_mut(0, 4).fill(cplx(0.0, 0.0));
        zeroed.columns_mut(8, 8).fill(cplx(0.0, 0.0));
        let s = build_schedule(&cfg, 2).unwrap();
        let a = observe_block(&h, &s, 0, 0.0, 1.0, &mut rng).unwrap();
        let b = observe_block(&zeroed, &s, 0, 0.0, 1.0, &mut rng).unwrap();
        for sub in 0..2 {
            assert!((&a.z[sub][1] - &b.z[sub][1]).norm() < 1e-12);
        }
    }

    #[test]
    fn despreading_preserves_noise_energy() {
        let cfg = tiny();
        let s = build_schedule(&cfg, 2).unwrap();
        let mut rng = seeded(13);
        let zero = CMat::zeros(8, 16);
        for _ in 0..20 {
            let slots = simulate_slots(&zero, &s, 0.7, 2.0, &mut rng).unwrap();
            for b in 0..2 {
                let u = despread(&slots.noise_tilde[b], &s.phi_q);
                let before: f64 = slots.noise_tilde[b].iter().map(vec_norm_sqr).sum();
                let after: f64 = u.iter().map(vec_norm_sqr).sum();
                assert!((after - before / 4.0).abs() <= 1e-10 * before);
            }
        }
    }

    #[test]
    fn despread_noise_covariance() {
        // oracle: Cov(u) = sigma^2 / (P Q) W W^H
        let cfg = tiny();
        let s = build_schedule(&cfg, 1).unwrap();
        let mut rng = seeded(14);
        let zero = CMat::zeros(8, 16);
        let (sigma, p, draws) = (0.5, 2.0, 10_000);
        let mut cov = CMat::zeros(4, 4);
        for _ in 0..draws {
            let obs = observe_block(&zero, &s, 0, sigma, p, &mut rng).unwrap();
            let z = &obs.z[0][2];
            cov += z * z.adjoint();
        }
        cov /= cplx(draws as f64, 0.0);
        let expect = &s.combiner * s.combiner.adjoint() * cplx(sigma * sigma / (p * 4.0), 0.0);
        assert!((cov - &expect).norm() <= 0.05 * expect.norm());
    }

    #[test]
    fn calibrated_snr_is_met_empirically() {
        let cfg = tiny();
        let mut rng = seeded(15);
        let real = assemble_channels(&cfg, &mut rng).unwrap();
        let s = build_schedule(&cfg, 2).unwrap();
        let sigma = calibrate_noise(&real, &s, 20.0, 1.0).unwrap();
        assert_eq!(calibrate_noise(&real, &s, f64::INFINITY, 1.0).unwrap(), 0.0);
        let h = &real.h_eff_seq[1];
        let signal: f64 = s
            .all_reflections()
            .iter()
            .map(|nu| vec_norm_sqr(&(&s.combiner * h * nu)))
            .sum::<f64>()
            / s.pilot_slots() as f64;
        let zero = CMat::zeros(8, 16);
        let draws = 10_000 / s.pilot_slots();
        let mut noise = 0.0;
        for _ in 0..draws {
            let slots = simulate_slots(&zero, &s, sigma, 1.0, &mut rng).unwrap();
            noise += slots.noise_tilde.iter().flatten().map(vec_norm_sqr).sum::<f64>();
        }
        noise /= (draws * s.pilot_slots()) as f64;
        let measured = 10.0 * (signal / noise).log10();
        assert!((measured - 20.0).abs() < 0.2, "{measured}");

        // doubling P at fixed sigma
        let mut n2 = 0.0;
        for _ in 0..draws {
            let slots = simulate_slots(&zero, &s, sigma, 2.0, &mut rng).unwrap();
            n2 += slots.noise_tilde.iter().flatten().map(vec_norm_sqr).sum::<f64>();
        }
        n2 /= (draws * s.pilot_slots()) as f64;
        let gain = 10.0 * (noise / n2).log10();
        assert!((gain - 3.01).abs() < 0.05, "{gain}");
    }

    #[test]
    fn calibration_rejects_zero_signal() {
        let s = build_schedule(&tiny(), 1).unwrap();
        let zero = CMat::zeros(8, 16);
        assert!(matches!(
            calibrate_noise_for(&[&zero], &s.combiner, &s.all_reflections(), 10.0, 1.0),
            Err(Error::ZeroSignal)
        ));
    }

    #[test]
    fn subframe_subspaces_are_distinct() {
        // principal angle between span(diag(conj v_a) U) and span(diag(conj v_b) U)
        let cfg = SystemConfig::desk();
        let s = build_schedule(&cfg, 4).unwrap();
        let mut rng = seeded(16);
        let m_sub = cfg.m_sub();
        let u = random_matrix(m_sub, cfg.n_rf, &mut rng).qr().q();
        let bases: Vec<CMat> = s
            .subframe_vectors
            .iter()
            .map(|v| crate::linalg::scale_columns(&u.adjoint(), &v.map(|z| z.conj())).adjoint())
            .collect();
        for a in 0..bases.len() {
            for b in a + 1..bases.len() {
                let cosines = crate::linalg::singular_values(&(bases[a].adjoint() * &bases[b]));
                let largest_angle = cosines.last().unwrap().min(1.0).acos();
                assert!(largest_angle > 1e-6, "{a} {b}");
            }
        }
    }

    #[test]
    fn sweep_recovers_combined_channel() {
        let mut rng = seeded(17);
        let h = random_matrix(8, 16, &mut rng);
        let combiners = sweep_combiners(8, 4, 0, 2).unwrap();
        let obs = simulate_sweep(&h, &combiners, 1, 0.0, 1.0, &mut rng).unwrap();
        for (w, y) in combiners.iter().zip(&obs.y_hat) {
            assert!((y - w * &h).norm() < 1e-10 * h.norm());
        }
        assert!(sweep_reflections(16)
            .iter()
            .all(|v| v.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12)));
    }

    #[test]
    fn sweep_calibration_matches_slot_average() {
        let mut rng = seeded(18);
        let h = random_matrix(8, 16, &mut rng);
        let w = dft_combiner(8, 4, 2).unwrap();
        let fast = calibrate_sweep_noise(&[&h], std::slice::from_ref(&w), 15.0, 2.0).unwrap();
        let slow = calibrate_noise_for(&[&h], &w, &sweep_reflections(16), 15.0, 2.0).unwrap();
        assert!((fast - slow).abs() <= 1e-12 * slow);
    }

    #[test]
    fn sweep_noise_matches_explicit_slots() {
        // oracle: receive every DFT slot with W n_m / s, then apply V^H / M
        let (n, m, sigma, p) = (8, 16, 0.8, 2.0);
        let w = dft_combiner(n, 4, 1).unwrap();
        let v = dft_matrix(m, 1.0);
        let zero = CMat::zeros(n, m);
        let draws = 4000;
        let mut rng = seeded(19);
        let (mut fast, mut slow) = (CMat::zeros(4, 4), CMat::zeros(4, 4));
        for _ in 0..draws {
            let y = &simulate_sweep(&zero, std::slice::from_ref(&w), 1, sigma, p, &mut rng)
                .unwrap()
                .y_hat[0];
            fast += y * y.adjoint();
            let slots = &w * random_matrix(n, m, &mut rng) * cplx(sigma / p.sqrt(), 0.0);
            let y = slots * v.adjoint() / cplx(m as f64, 0.0);
            slow += &y * y.adjoint();
        }
        let expect = &w * w.adjoint() * cplx(sigma * sigma / p, 0.0);
        let scale = cplx(draws as f64, 0.0);
        assert!((fast / scale - &expect).norm() <= 0.05 * expect.norm());
        assert!((slow / scale - &expect).norm() <= 0.05 * expect.norm());
    }

    #[test]
    fn schedule_csv() {
        let s = build_schedule(&tiny(), 1).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * 16);
        assert!(text.starts_with("b,i,m,re,im\n"));
    }
}
