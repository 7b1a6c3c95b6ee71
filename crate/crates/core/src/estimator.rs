//! Multi-LS estimation of the small-timescale channels and the low-rank
//! benchmarks.
//!
//! For piece `q` and subframe `b` the observation is linear in `d_[q,t]`:
//!
//! ```text
//! z_[b,q,t] = A_[b,q] d_[q,t] + u,    A_[b,q] = W H_[q,0] diag(v_b)
//! ```
//!
//! Stacking the `B` subframes gives the normal equation
//! `G_q d = sum_b A_b^H z_b` with `G_q = sum_b A_b^H A_b`.

use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_defect, scale_columns, vcat, CMat, CVec};
use crate::spectral::{Conditioning, HERMITIAN_TOL};
use crate::timescale::PiecewiseDecomposition;
use crate::training::{BlockObservations, ReflectionSchedule, SweepObservations};

/// Relative singular-value cutoff for every rank statement about `G_q`.
pub const RANK_THRESHOLD: f64 = 1e-10;

/// `W H_pw diag(v_b)`.
pub fn sensing_matrix(combiner: &CMat, h_pw0: &CMat, v_b: &CVec) -> Result<CMat> {
    if combiner.ncols() != h_pw0.nrows() || h_pw0.ncols() != v_b.len() {
        return Err(Error::DimensionMismatch(format!(
            "W is {}x{}, H is {}x{}, v has {} entries",
            combiner.nrows(),
            combiner.ncols(),
            h_pw0.nrows(),
            h_pw0.ncols(),
            v_b.len()
        )));
    }
    Ok(scale_columns(&(combiner * h_pw0), v_b))
}

/// `sum_b A_b^H A_b`.
pub fn gram_matrix(sensing: &[CMat]) -> Result<CMat> {
    let first = sensing
        .first()
        .ok_or_else(|| Error::InvalidArgument("Gram matrix of zero subframes".into()))?;
    let mut g = CMat::zeros(first.ncols(), first.ncols());
    for a in sensing {
        if a.ncols() != first.ncols() {
            return Err(Error::DimensionMismatch("sensing matrices differ in width".into()));
        }
        g.gemm_ad(Complex64::new(1.0, 0.0), a, a, Complex64::new(1.0, 0.0));
    }
    Ok(g)
}

/// The same Gram matrix as a Hadamard product,
/// `(conj(V) V^T) o ((W H)^H (W H))` with `V = [v_1 ... v_B]`.
pub fn gram_hadamard(wh: &CMat, subframe_vectors: &[CVec]) -> Result<CMat> {
    let m_sub = wh.ncols();
    if subframe_vectors.is_empty() || subframe_vectors.iter().any(|v| v.len() != m_sub) {
        return Err(Error::DimensionMismatch(format!(
            "subframe vectors must have {m_sub} entries"
        )));
    }
    let v = CMat::from_fn(m_sub, subframe_vectors.len(), |m, b| subframe_vectors[b][m]);
    let spread = v.map(|z| z.conj()) * v.transpose();
    let channel = wh.adjoint() * wh;
    Ok(spread.component_mul(&channel))
}

/// `max_q ceil(M / (Q min(N_RF, r_q)))`.
pub fn b_min(m_ris: usize, q_pieces: usize, n_rf: usize, ranks: &[usize]) -> Result<usize> {
    if m_ris == 0 || q_pieces == 0 || n_rf == 0 || ranks.is_empty() || ranks.contains(&0) {
        return Err(Error::InvalidArgument(
            "B_min needs positive M, Q, N_RF and ranks".into(),
        ));
    }
    Ok(ranks
        .iter()
        .map(|&r| m_ris.div_ceil(q_pieces * n_rf.min(r)))
        .max()
        .unwrap_or(1))
}

/// One piece of the multi-LS problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLsProblem {
    pub q: usize,
    pub sensing: Vec<CMat>,
    pub observations: Vec<CVec>,
    pub gram: CMat,
    /// `sum_b A_b^H z_b`.
    pub rhs: CVec,
}

impl MultiLsProblem {
    pub fn new(q: usize, sensing: Vec<CMat>, observations: Vec<CVec>) -> Result<Self> {
        if sensing.is_empty() || sensing.len() != observations.len() {
            return Err(Error::InvalidArgument(format!(
                "{} sensing matrices for {} observations",
                sensing.len(),
                observations.len()
            )));
        }
        let gram = gram_matrix(&sensing)?;
        let mut rhs = CVec::zeros(gram.nrows());
        for (a, z) in sensing.iter().zip(&observations) {
            if a.nrows() != z.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} rows vs {}-entry observation",
                    a.nrows(),
                    z.len()
                )));
            }
            rhs.gemv_ad(Complex64::new(1.0, 0.0), a, z, Complex64::new(1.0, 0.0));
        }
        Ok(Self {
            q,
            sensing,
            observations,
            gram,
            rhs,
        })
    }

    /// Builds piece `q` of a block from the initial estimate and the schedule.
    pub fn from_block(
        q: usize,
        decomposition: &PiecewiseDecomposition,
        schedule: &ReflectionSchedule,
        block: &BlockObservations,
    ) -> Result<Self> {
        let wh = &schedule.combiner * &decomposition.pieces[q];
        let sensing = schedule
            .subframe_vectors
            .iter()
            .map(|v| {
                if v.len() != wh.ncols() {
                    return Err(Error::DimensionMismatch(
                        "schedule and decomposition disagree on M_sub".into(),
                    ));
                }
                Ok(scale_columns(&wh, v))
            })
            .collect::<Result<Vec<_>>>()?;
        let observations = block.z.iter().map(|zb| zb[q].clone()).collect();
        Self::new(q, sensing, observations)
    }

    pub fn b_subframes(&self) -> usize {
        self.sensing.len()
    }

    /// `[A_1; ...; A_B]`.
    pub fn stacked_sensing(&self) -> CMat {
        vcat(&self.sensing)
    }

    /// Eigenvalues of `G_q`, descending, as squared singular values of the
    /// stacked sensing matrix.
    pub fn gram_spectrum(&self) -> Vec<f64> {
        gram_spectrum(&self.sensing)
    }
}

/// Eigenvalues of `sum_b A_b^H A_b`, descending, computed from the SVD of the
/// stacked sensing matrix so the small end stays accurate.
pub fn gram_spectrum(sensing: &[CMat]) -> Vec<f64> {
    let Some(first) = sensing.first() else {
        return Vec::new();
    };
    let mut s: Vec<f64> = vcat(sensing).singular_values().iter().map(|x| x * x).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.resize(first.ncols(), 0.0);
    s
}

/// Conditioning and rank of the Gram matrix of piece `q` under `schedule`.
pub fn piece_conditioning(h_pw0: &CMat, schedule: &ReflectionSchedule) -> Result<(Conditioning, usize)> {
    let sensing = schedule
        .subframe_vectors
        .iter()
        .map(|v| sensing_matrix(&schedule.combiner, h_pw0, v))
        .collect::<Result<Vec<_>>>()?;
    let spectrum = gram_spectrum(&sensing);
    let max = spectrum.first().copied().unwrap_or(0.0);
    let min = spectrum.last().copied().unwrap_or(0.0);
    Ok((Conditioning::from_extremes(max, min), gram_rank(&spectrum)))
}

/// Rank of `G` from its eigenvalues at [`RANK_THRESHOLD`].
pub fn gram_rank(spectrum: &[f64]) -> usize {
    let max = spectrum.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    spectrum.iter().filter(|&&l| l >= RANK_THRESHOLD * max).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SolveOptions {
    /// Added to the diagonal of `G`; zero keeps the plain normal equation.
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub q: usize,
    pub b_subframes: usize,
    pub conditioning: Conditioning,
    pub rank: usize,
    /// `||rhs - G d||`.
    pub normal_residual: f64,
    /// `sqrt(sum_b ||z_b - A_b d||^2)`.
    pub data_residual: f64,
    /// `||G^-1||_2`, infinite when singular.
    pub inverse_gram_norm: f64,
    /// False when the pseudo-inverse fallback was taken.
    pub unique: bool,
}

/// Solves `G d = rhs`, falling back to the minimum-norm LS solution when `G` is singular.
pub fn solve_multi_ls(problem: &MultiLsProblem, options: SolveOptions) -> Result<(CVec, SolveDiagnostics)> {
    if problem.sensing.is_empty() {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    let defect = hermitian_defect(&problem.gram);
    if defect > HERMITIAN_TOL {
        return Err(Error::NotHermitian(defect));
    }
    let ridge = options.ridge.max(0.0);
    let spectrum: Vec<f64> = problem.gram_spectrum().into_iter().map(|l| l + ridge).collect();
    let max = spectrum.first().copied().unwrap_or(0.0);
    let min = spectrum.last().copied().unwrap_or(0.0);
    let conditioning = Conditioning::from_extremes(max, min);
    let rank = gram_rank(&spectrum);

    let mut gram = problem.gram.clone();
    for i in 0..gram.nrows() {
        gram[(i, i)] += Complex64::new(ridge, 0.0);
    }

    let cholesky = if conditioning.is_singular() {
        None
    } else {
        gram.clone().cholesky()
    };
    let (d, unique) = match cholesky {
        Some(ch) => (ch.solve(&problem.rhs), true),
        None => (minimum_norm_solution(problem, ridge), false),
    };

    let normal_residual = (&problem.rhs - &gram * &d).norm();
    let data_residual = problem
        .sensing
        .iter()
        .zip(&problem.observations)
        .map(|(a, z)| (z - a * &d).norm_squared())
        .sum::<f64>()
        .sqrt();
    let inverse_gram_norm = if unique { 1.0 / min } else { f64::INFINITY };
    Ok((
        d,
        SolveDiagnostics {
            q: problem.q,
            b_subframes: problem.b_subframes(),
            conditioning,
            rank,
            normal_residual,
            data_residual,
            inverse_gram_norm,
            unique,
        },
    ))
}

fn minimum_norm_solution(problem: &MultiLsProblem, ridge: f64) -> CVec {
    let mut a = problem.stacked_sensing();
    let mut z = vcat(
        &problem
            .observations
            .iter()
            .map(|v| CMat::from_column_slice(v.len(), 1, v.as_slice()))
            .collect::<Vec<_>>(),
    );
    if ridge > 0.0 {
        let m = a.ncols();
        a = vcat(&[a, CMat::identity(m, m) * Complex64::new(ridge.sqrt(), 0.0)]);
        z = vcat(&[z, CMat::zeros(m, 1)]);
    }
    let svd = a.svd(true, true);
    let cutoff = svd.singular_values.max() * RANK_THRESHOLD.sqrt();
    let x = svd.solve(&z, cutoff).expect("both singular-vector sets computed");
    x.column(0).into_owned()
}

/// Solves every piece of one block and concatenates the estimates.
pub fn estimate_block(
    decomposition: &PiecewiseDecomposition,
    schedule: &ReflectionSchedule,
    block: &BlockObservations,
    options: SolveOptions,
) -> Result<(Vec<CVec>, Vec<SolveDiagnostics>)> {
    let mut estimates = Vec::with_capacity(decomposition.q_pieces());
    let mut diagnostics = Vec::with_capacity(decomposition.q_pieces());
    for q in 0..decomposition.q_pieces() {
        let problem = MultiLsProblem::from_block(q, decomposition, schedule, block)?;
        let (d, diag) = solve_multi_ls(&problem, options)?;
        estimates.push(d);
        diagnostics.push(diag);
    }
    Ok((estimates, diagnostics))
}

/// One CSV row of solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub seed: u64,
    pub block: usize,
    pub q: usize,
    pub b: usize,
    pub b_min: usize,
    pub kappa: Option<f64>,
    pub singular: bool,
    pub rank: usize,
    pub normal_residual: f64,
    pub data_residual: f64,
}

impl DiagnosticsRow {
    pub fn new(seed: u64, block: usize, b_min: usize, d: &SolveDiagnostics) -> Self {
        Self {
            seed,
            block,
            q: d.q,
            b: d.b_subframes,
            b_min,
            kappa: match d.conditioning {
                Conditioning::Finite(k) => Some(k),
                Conditioning::Singular => None,
            },
            singular: d.conditioning.is_singular(),
            rank: d.rank,
            normal_residual: d.normal_residual,
            data_residual: d.data_residual,
        }
    }
}

pub fn write_diagnostics_csv<W: Write>(rows: &[DiagnosticsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BenchmarkMode {
    /// Piecewise low-rank coefficients, one subspace per piece.
    Pwclra,
    /// A single subspace for the whole surface.
    Clra,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkEstimate {
    pub coefficients: Vec<CMat>,
    /// `[S_1 T_1 ... S_Q T_Q]`.
    pub channel: CMat,
}

/// Full sweeps needed to identify a rank-`rank` coefficient matrix.
pub fn required_sweeps(rank: usize, n_rf: usize) -> usize {
    rank.div_ceil(n_rf.max(1)).max(1)
}

/// LS estimate of every `T_[q,t]` given the subspaces `S_q`.
pub fn benchmark_small_timescale(
    mode: BenchmarkMode,
    subspaces: &[CMat],
    observations: &SweepObservations,
) -> Result<BenchmarkEstimate> {
    if subspaces.is_empty() || observations.y_hat.is_empty() {
        return Err(Error::InvalidArgument(
            "benchmark needs subspaces and at least one sweep".into(),
        ));
    }
    if mode == BenchmarkMode::Clra && subspaces.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "CLRA uses one subspace, got {}",
            subspaces.len()
        )));
    }
    let m_ris = observations.y_hat[0].ncols();
    let q_pieces = subspaces.len();
    if m_ris % q_pieces != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{q_pieces} pieces for {m_ris} columns"
        )));
    }
    let m_sub = m_ris / q_pieces;
    let n_rf = observations.combiners[0].nrows();
    let max_rank = subspaces.iter().map(|s| s.ncols()).max().unwrap_or(0);
    let required = required_sweeps(max_rank, n_rf);
    if observations.y_hat.len() < required {
        return Err(Error::InsufficientObservations {
            required,
            available: observations.y_hat.len(),
        });
    }

    let w_stack = vcat(&observations.combiners);
    let y_stack = vcat(&observations.y_hat);
    let mut coefficients = Vec::with_capacity(q_pieces);
    let mut channel = CMat::zeros(w_stack.ncols(), m_ris);
    for (q, s) in subspaces.iter().enumerate() {
        let ws = &w_stack * s;
        let svd = ws.svd(true, true);
        let cutoff = svd.singular_values.max() * RANK_THRESHOLD;
        let y_q = y_stack.columns(q * m_sub, m_sub).into_owned();
        let t = svd.solve(&y_q, cutoff).expect("both singular-vector sets computed");
        channel.columns_mut(q * m_sub, m_sub).copy_from(&(s * &t));
        coefficients.push(t);
    }
    Ok(BenchmarkEstimate { coefficients, channel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::assemble_channels;
    use crate::config::SystemConfig;
    use crate::linalg::{cplx, fro_norm_sqr, numerical_rank, random_matrix, random_vector};
    use crate::rng::seeded;
    use crate::timescale::{small_timescale_truth, RankRule};
    use crate::training::{build_schedule, dft_combiner, observe_block, simulate_sweep, sweep_combiners};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn sensing_with_unit_vector_is_combined_channel() {
        let mut rng = seeded(1);
        let w = random_matrix(4, 8, &mut rng);
        let h = random_matrix(8, 6, &mut rng);
        let ones = CVec::from_element(6, cplx(1.0, 0.0));
        assert_eq!(sensing_matrix(&w, &h, &ones).unwrap(), &w * &h);
        assert!(sensing_matrix(&w, &h, &CVec::zeros(5)).is_err());
    }

    #[test]
    fn sensing_commutes_with_diagonal() {
        // A_b d == W H diag(d) v_b
        let mut rng = seeded(2);
        let w = random_matrix(4, 8, &mut rng);
        let h = random_matrix(8, 6, &mut rng);
        let v = random_vector(6, &mut rng);
        let a = sensing_matrix(&w, &h, &v).unwrap();
        for _ in 0..100 {
            let d = random_vector(6, &mut rng);
            let lhs = &a * &d;
            let rhs = &w * scale_columns(&h, &d) * &v;
            assert!((&lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
        }
    }

    #[test]
    fn paper_sized_sensing_shape() {
        let cfg = SystemConfig::paper();
        let w = dft_combiner(cfg.n_bs, cfg.n_rf, 0).unwrap();
        let h = CMat::zeros(cfg.n_bs, cfg.m_sub());
        let v = CVec::from_element(cfg.m_sub(), cplx(1.0, 0.0));
        assert_eq!(sensing_matrix(&w, &h, &v).unwrap().shape(), (16, 32));
    }

    #[test]
    fn gram_of_identity() {
        assert_eq!(gram_matrix(&[CMat::identity(3, 3)]).unwrap(), CMat::identity(3, 3));
        assert!(gram_matrix(&[]).is_err());
    }

    #[test]
    fn gram_hadamard_identity_on_desk_instances() {
        let cfg = SystemConfig::desk();
        for seed in 0..5 {
            let mut rng = seeded(seed);
            let real = assemble_channels(&cfg, &mut rng).unwrap();
            let schedule = build_schedule(&cfg, 3).unwrap();
            let h = real.h_eff_seq[0].columns(0, cfg.m_sub()).into_owned();
            let sensing: Vec<CMat> = schedule
                .subframe_vectors
                .iter()
                .map(|v| sensing_matrix(&schedule.combiner, &h, v).unwrap())
                .collect();
            let direct = gram_matrix(&sensing).unwrap();
            let hadamard = gram_hadamard(&(&schedule.combiner * &h), &schedule.subframe_vectors).unwrap();
            assert!((&direct - &hadamard).norm() <= 1e-10 * direct.norm());
        }
    }

    #[test]
    fn gram_rank_bound() {
        let mut rng = seeded(3);
        for _ in 0..100 {
            let r = rng.random_range(1..=4usize);
            let b = rng.random_range(1..=4usize);
            let h = random_matrix(8, r, &mut rng) * random_matrix(r, 16, &mut rng);
            let w = random_matrix(4, 8, &mut rng);
            let vs: Vec<CVec> = (0..b).map(|_| random_vector(16, &mut rng)).collect();
            let sensing: Vec<CMat> = vs.iter().map(|v| sensing_matrix(&w, &h, v).unwrap()).collect();
            let g = gram_matrix(&sensing).unwrap();
            let rank = numerical_rank(&g, RANK_THRESHOLD);
            assert!(rank <= b * r.min(4), "rank {rank} > {b} * min(4, {r})");
        }
    }

    #[test]
    fn b_min_examples() {
        assert_eq!(b_min(512, 16, 16, &[16; 16]).unwrap(), 2);
        let mut ranks = vec![16; 16];
        ranks[3] = 1;
        assert_eq!(b_min(512, 16, 16, &ranks).unwrap(), 32);
        assert_eq!(b_min(512, 16, 8, &[8; 16]).unwrap(), 4);
        assert_eq!(b_min(512, 16, 8, &[20; 16]).unwrap(), 4);
        assert!(b_min(512, 16, 8, &[0]).is_err());
    }

    fn synthetic(seed: u64, m_sub: usize, b: usize, n_rf: usize) -> (MultiLsProblem, CVec) {
        let mut rng = seeded(seed);
        let d = random_vector(m_sub, &mut rng);
        let sensing: Vec<CMat> = (0..b).map(|_| random_matrix(n_rf, m_sub, &mut rng)).collect();
        let obs = sensing.iter().map(|a| a * &d).collect();
        (MultiLsProblem::new(0, sensing, obs).unwrap(), d)
    }

    #[test]
    fn exact_recovery_on_synthetic_full_rank() {
        let (p, d) = synthetic(4, 12, 4, 4);
        let (est, diag) = solve_multi_ls(&p, SolveOptions::default()).unwrap();
        assert!(diag.unique);
        assert_eq!(diag.rank, 12);
        assert!((&est - &d).norm() <= 1e-8 * d.norm());
        assert!(diag.normal_residual <= 1e-8 * p.rhs.norm());
    }

    #[test]
    fn underdetermined_falls_back_to_minimum_norm() {
        let (p, _) = synthetic(5, 12, 2, 4);
        let (est, diag) = solve_multi_ls(&p, SolveOptions::default()).unwrap();
        assert!(!diag.unique);
        assert!(diag.conditioning.is_singular());
        assert_eq!(diag.rank, 8);
        assert!(diag.data_residual <= 1e-8 * p.rhs.norm());
        // minimum norm: orthogonal to the null space of the stacked sensing matrix
        let a = p.stacked_sensing();
        let pinv_est = a.clone().pseudo_inverse(1e-12).unwrap()
            * vcat(
                &p.observations
                    .iter()
                    .map(|v| CMat::from_column_slice(v.len(), 1, v.as_slice()))
                    .collect::<Vec<_>>(),
            );
        assert!((&est - pinv_est.column(0)).norm() <= 1e-8 * est.norm());
    }

    #[test]
    fn ridge_is_off_by_default() {
        assert_eq!(SolveOptions::default().ridge, 0.0);
        let (p, d) = synthetic(6, 6, 3, 4);
        let (est, _) = solve_multi_ls(&p, SolveOptions { ridge: 1e-3 }).unwrap();
        assert!((&est - &d).norm() > 0.0);
    }

    #[test]
    fn rejects_empty_problem() {
        assert!(MultiLsProblem::new(0, vec![], vec![]).is_err());
    }

    #[test]
    fn noiseless_block_recovers_truth() {
        let cfg = SystemConfig::desk();
        let mut rng = seeded(7);
        let real = assemble_channels(&cfg, &mut rng).unwrap();
        let dec = PiecewiseDecomposition::new(&real.h_eff_seq[0], cfg.q_pieces, RankRule::Threshold(0.0)).unwrap();
        let ranks = vec![cfg.n_rf; cfg.q_pieces];
        let b = 2 * b_min(cfg.m_ris, cfg.q_pieces, cfg.n_rf, &ranks).unwrap();
        let schedule = build_schedule(&cfg, b).unwrap();
        for t in 1..cfg.t_blocks {
            let obs = observe_block(&real.h_eff_seq[t], &schedule, t, 0.0, 1.0, &mut rng).unwrap();
            let (est, diags) = estimate_block(&dec, &schedule, &obs, SolveOptions::default()).unwrap();
            let truth = small_timescale_truth(&real.h_ur_seq[0], &real.h_ur_seq[t], cfg.q_pieces, t).unwrap();
            for (q, (e, d)) in est.iter().zip(&truth.pieces).enumerate() {
                assert!(diags[q].unique);
                assert!((e - d).norm() <= 1e-8 * d.norm(), "block {t} piece {q}");
            }
        }
    }

    #[test]
    fn below_b_min_is_flagged() {
        let cfg = SystemConfig::desk();
        let mut rng = seeded(8);
        let real = assemble_channels(&cfg, &mut rng).unwrap();
        let dec = PiecewiseDecomposition::new(&real.h_eff_seq[0], cfg.q_pieces, RankRule::Threshold(0.0)).unwrap();
        let schedule = build_schedule(&cfg, 1).unwrap();
        let obs = observe_block(&real.h_eff_seq[1], &schedule, 1, 0.0, 1.0, &mut rng).unwrap();
        let (_, diags) = estimate_block(&dec, &schedule, &obs, SolveOptions::default()).unwrap();
        assert!(diags.iter().all(|d| !d.unique && d.rank < cfg.m_sub()));
    }

    #[test]
    fn error_amplification_bound_holds() {
        let cfg = SystemConfig::desk();
        let mut rng = seeded(9);
        let real = assemble_channels(&cfg, &mut rng).unwrap();
        let dec = PiecewiseDecomposition::new(&real.h_eff_seq[0], cfg.q_pieces, RankRule::Threshold(0.0)).unwrap();
        let schedule = build_schedule(&cfg, 2).unwrap();
        let truth = small_timescale_truth(&real.h_ur_seq[0], &real.h_ur_seq[1], cfg.q_pieces, 1).unwrap();
        let obs = observe_block(&real.h_eff_seq[1], &schedule, 1, 1e-3, 1.0, &mut rng).unwrap();
        for q in 0..cfg.q_pieces {
            let p = MultiLsProblem::from_block(q, &dec, &schedule, &obs).unwrap();
            let (d, diag) = solve_multi_ls(&p, SolveOptions::default()).unwrap();
            let mut noise_rhs = CVec::zeros(cfg.m_sub());
            for (a, u) in p.sensing.iter().zip(obs.noise.iter().map(|nb| &nb[q])) {
                noise_rhs += a.adjoint() * u;
            }
            let err = (&d - &truth.pieces[q]).norm();
            assert!(err <= diag.inverse_gram_norm * noise_rhs.norm() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn benchmark_noiseless_exact() {
        let cfg = SystemConfig::desk();
        let mut rng = seeded(10);
        let real = assemble_channels(&cfg, &mut rng).unwrap();
        // a channel whose pieces have rank <= N_RF so the subspaces are exact
        let h0 = random_matrix(cfg.n_bs, 4, &mut rng) * random_matrix(4, cfg.m_ris, &mut rng);
        let dec = PiecewiseDecomposition::new(&h0, cfg.q_pieces, RankRule::Fixed(4)).unwrap();
        let d = &real.h_ur_seq[1].component_div(&real.h_ur_seq[0]);
        let h1 = scale_columns(&h0, d);
        let combiners = sweep_combiners(cfg.n_bs, cfg.n_rf, 0, 1).unwrap();
        let obs = simulate_sweep(&h1, &combiners, 1, 0.0, 1.0, &mut rng).unwrap();
        let est = benchmark_small_timescale(BenchmarkMode::Pwclra, &dec.subspaces, &obs).unwrap();
        assert!((&est.channel - &h1).norm() <= 1e-8 * h1.norm());
        for (q, t) in est.coefficients.iter().enumerate() {
            let truth = dec.subspaces[q].adjoint() * h1.columns(q * cfg.m_sub(), cfg.m_sub());
            assert!((t - &truth).norm() <= 1e-8 * truth.norm());
        }
    }

    #[test]
    fn clra_equals_pwclra_for_one_piece() {
        let mut rng = seeded(11);
        let h = random_matrix(16, 3, &mut rng) * random_matrix(3, 24, &mut rng);
        let dec = PiecewiseDecomposition::new(&h, 1, RankRule::Fixed(3)).unwrap();
        let combiners = sweep_combiners(16, 4, 0, 1).unwrap();
        let obs = simulate_sweep(&h, &combiners, 1, 0.1, 1.0, &mut rng).unwrap();
        let a = benchmark_small_timescale(BenchmarkMode::Clra, &dec.subspaces, &obs).unwrap();
        let b = benchmark_small_timescale(BenchmarkMode::Pwclra, &dec.subspaces, &obs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn benchmark_needs_enough_sweeps() {
        let mut rng = seeded(12);
        let h = random_matrix(16, 24, &mut rng);
        let dec = PiecewiseDecomposition::new(&h, 1, RankRule::Fixed(10)).unwrap();
        let combiners = sweep_combiners(16, 4, 0, 2).unwrap();
        let obs = simulate_sweep(&h, &combiners, 1, 0.0, 1.0, &mut rng).unwrap();
        match benchmark_small_timescale(BenchmarkMode::Clra, &dec.subspaces, &obs) {
            Err(Error::InsufficientObservations { required, available }) => assert_eq!((required, available), (3, 2)),
            other => panic!("{other:?}"),
        }
        assert_eq!(required_sweeps(16, 16), 1);
        assert_eq!(required_sweeps(17, 16), 2);
    }

    #[test]
    fn diagnostics_csv_has_header() {
        let (p, _) = synthetic(13, 4, 2, 4);
        let (_, diag) = solve_multi_ls(&p, SolveOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_diagnostics_csv(&[DiagnosticsRow::new(1, 1, 1, &diag)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("seed,block,q,b,b_min,kappa,singular,rank,normal_residual,data_residual\n"));
        assert!(fro_norm_sqr(&p.gram) > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn gram_is_hermitian_psd_and_matches_sum(seed in any::<u64>(), b in 1usize..5, n_rf in 1usize..5, m_sub in 1usize..9) {
            let mut rng = seeded(seed);
            let sensing: Vec<CMat> = (0..b).map(|_| random_matrix(n_rf, m_sub, &mut rng)).collect();
            let g = gram_matrix(&sensing).unwrap();
            prop_assert!(hermitian_defect(&g) < 1e-10);
            let scale = g.norm();
            for l in crate::linalg::hermitian_eigenvalues(&g) {
                prop_assert!(l >= -1e-10 * scale);
            }
            let x = random_vector(m_sub, &mut rng);
            let quad: f64 = sensing.iter().map(|a| (a * &x).norm_squared()).sum();
            let via_g = x.dotc(&(&g * &x)).re;
            prop_assert!((quad - via_g).abs() <= 1e-10 * quad.max(1e-300));
        }

        #[test]
        fn solution_satisfies_normal_equation(seed in any::<u64>(), b in 1usize..5, m_sub in 1usize..9) {
            let mut rng = seeded(seed);
            let sensing: Vec<CMat> = (0..b).map(|_| random_matrix(3, m_sub, &mut rng)).collect();
            let obs: Vec<CVec> = (0..b).map(|_| random_vector(3, &mut rng)).collect();
            let p = MultiLsProblem::new(0, sensing, obs).unwrap();
            let (d, diag) = solve_multi_ls(&p, SolveOptions::default()).unwrap();
            let optimality = (&p.rhs - &p.gram * &d).norm();
            prop_assert!(optimality <= 1e-8 * p.rhs.norm().max(1e-300), "{optimality} {diag:?}");
        }

        #[test]
        fn b_min_is_smallest_sufficient(m_sub in 1usize..40, q in 1usize..6, n_rf in 1usize..20, r in 1usize..20) {
            let m = m_sub * q;
            let b = b_min(m, q, n_rf, &vec![r; q]).unwrap();
            let per = n_rf.min(r);
            prop_assert!(b * per >= m_sub);
            prop_assert!(b == 1 || (b - 1) * per < m_sub);
        }
    }
}
