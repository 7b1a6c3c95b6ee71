//! Time-scaling property, piecewise partitioning and the large-timescale oracle.
//!
//! Within one RIS-BS coherence time every effective channel is a column
//! scaling of the initial one, `H_t = H_0 diag(d_t)` with `d_t = h_t / h_0`.
//! Splitting the RIS into `Q` contiguous pieces gives the same relation per
//! piece, `H_[q,t] = H_[q,0] diag(d_[q,t])`.
//!
//! The large-timescale estimate of `H_0` is produced by an SVD oracle on the
//! true channel, optionally degraded to a target initial accuracy (IA).

use std::ops::Range;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::degenerate_indices;
use crate::dump::ComplexMatrixDump;
use crate::error::{Error, Result};
use crate::linalg::{fro_norm_sqr, hcat, random_matrix, scale_columns, CMat, CVec};

/// Contiguous equal-size column blocks covering `0..m_ris`.
pub fn partition_indices(m_ris: usize, q_pieces: usize) -> Result<Vec<Range<usize>>> {
    if q_pieces == 0 || m_ris == 0 || m_ris % q_pieces != 0 {
        return Err(Error::InvalidArgument(format!(
            "{q_pieces} pieces do not evenly divide {m_ris} RIS elements"
        )));
    }
    let m_sub = m_ris / q_pieces;
    Ok((0..q_pieces).map(|q| q * m_sub..(q + 1) * m_sub).collect())
}

/// Per-piece small-timescale channels `d_[q,t]` of block `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallTimescaleChannel {
    pub block: usize,
    pub pieces: Vec<CVec>,
}

impl SmallTimescaleChannel {
    /// The `t = 0` channel: all ones.
    pub fn identity(m_ris: usize, q_pieces: usize) -> Result<Self> {
        Self::from_full(&CVec::from_element(m_ris, Complex64::new(1.0, 0.0)), q_pieces, 0)
    }

    pub fn from_full(d: &CVec, q_pieces: usize, block: usize) -> Result<Self> {
        let pieces = partition_indices(d.len(), q_pieces)?
            .into_iter()
            .map(|r| d.rows(r.start, r.len()).into_owned())
            .collect();
        Ok(Self { block, pieces })
    }

    /// Concatenation of all pieces, length M.
    pub fn full(&self) -> CVec {
        let len = self.pieces.iter().map(|p| p.len()).sum();
        CVec::from_iterator(len, self.pieces.iter().flat_map(|p| p.iter().copied()))
    }
}

/// `d_t = h_t / h_0` elementwise, split into `q_pieces` pieces.
pub fn small_timescale_truth(h0: &CVec, ht: &CVec, q_pieces: usize, block: usize) -> Result<SmallTimescaleChannel> {
    if h0.len() != ht.len() {
        return Err(Error::DimensionMismatch(format!(
            "h0 has {} entries, ht has {}",
            h0.len(),
            ht.len()
        )));
    }
    let bad = degenerate_indices(h0);
    if !bad.is_empty() {
        return Err(Error::DegenerateChannel { indices: bad });
    }
    let d = ht.component_div(h0);
    SmallTimescaleChannel::from_full(&d, q_pieces, block)
}

/// How many singular triplets a low-rank factorization keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RankRule {
    /// Exactly this many.
    Fixed(usize),
    /// Every singular value at or above `tau * sigma_max`.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    /// `N x r` with orthonormal columns.
    pub subspace: CMat,
    /// `r x M_sub`.
    pub coefficients: CMat,
    pub rank: usize,
    /// All singular values of the input, descending.
    pub singular_values: Vec<f64>,
}

impl LowRankFactors {
    pub fn product(&self) -> CMat {
        &self.subspace * &self.coefficients
    }

    /// Squared singular values dropped by the truncation.
    pub fn discarded_energy(&self) -> f64 {
        self.singular_values[self.rank..].iter().map(|s| s * s).sum()
    }
}

/// Truncated-SVD factorization `piece ~ S T`.
pub fn low_rank_decompose(piece: &CMat, rule: RankRule) -> Result<LowRankFactors> {
    let full = piece.nrows().min(piece.ncols());
    if full == 0 || piece.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let svd = piece.clone().svd(true, true);
    let u = svd.u.as_ref().expect("left vectors requested");
    let v_t = svd.v_t.as_ref().expect("right vectors requested");
    let mut order: Vec<usize> = (0..full).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let rank = match rule {
        RankRule::Fixed(r) if r == 0 || r > full => {
            return Err(Error::InvalidArgument(format!(
                "rank {r} outside 1..={full} for a {}x{} piece",
                piece.nrows(),
                piece.ncols()
            )))
        }
        RankRule::Fixed(r) => r,
        RankRule::Threshold(tau) => {
            let cut = tau * singular_values[0];
            singular_values.iter().filter(|&&s| s >= cut).count().max(1)
        }
    };

    let mut subspace = CMat::zeros(piece.nrows(), rank);
    let mut coefficients = CMat::zeros(rank, piece.ncols());
    for (k, &i) in order.iter().take(rank).enumerate() {
        subspace.set_column(k, &u.column(i));
        coefficients.set_row(k, &(v_t.row(i) * Complex64::new(svd.singular_values[i], 0.0)));
    }
    Ok(LowRankFactors {
        subspace,
        coefficients,
        rank,
        singular_values,
    })
}

/// Piecewise view of the initial effective-channel estimate.
///
/// `pieces` are the estimated blocks themselves; `subspaces` and
/// `coefficients` are their truncated-SVD factors under the chosen rank rule.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDecomposition {
    pub pieces: Vec<CMat>,
    pub subspaces: Vec<CMat>,
    pub coefficients: Vec<CMat>,
    pub ranks: Vec<usize>,
    pub index_sets: Vec<Range<usize>>,
}

impl PiecewiseDecomposition {
    pub fn new(h0_hat: &CMat, q_pieces: usize, rule: RankRule) -> Result<Self> {
        let index_sets = partition_indices(h0_hat.ncols(), q_pieces)?;
        let mut out = Self {
            pieces: Vec::with_capacity(q_pieces),
            subspaces: Vec::with_capacity(q_pieces),
            coefficients: Vec::with_capacity(q_pieces),
            ranks: Vec::with_capacity(q_pieces),
            index_sets,
        };
        for range in &out.index_sets {
            let piece = h0_hat.columns(range.start, range.len()).into_owned();
            let factors = low_rank_decompose(&piece, rule)?;
            out.pieces.push(piece);
            out.subspaces.push(factors.subspace);
            out.coefficients.push(factors.coefficients);
            out.ranks.push(factors.rank);
        }
        Ok(out)
    }

    pub fn q_pieces(&self) -> usize {
        self.pieces.len()
    }

    pub fn m_sub(&self) -> usize {
        self.index_sets.first().map_or(0, |r| r.len())
    }

    /// `[H_[1,0] ... H_[Q,0]]`.
    pub fn initial_channel(&self) -> CMat {
        hcat(&self.pieces)
    }

    /// `[S_1 T_1 ... S_Q T_Q]`.
    pub fn low_rank_channel(&self) -> CMat {
        let blocks: Vec<CMat> = self
            .subspaces
            .iter()
            .zip(&self.coefficients)
            .map(|(s, t)| s * t)
            .collect();
        hcat(&blocks)
    }

    pub fn to_dump(&self) -> DecompositionDump {
        DecompositionDump {
            index_sets: self.index_sets.iter().map(|r| [r.start, r.end]).collect(),
            ranks: self.ranks.clone(),
            pieces: self.pieces.iter().map(ComplexMatrixDump::from).collect(),
            subspaces: self.subspaces.iter().map(ComplexMatrixDump::from).collect(),
            coefficients: self.coefficients.iter().map(ComplexMatrixDump::from).collect(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_dump())?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let dump: DecompositionDump = serde_json::from_reader(file)?;
        dump.into_decomposition()
    }
}

/// JSON fixture layout of a [`PiecewiseDecomposition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionDump {
    pub index_sets: Vec<[usize; 2]>,
    pub ranks: Vec<usize>,
    pub pieces: Vec<ComplexMatrixDump>,
    pub subspaces: Vec<ComplexMatrixDump>,
    pub coefficients: Vec<ComplexMatrixDump>,
}

impl DecompositionDump {
    pub fn into_decomposition(self) -> Result<PiecewiseDecomposition> {
        let q = self.index_sets.len();
        if [
            self.ranks.len(),
            self.pieces.len(),
            self.subspaces.len(),
            self.coefficients.len(),
        ]
        .iter()
        .any(|&l| l != q)
        {
            return Err(Error::DimensionMismatch("decomposition dump has ragged fields".into()));
        }
        let convert = |v: Vec<ComplexMatrixDump>| v.iter().map(|d| d.to_matrix()).collect::<Result<Vec<_>>>();
        Ok(PiecewiseDecomposition {
            pieces: convert(self.pieces)?,
            subspaces: convert(self.subspaces)?,
            coefficients: convert(self.coefficients)?,
            ranks: self.ranks,
            index_sets: self.index_sets.into_iter().map(|[a, b]| a..b).collect(),
        })
    }
}

/// `[H_[1,0] diag(d_[1,t]) ... H_[Q,0] diag(d_[Q,t])]`.
pub fn reconstruct_effective(decomp: &PiecewiseDecomposition, d: &SmallTimescaleChannel) -> Result<CMat> {
    reconstruct_from_pieces(&decomp.pieces, d)
}

pub fn reconstruct_from_pieces(pieces: &[CMat], d: &SmallTimescaleChannel) -> Result<CMat> {
    if pieces.len() != d.pieces.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} channel pieces but {} small-timescale pieces",
            pieces.len(),
            d.pieces.len()
        )));
    }
    let mut blocks = Vec::with_capacity(pieces.len());
    for (q, (h, dq)) in pieces.iter().zip(&d.pieces).enumerate() {
        if h.ncols() != dq.len() {
            return Err(Error::DimensionMismatch(format!(
                "piece {q}: {} columns vs {} small-timescale entries",
                h.ncols(),
                dq.len()
            )));
        }
        blocks.push(scale_columns(h, dq));
    }
    Ok(hcat(&blocks))
}

/// Accuracy of the initial large-timescale estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialAccuracy {
    Perfect,
    /// Target `||E||_F^2 / ||H||_F^2` in dB, at most 0.
    Db(f64),
}

impl InitialAccuracy {
    pub fn label(self) -> String {
        match self {
            InitialAccuracy::Perfect => "perfect".into(),
            InitialAccuracy::Db(db) => format!("{db}"),
        }
    }
}

impl std::str::FromStr for InitialAccuracy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("perfect") {
            return Ok(InitialAccuracy::Perfect);
        }
        s.parse::<f64>()
            .map(InitialAccuracy::Db)
            .map_err(|_| Error::InvalidArgument(format!("initial accuracy `{s}` is neither `perfect` nor a dB value")))
    }
}

/// Adds i.i.d. complex Gaussian error rescaled to hit the target NMSE exactly.
pub fn perturb_initial<R: Rng + ?Sized>(h0_eff: &CMat, accuracy: InitialAccuracy, rng: &mut R) -> Result<CMat> {
    let db = match accuracy {
        InitialAccuracy::Perfect => return Ok(h0_eff.clone()),
        InitialAccuracy::Db(db) if !(db <= 0.0) => {
            return Err(Error::InvalidArgument(format!(
                "initial accuracy must be <= 0 dB, got {db}"
            )))
        }
        InitialAccuracy::Db(db) => db,
    };
    let signal = fro_norm_sqr(h0_eff);
    if signal == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let err = random_matrix(h0_eff.nrows(), h0_eff.ncols(), rng);
    let scale = (10f64.powf(db / 10.0) * signal / fro_norm_sqr(&err)).sqrt();
    Ok(h0_eff + err * Complex64::new(scale, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_vector, vec_norm_sqr};
    use crate::rng::seeded;

    #[test]
    fn partitions() {
        let p = partition_indices(512, 16).unwrap();
        assert_eq!(p.len(), 16);
        assert_eq!(p[0], 0..32);
        assert!(p.iter().all(|r| r.len() == 32));
        assert_eq!(partition_indices(10, 1).unwrap(), vec![0..10]);
        assert_eq!(partition_indices(8, 4).unwrap(), vec![0..2, 2..4, 4..6, 6..8]);
        assert!(partition_indices(10, 3).is_err());
    }

    #[test]
    fn truth_special_cases() {
        let mut rng = seeded(1);
        let h0 = random_vector(8, &mut rng);
        let d = small_timescale_truth(&h0, &h0, 2, 0).unwrap();
        assert!(d.full().iter().all(|z| (*z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let two = &h0 * Complex64::new(2.0, 0.0);
        let d = small_timescale_truth(&h0, &two, 4, 1).unwrap();
        assert!(d.full().iter().all(|z| (*z - Complex64::new(2.0, 0.0)).norm() < 1e-14));
        assert_eq!(d.pieces.len(), 4);
    }

    #[test]
    fn truth_inverts_elementwise() {
        let mut rng = seeded(2);
        let h0 = random_vector(16, &mut rng);
        let ht = random_vector(16, &mut rng);
        let d = small_timescale_truth(&h0, &ht, 4, 3).unwrap().full();
        let back = h0.component_mul(&d);
        assert!((back - &ht).norm() <= 1e-12 * ht.norm());
    }

    #[test]
    fn truth_names_degenerate_indices() {
        let mut rng = seeded(3);
        let mut h0 = random_vector(8, &mut rng);
        h0[5] = Complex64::new(0.0, 0.0);
        let ht = random_vector(8, &mut rng);
        match small_timescale_truth(&h0, &ht, 2, 1) {
            Err(Error::DegenerateChannel { indices }) => assert_eq!(indices, vec![5]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn full_rank_decomposition_is_exact() {
        let mut rng = seeded(4);
        let piece = random_matrix(12, 5, &mut rng);
        let f = low_rank_decompose(&piece, RankRule::Fixed(5)).unwrap();
        assert!((f.product() - &piece).norm() <= 1e-10 * piece.norm());
        let gram = f.subspace.adjoint() * &f.subspace;
        assert!((gram - CMat::identity(5, 5)).norm() < 1e-10);
        assert!(low_rank_decompose(&piece, RankRule::Fixed(6)).is_err());
        assert!(matches!(
            low_rank_decompose(&CMat::zeros(3, 3), RankRule::Fixed(1)),
            Err(Error::ZeroMatrix)
        ));
    }

    #[test]
    fn rank_one_exact() {
        let mut rng = seeded(5);
        let piece = random_vector(7, &mut rng) * random_vector(4, &mut rng).transpose();
        let f = low_rank_decompose(&piece, RankRule::Fixed(1)).unwrap();
        assert!((f.product() - &piece).norm() <= 1e-12 * piece.norm());
        let t = low_rank_decompose(&piece, RankRule::Threshold(1e-6)).unwrap();
        assert_eq!(t.rank, 1);
    }

    #[test]
    fn reconstruction_with_unit_d_returns_initial() {
        let mut rng = seeded(6);
        let h0 = random_matrix(6, 8, &mut rng);
        let dec = PiecewiseDecomposition::new(&h0, 4, RankRule::Threshold(0.0)).unwrap();
        let ones = SmallTimescaleChannel::identity(8, 4).unwrap();
        assert_eq!(reconstruct_effective(&dec, &ones).unwrap(), h0);
        let short = SmallTimescaleChannel::identity(8, 2).unwrap();
        assert!(reconstruct_effective(&dec, &short).is_err());
    }

    #[test]
    fn perturbation_targets() {
        let mut rng = seeded(7);
        let h = random_matrix(8, 16, &mut rng);
        assert_eq!(perturb_initial(&h, InitialAccuracy::Perfect, &mut rng).unwrap(), h);
        let noisy = perturb_initial(&h, InitialAccuracy::Db(-20.0), &mut rng).unwrap();
        let nmse_db = 10.0 * (fro_norm_sqr(&(&noisy - &h)) / fro_norm_sqr(&h)).log10();
        assert!((nmse_db + 20.0).abs() < 0.01);
        let unit = perturb_initial(&h, InitialAccuracy::Db(0.0), &mut rng).unwrap();
        assert!(((&unit - &h).norm() - h.norm()).abs() <= 1e-10 * h.norm());
        assert!(perturb_initial(&h, InitialAccuracy::Db(3.0), &mut rng).is_err());
    }

    #[test]
    fn accuracy_parsing() {
        assert_eq!("perfect".parse::<InitialAccuracy>().unwrap(), InitialAccuracy::Perfect);
        assert_eq!("-10".parse::<InitialAccuracy>().unwrap(), InitialAccuracy::Db(-10.0));
        assert!("loud".parse::<InitialAccuracy>().is_err());
    }

    #[test]
    fn decomposition_json_round_trip() {
        let mut rng = seeded(8);
        let h0 = random_matrix(5, 6, &mut rng);
        let dec = PiecewiseDecomposition::new(&h0, 3, RankRule::Fixed(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dec.json");
        dec.write_json(&path).unwrap();
        assert_eq!(PiecewiseDecomposition::read_json(&path).unwrap(), dec);
        assert!(vec_norm_sqr(&CVec::zeros(0)) == 0.0);
    }
}
