//! Dense complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;

use crate::rng::complex_normal;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const J: Complex64 = Complex64::new(0.0, 1.0);

pub fn cplx(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    // column-major fill keeps the draw order stable
    let data: Vec<Complex64> = (0..rows * cols).map(|_| complex_normal(rng)).collect();
    CMat::from_vec(rows, cols, data)
}

pub fn random_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> CVec {
    CVec::from_iterator(len, (0..len).map(|_| complex_normal(rng)))
}

/// `n x n` DFT matrix with entries `exp(-j 2 pi k l / n) * scale`.
pub fn dft_matrix(n: usize, scale: f64) -> CMat {
    CMat::from_fn(n, n, |k, l| {
        let phase = -2.0 * std::f64::consts::PI * ((k * l) % n) as f64 / n as f64;
        Complex64::from_polar(scale, phase)
    })
}

/// Sylvester Hadamard matrix scaled by `scale`; `None` unless `n` is a power of two.
pub fn hadamard_matrix(n: usize, scale: f64) -> Option<CMat> {
    if n == 0 || !n.is_power_of_two() {
        return None;
    }
    Some(CMat::from_fn(n, n, |k, l| {
        let sign = if (k & l).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        cplx(sign * scale, 0.0)
    }))
}

pub fn fro_norm_sqr(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn vec_norm_sqr(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `m * diag(d)`, i.e. column `j` of `m` scaled by `d[j]`.
pub fn scale_columns(m: &CMat, d: &CVec) -> CMat {
    assert_eq!(m.ncols(), d.len(), "scale_columns: length mismatch");
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= d[j];
    }
    out
}

/// Singular values in descending order.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values at or above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &CMat, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&max) if max > 0.0 => s.iter().filter(|&&x| x >= rel_tol * max).count(),
        _ => 0,
    }
}

/// Largest entry of `|m - m^H|` relative to the largest entry of `|m|`.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

/// Eigenvalues of a Hermitian matrix, sorted by descending absolute value.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    values
}

/// Horizontal concatenation of equally tall blocks.
pub fn hcat(blocks: &[CMat]) -> CMat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hcat: ragged blocks");
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

/// Vertical concatenation of equally wide blocks.
pub fn vcat(blocks: &[CMat]) -> CMat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vcat: ragged blocks");
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}
