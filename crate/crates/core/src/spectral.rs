//! Eigenvalue-ratio and condition-number diagnostics.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_defect, hermitian_eigenvalues, singular_values, CMat};

/// Relative floor applied to eigenvalue ratios before taking `log10`.
pub const EIGEN_FLOOR: f64 = 1e-15;

/// `lambda_min <= SINGULAR_THRESHOLD * lambda_max` is reported as singular.
pub const SINGULAR_THRESHOLD: f64 = 1e-15;

/// Value substituted for a singular matrix when averaging condition numbers.
pub const SINGULAR_KAPPA_CAP: f64 = 15.0;

/// Tolerance on `|G - G^H|` relative to the largest entry of `G`.
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    /// `ratios[n - 1] = log10(lambda_n / lambda_1)`, non-increasing, first entry 0.
    pub ratios: Vec<f64>,
    /// Eigenvalues of `H H^H`, descending.
    pub eigenvalues: Vec<f64>,
}

impl SpectrumReport {
    /// Count of eigenvalues at or above `rel * lambda_1`.
    pub fn count_above(&self, rel: f64) -> usize {
        let threshold = rel.log10();
        self.ratios.iter().filter(|&&z| z >= threshold).count()
    }

    /// CSV with header `n,zeta`, `n` starting at 1.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "zeta"])?;
        for (i, z) in self.ratios.iter().enumerate() {
            w.write_record([(i + 1).to_string(), format!("{z:.12e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `zeta_n = log10(|lambda_n| / |lambda_1|)` for the eigenvalues of `H H^H`.
///
/// Eigenvalues are taken as squared singular values of `H`, which keeps the
/// small end of the spectrum accurate; `H H^H` has `N - min(N, M)` extra zeros.
pub fn relative_eigenvalue_ratios(h: &CMat) -> Result<SpectrumReport> {
    let n = h.nrows();
    let mut eigenvalues: Vec<f64> = singular_values(h).into_iter().map(|s| s * s).collect();
    eigenvalues.resize(n, 0.0);
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let ratios = eigenvalues
        .iter()
        .map(|&l| (l / top).max(EIGEN_FLOOR).log10())
        .collect();
    Ok(SpectrumReport { ratios, eigenvalues })
}

/// `log10` condition number of a Hermitian PSD matrix, or a singular marker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Conditioning {
    Finite(f64),
    Singular,
}

impl Conditioning {
    pub fn is_singular(self) -> bool {
        matches!(self, Conditioning::Singular)
    }

    /// The value used in averages and plots; singular maps to [`SINGULAR_KAPPA_CAP`].
    pub fn capped(self) -> f64 {
        match self {
            Conditioning::Finite(k) => k.min(SINGULAR_KAPPA_CAP),
            Conditioning::Singular => SINGULAR_KAPPA_CAP,
        }
    }

    /// Classifies a `lambda_max / lambda_min` pair.
    pub fn from_extremes(max: f64, min: f64) -> Self {
        if max <= 0.0 || min <= SINGULAR_THRESHOLD * max {
            Conditioning::Singular
        } else {
            Conditioning::Finite((max / min).log10())
        }
    }
}

/// `kappa(G) = log10(lambda_max / lambda_min)` of a Hermitian matrix.
pub fn condition_number(g: &CMat) -> Result<Conditioning> {
    if !g.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "condition number of a {}x{} matrix",
            g.nrows(),
            g.ncols()
        )));
    }
    let defect = hermitian_defect(g);
    if defect > HERMITIAN_TOL {
        return Err(Error::NotHermitian(defect));
    }
    let eig = hermitian_eigenvalues(g);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Conditioning::from_extremes(max, min))
}
