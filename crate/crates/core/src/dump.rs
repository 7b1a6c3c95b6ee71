//! Plain serializable mirrors of complex matrices for JSON fixtures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cplx, CMat, CVec};

/// Column-major complex matrix; each entry is a `[re, im]` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrixDump {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&CMat> for ComplexMatrixDump {
    fn from(m: &CMat) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl ComplexMatrixDump {
    pub fn to_matrix(&self) -> Result<CMat> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch(format!(
                "dump declares {}x{} but holds {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(CMat::from_iterator(
            self.rows,
            self.cols,
            self.data.iter().map(|&[re, im]| cplx(re, im)),
        ))
    }
}

pub fn vector_to_pairs(v: &CVec) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

pub fn pairs_to_vector(p: &[[f64; 2]]) -> CVec {
    CVec::from_iterator(p.len(), p.iter().map(|&[re, im]| cplx(re, im)))
}
