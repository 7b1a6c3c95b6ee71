//! Near-field RIS-BS and User-RIS channel synthesis.
//!
//! The RIS-BS channel is a double-sided spherical-wavefront LoS matrix masked
//! by a visual-region (VR) blocking matrix, plus NLoS paths bounced off point
//! scatterers:
//!
//! ```text
//! H_rb = A o F + H_nlos,     A(n, m) = exp(j k r_nm) / r_nm
//! h_ur = a o f + h_nlos,     a(m)    = exp(j k r_m)  / r_m
//! ```
//!
//! Both arrays are half-wavelength ULAs laid along the y-axis and centred on
//! the configured coordinates. Comparison models (far-field sparse, i.i.d.
//! Rayleigh) share the [`ChannelRealization`] container so every estimator
//! runs unchanged on them.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::dump::{pairs_to_vector, vector_to_pairs, ComplexMatrixDump};
use crate::error::{Error, Result};
use crate::linalg::{fro_norm_sqr, random_matrix, random_vector, scale_columns, vec_norm_sqr, CMat, CVec};
use crate::rng::complex_normal;

pub type Point3 = [f64; 3];

/// Relative magnitude below which an entry of `h_0` is treated as zero.
pub const DEGENERACY_FLOOR: f64 = 1e-12;

/// Scatterers closer than this to any array centre are redrawn.
const MIN_SCATTERER_DISTANCE_M: f64 = 1.0;
/// Lateral padding of the scatterer box around the two endpoints.
const SCATTERER_BOX_PADDING_M: f64 = 10.0;

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub element_positions: Vec<Point3>,
    pub aperture_m: f64,
}

impl ArrayGeometry {
    /// Uniform linear array along the y-axis, centred on `center`.
    pub fn ula(center: Point3, count: usize, spacing: f64) -> Self {
        let mid = (count as f64 - 1.0) / 2.0;
        let element_positions = (0..count)
            .map(|i| [center[0], center[1] + (i as f64 - mid) * spacing, center[2]])
            .collect();
        Self {
            element_positions,
            aperture_m: count.saturating_sub(1) as f64 * spacing,
        }
    }

    pub fn len(&self) -> usize {
        self.element_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.element_positions.is_empty()
    }

    pub fn bs(config: &SystemConfig) -> Self {
        Self::ula(config.bs_position, config.n_bs, config.wavelength() / 2.0)
    }

    pub fn ris(config: &SystemConfig) -> Self {
        Self::ula(config.ris_position, config.m_ris, config.wavelength() / 2.0)
    }
}

/// MIMO advanced Rayleigh distance `4 D_bs D_ris / lambda` in meters.
pub fn mimo_ard(config: &SystemConfig) -> Result<f64> {
    config.validate()?;
    let bs = ArrayGeometry::bs(config);
    let ris = ArrayGeometry::ris(config);
    Ok(advanced_rayleigh_distance(
        bs.aperture_m,
        ris.aperture_m,
        config.wavelength(),
    ))
}

/// MIMO Rayleigh distance `2 D_ris^2 / lambda` in meters.
pub fn mimo_rd(config: &SystemConfig) -> Result<f64> {
    config.validate()?;
    let ris = ArrayGeometry::ris(config);
    Ok(rayleigh_distance(ris.aperture_m, config.wavelength()))
}

pub fn advanced_rayleigh_distance(d_bs: f64, d_ris: f64, wavelength: f64) -> f64 {
    4.0 * d_bs * d_ris / wavelength
}

pub fn rayleigh_distance(d_ris: f64, wavelength: f64) -> f64 {
    2.0 * d_ris * d_ris / wavelength
}

fn spherical_response(r: f64, wave_number: f64) -> Complex64 {
    Complex64::from_polar(1.0 / r, wave_number * r)
}

/// Double-sided LoS matrix `A(n, m) = exp(j k r_nm) / r_nm`.
pub fn los_matrix(bs: &ArrayGeometry, ris: &ArrayGeometry, wave_number: f64) -> Result<CMat> {
    let mut out = CMat::zeros(bs.len(), ris.len());
    for (m, pm) in ris.element_positions.iter().enumerate() {
        for (n, pn) in bs.element_positions.iter().enumerate() {
            let r = distance(pn, pm);
            if r <= 0.0 {
                return Err(Error::ZeroDistance(format!("BS element {n} and RIS element {m}")));
            }
            out[(n, m)] = spherical_response(r, wave_number);
        }
    }
    Ok(out)
}

/// Single-sided LoS vector `a(m) = exp(j k r_m) / r_m` towards `point`.
pub fn los_vector(ris: &ArrayGeometry, point: &Point3, wave_number: f64) -> Result<CVec> {
    let mut out = CVec::zeros(ris.len());
    for (m, pm) in ris.element_positions.iter().enumerate() {
        let r = distance(pm, point);
        if r <= 0.0 {
            return Err(Error::ZeroDistance(format!("RIS element {m} and point {point:?}")));
        }
        out[m] = spherical_response(r, wave_number);
    }
    Ok(out)
}

/// Binary blocking mask, each entry 1 with probability `p`.
pub fn sample_vr<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Result<DMatrix<u8>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("VR probability {p} outside [0, 1]")));
    }
    let data: Vec<u8> = (0..rows * cols).map(|_| u8::from(rng.random::<f64>() < p)).collect();
    Ok(DMatrix::from_vec(rows, cols, data))
}

/// Hadamard product of a channel matrix with a binary mask.
pub fn apply_mask(m: &CMat, mask: &DMatrix<u8>) -> CMat {
    assert_eq!(m.shape(), mask.shape(), "apply_mask: shape mismatch");
    m.zip_map(mask, |z, f| if f == 1 { z } else { Complex64::new(0.0, 0.0) })
}

/// Which generator produces a realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelModel {
    /// Spherical-wavefront LoS with VR blocking and scatterer NLoS paths.
    NearField,
    /// Far-field planar-wave channel with `L + 1` paths.
    Sparse,
    /// I.i.d. unit-variance complex Gaussian entries.
    Rayleigh,
}

impl ChannelModel {
    pub const ALL: [ChannelModel; 3] = [ChannelModel::NearField, ChannelModel::Sparse, ChannelModel::Rayleigh];

    pub fn name(self) -> &'static str {
        match self {
            ChannelModel::NearField => "near-field",
            ChannelModel::Sparse => "sparse",
            ChannelModel::Rayleigh => "rayleigh",
        }
    }
}

impl std::str::FromStr for ChannelModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "near-field" | "nearfield" | "considered" => Ok(ChannelModel::NearField),
            "sparse" => Ok(ChannelModel::Sparse),
            "rayleigh" => Ok(ChannelModel::Rayleigh),
            other => Err(Error::InvalidArgument(format!("unknown channel model `{other}`"))),
        }
    }
}

/// One draw of the quasi-static RIS-BS channel.
#[derive(Debug, Clone)]
pub struct RisBsDraw {
    pub h_rb: CMat,
    pub vr_matrix: DMatrix<u8>,
    /// `||A||_F^2` of the unblocked LoS term (zero for Rayleigh).
    pub los_power: f64,
    /// Realized `||H_l||_F^2` of each NLoS path.
    pub nlos_path_powers: Vec<f64>,
}

/// One draw of the User-RIS channel for a single block.
#[derive(Debug, Clone)]
pub struct UserDraw {
    pub h_ur: CVec,
    pub vr_vector: DVector<u8>,
    pub user_position: Option<Point3>,
    pub los_power: f64,
    pub nlos_path_powers: Vec<f64>,
}

/// A RIS-BS channel together with T User-RIS channels and the resulting
/// effective channels `H_t = H_rb diag(h_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h_rb: CMat,
    pub h_ur_seq: Vec<CVec>,
    pub h_eff_seq: Vec<CMat>,
    pub vr_matrix: DMatrix<u8>,
    pub vr_vector_seq: Vec<DVector<u8>>,
}

impl ChannelRealization {
    /// Builds the effective channels and rejects a degenerate `h_0`.
    pub fn from_parts(rb: RisBsDraw, users: Vec<UserDraw>) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::InvalidArgument("need at least one user-RIS block".into()));
        }
        let m = rb.h_rb.ncols();
        if let Some(bad) = users.iter().find(|u| u.h_ur.len() != m) {
            return Err(Error::DimensionMismatch(format!(
                "user-RIS vector has {} entries, RIS-BS channel has {m} columns",
                bad.h_ur.len()
            )));
        }
        let degenerate = degenerate_indices(&users[0].h_ur);
        if !degenerate.is_empty() {
            return Err(Error::DegenerateChannel { indices: degenerate });
        }
        let h_eff_seq = users.iter().map(|u| scale_columns(&rb.h_rb, &u.h_ur)).collect();
        let (h_ur_seq, vr_vector_seq) = users.into_iter().map(|u| (u.h_ur, u.vr_vector)).unzip();
        Ok(Self {
            h_rb: rb.h_rb,
            h_ur_seq,
            h_eff_seq,
            vr_matrix: rb.vr_matrix,
            vr_vector_seq,
        })
    }

    pub fn n_bs(&self) -> usize {
        self.h_rb.nrows()
    }

    pub fn m_ris(&self) -> usize {
        self.h_rb.ncols()
    }

    pub fn t_blocks(&self) -> usize {
        self.h_ur_seq.len()
    }

    pub fn to_dump(&self) -> ChannelDump {
        ChannelDump {
            n_bs: self.n_bs(),
            m_ris: self.m_ris(),
            t_blocks: self.t_blocks(),
            h_rb: ComplexMatrixDump::from(&self.h_rb),
            h_ur_seq: self.h_ur_seq.iter().map(vector_to_pairs).collect(),
            vr_matrix: self.vr_matrix.iter().copied().collect(),
            vr_vector_seq: self.vr_vector_seq.iter().map(|f| f.iter().copied().collect()).collect(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_dump())?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let dump: ChannelDump = serde_json::from_reader(file)?;
        dump.into_realization()
    }
}

/// JSON fixture layout of a [`ChannelRealization`].
///
/// Matrices are column-major with `[re, im]` entries; masks are column-major
/// 0/1 bytes. Effective channels are not stored, they are recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDump {
    pub n_bs: usize,
    pub m_ris: usize,
    pub t_blocks: usize,
    pub h_rb: ComplexMatrixDump,
    pub h_ur_seq: Vec<Vec<[f64; 2]>>,
    pub vr_matrix: Vec<u8>,
    pub vr_vector_seq: Vec<Vec<u8>>,
}

impl ChannelDump {
    pub fn into_realization(self) -> Result<ChannelRealization> {
        let h_rb = self.h_rb.to_matrix()?;
        if h_rb.shape() != (self.n_bs, self.m_ris) || self.vr_matrix.len() != self.n_bs * self.m_ris {
            return Err(Error::DimensionMismatch(
                "channel dump header disagrees with payload".into(),
            ));
        }
        if self.h_ur_seq.len() != self.t_blocks || self.vr_vector_seq.len() != self.t_blocks {
            return Err(Error::DimensionMismatch("channel dump block count mismatch".into()));
        }
        let rb = RisBsDraw {
            h_rb,
            vr_matrix: DMatrix::from_vec(self.n_bs, self.m_ris, self.vr_matrix),
            los_power: 0.0,
            nlos_path_powers: Vec::new(),
        };
        let users = self
            .h_ur_seq
            .iter()
            .zip(self.vr_vector_seq)
            .map(|(h, f)| UserDraw {
                h_ur: pairs_to_vector(h),
                vr_vector: DVector::from_vec(f),
                user_position: None,
                los_power: 0.0,
                nlos_path_powers: Vec::new(),
            })
            .collect();
        ChannelRealization::from_parts(rb, users)
    }
}

/// Indices of `h` whose magnitude falls below the degeneracy floor relative to its RMS.
pub fn degenerate_indices(h: &CVec) -> Vec<usize> {
    if h.is_empty() {
        return Vec::new();
    }
    let rms = (vec_norm_sqr(h) / h.len() as f64).sqrt();
    h.iter()
        .enumerate()
        .filter(|(_, z)| rms == 0.0 || z.norm() < DEGENERACY_FLOOR * rms)
        .map(|(i, _)| i)
        .collect()
}

fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Uniform point in the box spanned by two endpoints, padded laterally, kept
/// away from both endpoints.
fn sample_scatterer<R: Rng + ?Sized>(a: &Point3, b: &Point3, rng: &mut R) -> Point3 {
    loop {
        let mut p = [0.0; 3];
        for (axis, slot) in p.iter_mut().enumerate() {
            let pad = if axis == 0 { 0.0 } else { SCATTERER_BOX_PADDING_M };
            let lo = a[axis].min(b[axis]) - pad;
            let hi = a[axis].max(b[axis]) + pad;
            *slot = if hi > lo { rng.random_range(lo..hi) } else { lo };
        }
        if distance(&p, a) >= MIN_SCATTERER_DISTANCE_M && distance(&p, b) >= MIN_SCATTERER_DISTANCE_M {
            return p;
        }
    }
}

fn near_field_ris_bs<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Result<RisBsDraw> {
    let k = config.wave_number();
    let bs = ArrayGeometry::bs(config);
    let ris = ArrayGeometry::ris(config);
    let los = los_matrix(&bs, &ris, k)?;
    let los_power = fro_norm_sqr(&los);
    let vr_matrix = sample_vr(config.n_bs, config.m_ris, config.vr_prob, rng)?;
    let mut h_rb = apply_mask(&los, &vr_matrix);

    let target = db_to_power(config.nlos_attenuation_db) * los_power;
    let mut nlos_path_powers = Vec::with_capacity(config.nlos_paths_rb);
    for _ in 0..config.nlos_paths_rb {
        let scatterer = sample_scatterer(&config.bs_position, &config.ris_position, rng);
        let b = los_vector(&bs, &scatterer, k)?;
        let c = los_vector(&ris, &scatterer, k)?;
        let gain = complex_normal(rng) * (target / (vec_norm_sqr(&b) * vec_norm_sqr(&c))).sqrt();
        let path = (&b * c.transpose()) * gain;
        nlos_path_powers.push(fro_norm_sqr(&path));
        h_rb += path;
    }
    Ok(RisBsDraw {
        h_rb,
        vr_matrix,
        los_power,
        nlos_path_powers,
    })
}

fn near_field_user<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Result<UserDraw> {
    let k = config.wave_number();
    let ris = ArrayGeometry::ris(config);
    let [lo, hi] = config.user_distance_range;
    let d = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let user = [-d, config.user_offset[0], config.user_offset[1]];
    let los = los_vector(&ris, &user, k)?;
    let los_power = vec_norm_sqr(&los);
    let vr = sample_vr(config.m_ris, 1, config.vr_prob, rng)?;
    let vr_vector = DVector::from_iterator(config.m_ris, vr.iter().copied());
    let mut h_ur = los.zip_map(&vr_vector, |z, f| if f == 1 { z } else { Complex64::new(0.0, 0.0) });

    let target = db_to_power(config.nlos_attenuation_db) * los_power;
    let mut nlos_path_powers = Vec::with_capacity(config.nlos_paths_ur);
    for _ in 0..config.nlos_paths_ur {
        let scatterer = sample_scatterer(&user, &config.ris_position, rng);
        let c = los_vector(&ris, &scatterer, k)?;
        let gain = complex_normal(rng) * (target / vec_norm_sqr(&c)).sqrt();
        let path = c * gain;
        nlos_path_powers.push(vec_norm_sqr(&path));
        h_ur += path;
    }
    Ok(UserDraw {
        h_ur,
        vr_vector,
        user_position: Some(user),
        los_power,
        nlos_path_powers,
    })
}

/// Far-field ULA steering vector `exp(j pi i sin(theta))`.
pub fn steering_vector(len: usize, theta: f64) -> CVec {
    CVec::from_fn(len, |i, _| {
        Complex64::from_polar(1.0, std::f64::consts::PI * i as f64 * theta.sin())
    })
}

fn random_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2)
}

fn sparse_ris_bs<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> RisBsDraw {
    let d = distance(&config.bs_position, &config.ris_position).max(1.0);
    let nlos_amp = db_to_power(config.nlos_attenuation_db).sqrt();
    let mut h_rb = CMat::zeros(config.n_bs, config.m_ris);
    let mut nlos_path_powers = Vec::new();
    let mut los_power = 0.0;
    for l in 0..=config.nlos_paths_rb {
        let gain = if l == 0 {
            Complex64::from_polar(1.0 / d, rng.random_range(0.0..std::f64::consts::TAU))
        } else {
            complex_normal(rng) * (nlos_amp / d)
        };
        let a_bs = steering_vector(config.n_bs, random_angle(rng));
        let a_ris = steering_vector(config.m_ris, random_angle(rng));
        let path = (a_bs * a_ris.adjoint()) * gain;
        let p = fro_norm_sqr(&path);
        if l == 0 {
            los_power = p;
        } else {
            nlos_path_powers.push(p);
        }
        h_rb += path;
    }
    RisBsDraw {
        h_rb,
        vr_matrix: DMatrix::from_element(config.n_bs, config.m_ris, 1),
        los_power,
        nlos_path_powers,
    }
}

fn sparse_user<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> UserDraw {
    let [lo, hi] = config.user_distance_range;
    let d = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let nlos_amp = db_to_power(config.nlos_attenuation_db).sqrt();
    let mut h_ur = CVec::zeros(config.m_ris);
    let mut nlos_path_powers = Vec::new();
    let mut los_power = 0.0;
    for l in 0..=config.nlos_paths_ur {
        let gain = if l == 0 {
            Complex64::from_polar(1.0 / d, rng.random_range(0.0..std::f64::consts::TAU))
        } else {
            complex_normal(rng) * (nlos_amp / d)
        };
        let path = steering_vector(config.m_ris, random_angle(rng)) * gain;
        let p = vec_norm_sqr(&path);
        if l == 0 {
            los_power = p;
        } else {
            nlos_path_powers.push(p);
        }
        h_ur += path;
    }
    UserDraw {
        h_ur,
        vr_vector: DVector::from_element(config.m_ris, 1),
        user_position: None,
        los_power,
        nlos_path_powers,
    }
}

/// Draws the RIS-BS channel of `model`.
pub fn sample_ris_bs<R: Rng + ?Sized>(model: ChannelModel, config: &SystemConfig, rng: &mut R) -> Result<RisBsDraw> {
    config.validate()?;
    Ok(match model {
        ChannelModel::NearField => near_field_ris_bs(config, rng)?,
        ChannelModel::Sparse => sparse_ris_bs(config, rng),
        ChannelModel::Rayleigh => RisBsDraw {
            h_rb: random_matrix(config.n_bs, config.m_ris, rng),
            vr_matrix: DMatrix::from_element(config.n_bs, config.m_ris, 1),
            los_power: 0.0,
            nlos_path_powers: Vec::new(),
        },
    })
}

/// Draws `t_blocks` independent User-RIS channels of `model`.
pub fn sample_user_sequence<R: Rng + ?Sized>(
    model: ChannelModel,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<Vec<UserDraw>> {
    config.validate()?;
    (0..config.t_blocks)
        .map(|_| {
            Ok(match model {
                ChannelModel::NearField => near_field_user(config, rng)?,
                ChannelModel::Sparse => sparse_user(config, rng),
                ChannelModel::Rayleigh => UserDraw {
                    h_ur: random_vector(config.m_ris, rng),
                    vr_vector: DVector::from_element(config.m_ris, 1),
                    user_position: None,
                    los_power: 0.0,
                    nlos_path_powers: Vec::new(),
                },
            })
        })
        .collect()
}

/// Near-field realization: `H_rb = A o F + H_nlos`, `h_t = a_t o f_t + h_nlos,t`.
pub fn assemble_channels<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Result<ChannelRealization> {
    sample_channel(ChannelModel::NearField, config, rng)
}

/// Sparse far-field or Rayleigh realization for comparison studies.
pub fn sample_comparison_channel<R: Rng + ?Sized>(
    model: ChannelModel,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<ChannelRealization> {
    sample_channel(model, config, rng)
}

pub fn sample_channel<R: Rng + ?Sized>(
    model: ChannelModel,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let rb = sample_ris_bs(model, config, rng)?;
    let users = sample_user_sequence(model, config, rng)?;
    ChannelRealization::from_parts(rb, users)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::numerical_rank;
    use crate::rng::seeded;

    fn tiny_config() -> SystemConfig {
        SystemConfig {
            n_bs: 4,
            m_ris: 8,
            n_rf: 2,
            q_pieces: 2,
            t_blocks: 3,
            ..SystemConfig::desk()
        }
    }

    #[test]
    fn ard_reference_values() {
        let ard = mimo_ard(&SystemConfig::paper()).unwrap();
        // 127 * 511 * lambda with lambda = c / 100 GHz
        assert!((ard - 194.7).abs() < 0.3, "ard {ard}");
        assert_eq!(advanced_rayleigh_distance(1.0, 1.0, 0.01), 400.0);
        let single = SystemConfig {
            n_bs: 1,
            n_rf: 1,
            ..SystemConfig::paper()
        };
        assert_eq!(mimo_ard(&single).unwrap(), 0.0);
    }

    #[test]
    fn rd_reference_values() {
        let rd = mimo_rd(&SystemConfig::paper()).unwrap();
        let lambda = SystemConfig::paper().wavelength();
        let d_ris = 511.0 * lambda / 2.0;
        assert!((rd - 2.0 * d_ris * d_ris / lambda).abs() < 1e-9);
        assert!((rd - 391.7).abs() < 0.5, "rd {rd}");
        assert_eq!(rayleigh_distance(1.0, 0.01), 200.0);
        let single = SystemConfig {
            m_ris: 1,
            q_pieces: 1,
            ..SystemConfig::paper()
        };
        assert_eq!(mimo_rd(&single).unwrap(), 0.0);
    }

    #[test]
    fn ula_spacing_and_aperture() {
        let cfg = SystemConfig::desk();
        let lambda = cfg.wavelength();
        let ris = ArrayGeometry::ris(&cfg);
        for w in ris.element_positions.windows(2) {
            let d = distance(&w[0], &w[1]);
            assert!((d - lambda / 2.0).abs() <= 1e-12 * lambda);
        }
        assert!((ris.aperture_m - (cfg.m_ris as f64 - 1.0) * lambda / 2.0).abs() < 1e-15);
    }

    #[test]
    fn los_single_entry() {
        let bs = ArrayGeometry {
            element_positions: vec![[0.0, 0.0, 0.0]],
            aperture_m: 0.0,
        };
        let ris = ArrayGeometry {
            element_positions: vec![[2.0, 0.0, 0.0]],
            aperture_m: 0.0,
        };
        let a = los_matrix(&bs, &ris, std::f64::consts::PI).unwrap();
        assert!((a[(0, 0)] - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        let v = los_vector(&ris, &[2.0, 10.0, 0.0], 3.0).unwrap();
        assert!((v[0] - Complex64::from_polar(0.1, 30.0)).norm() < 1e-15);
    }

    #[test]
    fn los_rejects_zero_distance() {
        let g = ArrayGeometry::ula([0.0; 3], 2, 0.5);
        assert!(matches!(los_matrix(&g, &g, 1.0), Err(Error::ZeroDistance(_))));
        assert!(matches!(
            los_vector(&g, &g.element_positions[1], 1.0),
            Err(Error::ZeroDistance(_))
        ));
    }

    #[test]
    fn los_vector_modulus_decreases_with_distance() {
        let cfg = SystemConfig::desk();
        let ris = ArrayGeometry::ris(&cfg);
        let user = [-25.0, -10.0, -5.0];
        let a = los_vector(&ris, &user, cfg.wave_number()).unwrap();
        let mut pairs: Vec<(f64, f64)> = ris
            .element_positions
            .iter()
            .zip(a.iter())
            .map(|(p, z)| (distance(p, &user), z.norm()))
            .collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        assert!(pairs.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn vr_extremes() {
        let mut rng = seeded(1);
        assert!(sample_vr(5, 7, 1.0, &mut rng).unwrap().iter().all(|&f| f == 1));
        assert!(sample_vr(5, 7, 0.0, &mut rng).unwrap().iter().all(|&f| f == 0));
        assert!(sample_vr(1, 1, -0.1, &mut rng).is_err());
    }

    #[test]
    fn vr_mask_is_idempotent() {
        let mut rng = seeded(2);
        let m = random_matrix(6, 6, &mut rng);
        let mask = sample_vr(6, 6, 0.5, &mut rng).unwrap();
        let once = apply_mask(&m, &mask);
        assert_eq!(apply_mask(&once, &mask), once);
    }

    #[test]
    fn unblocked_los_only_channel_equals_los_matrix() {
        let cfg = SystemConfig {
            vr_prob: 1.0,
            nlos_paths_rb: 0,
            nlos_paths_ur: 0,
            ..tiny_config()
        };
        let real = assemble_channels(&cfg, &mut seeded(5)).unwrap();
        let a = los_matrix(&ArrayGeometry::bs(&cfg), &ArrayGeometry::ris(&cfg), cfg.wave_number()).unwrap();
        assert_eq!(real.h_rb, a);
    }

    #[test]
    fn effective_channel_identity() {
        let real = assemble_channels(&tiny_config(), &mut seeded(9)).unwrap();
        for (h, heff) in real.h_ur_seq.iter().zip(&real.h_eff_seq) {
            let reference = &real.h_rb * CMat::from_diagonal(h);
            assert!((heff - &reference).norm() <= 1e-12 * reference.norm());
        }
        assert!(real.vr_matrix.iter().all(|&f| f <= 1));
        assert!(real.vr_vector_seq.iter().flat_map(|f| f.iter()).all(|&f| f <= 1));
    }

    #[test]
    fn same_seed_same_realization() {
        let cfg = tiny_config();
        let a = assemble_channels(&cfg, &mut seeded(17)).unwrap();
        let b = assemble_channels(&cfg, &mut seeded(17)).unwrap();
        assert_eq!(a, b);
        let c = assemble_channels(&cfg, &mut seeded(18)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_h0_is_flagged() {
        let cfg = tiny_config();
        let mut rng = seeded(3);
        let rb = sample_ris_bs(ChannelModel::NearField, &cfg, &mut rng).unwrap();
        let mut users = sample_user_sequence(ChannelModel::NearField, &cfg, &mut rng).unwrap();
        users[0].h_ur[3] = Complex64::new(0.0, 0.0);
        match ChannelRealization::from_parts(rb, users) {
            Err(Error::DegenerateChannel { indices }) => assert_eq!(indices, vec![3]),
            other => panic!("expected degenerate channel, got {other:?}"),
        }
    }

    #[test]
    fn sparse_single_path_is_rank_one() {
        let cfg = SystemConfig {
            nlos_paths_rb: 0,
            ..SystemConfig::desk()
        };
        let real = sample_comparison_channel(ChannelModel::Sparse, &cfg, &mut seeded(4)).unwrap();
        assert_eq!(numerical_rank(&real.h_rb, 1e-10), 1);
    }

    #[test]
    fn json_dump_round_trip() {
        let real = assemble_channels(&tiny_config(), &mut seeded(21)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("channel.json");
        real.write_json(&path).unwrap();
        let back = ChannelRealization::read_json(&path).unwrap();
        assert_eq!(real, back);
    }
}
