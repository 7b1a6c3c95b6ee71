//! System configuration, presets and the TOML config file format.
//!
//! Every key of [`SystemConfig`] maps one-to-one to a TOML key. Keys that are
//! omitted from a file take the value of the `desk` preset, so a config file
//! only needs to list what it changes:
//!
//! ```toml
//! n_bs = 128
//! m_ris = 512
//! n_rf = 16
//! q_pieces = 16
//! carrier_hz = 100e9
//! bs_position = [100.0, -5.0, 0.0]
//! ris_position = [0.0, 0.0, 5.0]
//! user_offset = [-10.0, -5.0]
//! user_distance_range = [20.0, 30.0]
//! vr_prob = 0.95
//! nlos_paths_rb = 8
//! nlos_paths_ur = 8
//! nlos_attenuation_db = -15.0
//! t_blocks = 4
//! seed = 1
//! snr_db = 20.0
//! pilot_power = 1.0
//! trials = 1000
//! combiner_row_offset = 0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// BS antenna count N.
    pub n_bs: usize,
    /// RIS element count M.
    pub m_ris: usize,
    /// RF chains at the BS.
    pub n_rf: usize,
    /// Number of RIS pieces Q; must divide `m_ris`.
    pub q_pieces: usize,
    pub carrier_hz: f64,
    /// Array centres in meters.
    pub bs_position: [f64; 3],
    pub ris_position: [f64; 3],
    /// User (y, z) coordinates; the user sits at `(-d, y, z)`.
    pub user_offset: [f64; 2],
    /// Interval the user distance `d` is drawn from, uniformly.
    pub user_distance_range: [f64; 2],
    /// Probability that an element is not blocked.
    pub vr_prob: f64,
    pub nlos_paths_rb: usize,
    pub nlos_paths_ur: usize,
    /// Mean per-path NLoS power relative to the LoS path.
    pub nlos_attenuation_db: f64,
    /// Blocks per RIS-BS coherence time, T.
    pub t_blocks: usize,
    pub seed: u64,
    pub snr_db: f64,
    /// Pilot power P = |s|^2.
    pub pilot_power: f64,
    pub trials: usize,
    /// First DFT row used by the analog combiner.
    pub combiner_row_offset: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SystemConfig {
    /// Scaled-down configuration for quick sweeps.
    pub fn desk() -> Self {
        Self {
            n_bs: 32,
            m_ris: 128,
            n_rf: 8,
            q_pieces: 8,
            carrier_hz: 100e9,
            bs_position: [100.0, -5.0, 0.0],
            ris_position: [0.0, 0.0, 5.0],
            user_offset: [-10.0, -5.0],
            user_distance_range: [20.0, 30.0],
            vr_prob: 0.95,
            nlos_paths_rb: 8,
            nlos_paths_ur: 8,
            nlos_attenuation_db: -15.0,
            t_blocks: 4,
            seed: 1,
            snr_db: 20.0,
            pilot_power: 1.0,
            trials: 200,
            combiner_row_offset: 0,
        }
    }

    /// Full-size configuration: N=128, M=512, N_RF=16, Q=16, 1000 trials.
    pub fn paper() -> Self {
        Self {
            n_bs: 128,
            m_ris: 512,
            n_rf: 16,
            q_pieces: 16,
            trials: 1000,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [
            ("n_bs", self.n_bs),
            ("m_ris", self.m_ris),
            ("n_rf", self.n_rf),
            ("q_pieces", self.q_pieces),
            ("t_blocks", self.t_blocks),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.n_rf > self.n_bs {
            return bad(format!("n_rf ({}) exceeds n_bs ({})", self.n_rf, self.n_bs));
        }
        if self.m_ris % self.q_pieces != 0 {
            return bad(format!(
                "q_pieces ({}) does not divide m_ris ({})",
                self.q_pieces, self.m_ris
            ));
        }
        if !(0.0..=1.0).contains(&self.vr_prob) {
            return bad(format!("vr_prob {} outside [0, 1]", self.vr_prob));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return bad(format!("carrier_hz must be positive, got {}", self.carrier_hz));
        }
        let [lo, hi] = self.user_distance_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("invalid user_distance_range [{lo}, {hi}]"));
        }
        if !(self.pilot_power > 0.0 && self.pilot_power.is_finite()) {
            return bad(format!("pilot_power must be positive, got {}", self.pilot_power));
        }
        if !self.nlos_attenuation_db.is_finite() {
            return bad("nlos_attenuation_db must be finite".into());
        }
        if self.combiner_row_offset >= self.n_bs {
            return bad(format!(
                "combiner_row_offset ({}) must be below n_bs ({})",
                self.combiner_row_offset, self.n_bs
            ));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn wave_number(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength()
    }

    /// Columns per piece, M / Q.
    pub fn m_sub(&self) -> usize {
        self.m_ris / self.q_pieces
    }

    /// Short stable digest of the serialized config, carried on every CSV row.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
