//! C interface to `nfris`.
//!
//! Every function returns an [`NfrisStatus`]; on failure the message is kept
//! per thread and can be read with [`nfris_last_error_message`]. Handles are
//! opaque and must be released with the matching `*_free` function.
//!
//! Complex data crosses the boundary as interleaved `re, im` doubles. Matrices
//! are column-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nfris::channel::{sample_channel, ChannelModel, ChannelRealization};
use nfris::estimator::{b_min, estimate_block, RANK_THRESHOLD};
use nfris::experiment::{report_overhead, run_nmse_sweep, HarnessOptions, Method, NmseSweep};
use nfris::linalg::{fro_norm_sqr, CMat};
use nfris::rng::seeded;
use nfris::timescale::{reconstruct_effective, PiecewiseDecomposition, RankRule, SmallTimescaleChannel};
use nfris::training::{build_schedule, observe_block, ReflectionSchedule};
use nfris::{Error, SystemConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfrisStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    DimensionMismatch = 4,
    /// Degenerate channel or a matrix the solver cannot use.
    Numerical = 5,
    Io = 6,
    Parse = 7,
    /// The call panicked; the handle involved should not be reused.
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfrisModel {
    NearField = 0,
    Sparse = 1,
    Rayleigh = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfrisMethod {
    Tsp = 0,
    Pwclra = 1,
    Clra = 2,
}

/// Pilot symbols spent by one method.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NfrisOverhead {
    pub initial: usize,
    pub per_block: usize,
    pub per_block_simulated: usize,
}

pub struct NfrisConfig(SystemConfig);

pub struct NfrisChannel(ChannelRealization);

/// Piecewise decomposition of an initial channel plus a reflection schedule.
pub struct NfrisEstimator {
    config: SystemConfig,
    decomposition: PiecewiseDecomposition,
    schedule: ReflectionSchedule,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> NfrisStatus {
    match err {
        Error::InvalidConfig(_) => NfrisStatus::InvalidConfig,
        Error::InvalidArgument(_) | Error::InsufficientObservations { .. } => NfrisStatus::InvalidArgument,
        Error::DimensionMismatch(_) => NfrisStatus::DimensionMismatch,
        Error::ZeroDistance(_)
        | Error::DegenerateChannel { .. }
        | Error::NotHermitian(_)
        | Error::ZeroMatrix
        | Error::ZeroSignal => NfrisStatus::Numerical,
        Error::Parse(_) | Error::Json(_) => NfrisStatus::Parse,
        Error::Io(_) | Error::Csv(_) => NfrisStatus::Io,
    }
}

struct Failure(NfrisStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NfrisStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> NfrisStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NfrisStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(msg);
            NfrisStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NfrisStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null("output buffer"));
    }
    if len < needed {
        return Err(Failure(
            NfrisStatus::DimensionMismatch,
            format!("output buffer holds {len} doubles, need {needed}"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

fn write_matrix(m: &CMat, out: &mut [f64]) {
    for (k, z) in m.iter().enumerate() {
        out[2 * k] = z.re;
        out[2 * k + 1] = z.im;
    }
}

// Enum arguments arrive as plain integers so out-of-range values from C are
// rejected instead of being undefined behaviour.
fn model_of(m: u32) -> Result<ChannelModel, Failure> {
    match m {
        x if x == NfrisModel::NearField as u32 => Ok(ChannelModel::NearField),
        x if x == NfrisModel::Sparse as u32 => Ok(ChannelModel::Sparse),
        x if x == NfrisModel::Rayleigh as u32 => Ok(ChannelModel::Rayleigh),
        other => Err(Failure(NfrisStatus::InvalidArgument, format!("unknown model {other}"))),
    }
}

fn method_of(m: u32) -> Result<Method, Failure> {
    match m {
        x if x == NfrisMethod::Tsp as u32 => Ok(Method::Tsp),
        x if x == NfrisMethod::Pwclra as u32 => Ok(Method::Pwclra),
        x if x == NfrisMethod::Clra as u32 => Ok(Method::Clra),
        other => Err(Failure(NfrisStatus::InvalidArgument, format!("unknown method {other}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nfris_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf`, NUL-terminated
/// and truncated to `len`. Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn nfris_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates a config from a preset name, `"desk"` or `"paper"`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfris_config_preset(name: *const c_char, out: *mut *mut NfrisConfig) -> NfrisStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = SystemConfig::preset(c_str(name, "name")?)?;
        *out = Box::into_raw(Box::new(NfrisConfig(cfg)));
        Ok(())
    })
}

/// Parses a TOML config; missing keys take the desk defaults.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfris_config_from_toml(text: *const c_char, out: *mut *mut NfrisConfig) -> NfrisStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = SystemConfig::from_toml_str(c_str(text, "text")?)?;
        *out = Box::into_raw(Box::new(NfrisConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn nfris_config_free(cfg: *mut NfrisConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn nfris_config_set_seed(cfg: *mut NfrisConfig, seed: u64) -> NfrisStatus {
    guard(|| {
        cfg.as_mut().ok_or_else(|| null("cfg"))?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn nfris_config_set_trials(cfg: *mut NfrisConfig, trials: usize) -> NfrisStatus {
    guard(|| {
        if trials == 0 {
            return Err(Failure(
                NfrisStatus::InvalidArgument,
                "trials must be at least 1".into(),
            ));
        }
        cfg.as_mut().ok_or_else(|| null("cfg"))?.0.trials = trials;
        Ok(())
    })
}

/// Sets the SNR in dB; `INFINITY` disables noise.
///
/// # Safety
/// `cfg` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn nfris_config_set_snr_db(cfg: *mut NfrisConfig, snr_db: f64) -> NfrisStatus {
    guard(|| {
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(Failure(NfrisStatus::InvalidArgument, format!("SNR {snr_db} dB")));
        }
        cfg.as_mut().ok_or_else(|| null("cfg"))?.0.snr_db = snr_db;
        Ok(())
    })
}

/// Writes `N`, `M`, `N_RF` and `Q`. Any output pointer may be null.
///
/// # Safety
/// `cfg` must be a valid handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfris_config_dims(
    cfg: *const NfrisConfig,
    n_bs: *mut usize,
    m_ris: *mut usize,
    n_rf: *mut usize,
    q_pieces: *mut usize,
) -> NfrisStatus {
    guard(|| {
        let c = &handle(cfg, "cfg")?.0;
        for (p, v) in [(n_bs, c.n_bs), (m_ris, c.m_ris), (n_rf, c.n_rf), (q_pieces, c.q_pieces)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// `B_min = max_q ceil(M / (Q min(N_RF, r_q)))` for `len` piece ranks.
///
/// # Safety
/// `ranks` must point to `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfris_b_min(
    m_ris: usize,
    q_pieces: usize,
    n_rf: usize,
    ranks: *const usize,
    len: usize,
    out: *mut usize,
) -> NfrisStatus {
    guard(|| {
        if ranks.is_null() || out.is_null() {
            return Err(null("ranks or out"));
        }
        *out = b_min(m_ris, q_pieces, n_rf, std::slice::from_raw_parts(ranks, len))?;
        Ok(())
    })
}

/// Pilot counts of `method` (an `NfrisMethod`); `b_subframes` is used by tsp only.
///
/// # Safety
/// `cfg` must be a valid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfris_report_overhead(
    cfg: *const NfrisConfig,
    method: u32,
    b_subframes: usize,
    out: *mut NfrisOverhead,
) -> NfrisStatus {
    guard(|| {
        let c = &handle(cfg, "cfg")?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = report_overhead(c, method_of(method)?, b_subframes, &HarnessOptions::default())?;
        *out = NfrisOverhead {
            initial: r.initial,
            per_block: r.per_block,
            per_block_simulated: r.per_block_simulated,
        };
        Ok(())
    })
}

/// Draws a channel realization with `T` blocks from `seed`; `model` is an
/// `NfrisModel`.
///
/// # Safety
/// `cfg` must be a valid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfris_channel_sample(
    cfg: *const NfrisConfig,
    model: u32,
    seed: u64,
    out: *mut *mut NfrisChannel,
) -> NfrisStatus {
    guard(|| {
        let c = &handle(cfg, "cfg")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let real = sample_channel(model_of(model)?, c, &mut seeded(seed))?;
        *out = Box::into_raw(Box::new(NfrisChannel(real)));
        Ok(())
    })
}

/// # Safety
/// `ch` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn nfris_channel_free(ch: *mut NfrisChannel) {
    if !ch.is_null() {
        drop(Box::from_raw(ch));
    }
}

/// Writes `N`, `M` and `T`. Any output pointer may be null.
///
/// # Safety
/// `ch` must be a valid handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfris_channel_dims(
    ch: *const NfrisChannel,
    n_bs: *mut usize,
    m_ris: *mut usize,
    t_blocks: *mut usize,
) -> NfrisStatus {
    guard(|| {
        let r = &handle(ch, "ch")?.0;
        for (p, v) in [(n_bs, r.n_bs()), (m_ris, r.m_ris()), (t_blocks, r.t_blocks())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the effective channel of block `t` into `out` (`2 N M` doubles).
///
/// # Safety
/// `ch` must be a valid handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nfris_channel_effective(
    ch: *const NfrisChannel,
    t: usize,
    out: *mut f64,
    len: usize,
) -> NfrisStatus {
    guard(|| {
        let r = &handle(ch, "ch")?.0;
        let h = r
            .h_eff_seq
            .get(t)
            .ok_or_else(|| Failure(NfrisStatus::InvalidArgument, format!("block {t} of {}", r.t_blocks())))?;
        write_matrix(h, out_slice(out, len, 2 * h.len())?);
        Ok(())
    })
}

/// Builds an estimator from block 0 of `ch`, taken as an exact initial
/// estimate. `b_subframes = 0` selects `2 B_min`.
///
/// # Safety
/// `cfg` and `ch` must be valid handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfris_estimator_new(
    cfg: *const NfrisConfig,
    ch: *const NfrisChannel,
    b_subframes: usize,
    out: *mut *mut NfrisEstimator,
) -> NfrisStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?.0.clone();
        let r = &handle(ch, "ch")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        if (r.n_bs(), r.m_ris()) != (c.n_bs, c.m_ris) {
            return Err(Failure(
                NfrisStatus::DimensionMismatch,
                "channel does not match config".into(),
            ));
        }
        let decomposition =
            PiecewiseDecomposition::new(&r.h_eff_seq[0], c.q_pieces, RankRule::Threshold(RANK_THRESHOLD))?;
        let b = match b_subframes {
            0 => (2 * b_min(c.m_ris, c.q_pieces, c.n_rf, &decomposition.ranks)?).min(c.m_sub()),
            b => b,
        };
        let schedule = build_schedule(&c, b)?;
        *out = Box::into_raw(Box::new(NfrisEstimator {
            config: c,
            decomposition,
            schedule,
        }));
        Ok(())
    })
}

/// # Safety
/// `est` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn nfris_estimator_free(est: *mut NfrisEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Subframes per block used by the estimator's schedule.
///
/// # Safety
/// `est` must be a valid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfris_estimator_b_subframes(est: *const NfrisEstimator, out: *mut usize) -> NfrisStatus {
    guard(|| {
        let e = handle(est, "est")?;
        *out.as_mut().ok_or_else(|| null("out"))? = e.schedule.b_subframes;
        Ok(())
    })
}

/// Trains on block `t` of `ch` with noise deviation `sigma` and writes the
/// estimated small-timescale vector (`2 M` doubles) to `d_out`. `nmse_out`,
/// if not null, receives the linear NMSE of the reconstructed channel.
///
/// # Safety
/// Handles must be valid; `d_out` must hold `len` doubles; `nmse_out` must
/// be null or writable.
#[no_mangle]
pub unsafe extern "C" fn nfris_estimator_run(
    est: *const NfrisEstimator,
    ch: *const NfrisChannel,
    t: usize,
    sigma: f64,
    seed: u64,
    d_out: *mut f64,
    len: usize,
    nmse_out: *mut f64,
) -> NfrisStatus {
    guard(|| {
        let e = handle(est, "est")?;
        let r = &handle(ch, "ch")?.0;
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Failure(NfrisStatus::InvalidArgument, format!("sigma = {sigma}")));
        }
        let h_t = r
            .h_eff_seq
            .get(t)
            .ok_or_else(|| Failure(NfrisStatus::InvalidArgument, format!("block {t} of {}", r.t_blocks())))?;
        let out = out_slice(d_out, len, 2 * e.config.m_ris)?;
        let obs = observe_block(h_t, &e.schedule, t, sigma, e.config.pilot_power, &mut seeded(seed))?;
        let (pieces, _) = estimate_block(&e.decomposition, &e.schedule, &obs, Default::default())?;
        let d = SmallTimescaleChannel { block: t, pieces };
        for (k, z) in d.full().iter().enumerate() {
            out[2 * k] = z.re;
            out[2 * k + 1] = z.im;
        }
        if !nmse_out.is_null() {
            let h_hat = reconstruct_effective(&e.decomposition, &d)?;
            *nmse_out = fro_norm_sqr(&(h_hat - h_t)) / fro_norm_sqr(h_t);
        }
        Ok(())
    })
}

/// Monte Carlo NMSE of `method` (an `NfrisMethod`) on `model` (an
/// `NfrisModel`) at one SNR, using the config's seed and trial count. `b_subframes = 0` selects `2 B_min` for tsp.
///
/// # Safety
/// `cfg` must be a valid handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfris_run_nmse(
    cfg: *const NfrisConfig,
    model: u32,
    method: u32,
    snr_db: f64,
    b_subframes: usize,
    mean_db: *mut f64,
    std_err_db: *mut f64,
) -> NfrisStatus {
    guard(|| {
        let c = &handle(cfg, "cfg")?.0;
        if mean_db.is_null() || std_err_db.is_null() {
            return Err(null("mean_db or std_err_db"));
        }
        let options = HarnessOptions {
            model: model_of(model)?,
            b_subframes: (b_subframes > 0).then_some(b_subframes),
            ..HarnessOptions::default()
        };
        let result = run_nmse_sweep(c, &NmseSweep::Snr(vec![snr_db]), &[method_of(method)?], &options)?;
        let cell = &result.summary[0];
        *mean_db = cell.mean.unwrap_or(f64::NAN);
        *std_err_db = cell.std_err.unwrap_or(f64::NAN);
        Ok(())
    })
}
