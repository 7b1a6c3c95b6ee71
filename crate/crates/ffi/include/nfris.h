#ifndef NFRIS_H
#define NFRIS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NfrisStatus {
  NFRIS_STATUS_OK = 0,
  NFRIS_STATUS_NULL_POINTER = 1,
  NFRIS_STATUS_INVALID_ARGUMENT = 2,
  NFRIS_STATUS_INVALID_CONFIG = 3,
  NFRIS_STATUS_DIMENSION_MISMATCH = 4,
  // Degenerate channel or a matrix the solver cannot use.
  NFRIS_STATUS_NUMERICAL = 5,
  NFRIS_STATUS_IO = 6,
  NFRIS_STATUS_PARSE = 7,
  // The call panicked; the handle involved should not be reused.
  NFRIS_STATUS_PANIC = 8,
} NfrisStatus;

typedef enum NfrisModel {
  NFRIS_MODEL_NEAR_FIELD = 0,
  NFRIS_MODEL_SPARSE = 1,
  NFRIS_MODEL_RAYLEIGH = 2,
} NfrisModel;

typedef enum NfrisMethod {
  NFRIS_METHOD_TSP = 0,
  NFRIS_METHOD_PWCLRA = 1,
  NFRIS_METHOD_CLRA = 2,
} NfrisMethod;

typedef struct NfrisChannel NfrisChannel;

typedef struct NfrisConfig NfrisConfig;

// Piecewise decomposition of an initial channel plus a reflection schedule.
typedef struct NfrisEstimator NfrisEstimator;

// Pilot symbols spent by one method.
typedef struct NfrisOverhead {
  size_t initial;
  size_t per_block;
  size_t per_block_simulated;
} NfrisOverhead;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *nfris_version(void);

// Copies the last error message of this thread into `buf`, NUL-terminated
// and truncated to `len`. Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t nfris_last_error_message(char *buf, size_t len);

// Creates a config from a preset name, `"desk"` or `"paper"`.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum NfrisStatus nfris_config_preset(const char *name, struct NfrisConfig **out);

// Parses a TOML config; missing keys take the desk defaults.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum NfrisStatus nfris_config_from_toml(const char *text, struct NfrisConfig **out);

// # Safety
// `cfg` must be null or a handle from this library, freed once.
void nfris_config_free(struct NfrisConfig *cfg);

// # Safety
// `cfg` must be a valid handle.
enum NfrisStatus nfris_config_set_seed(struct NfrisConfig *cfg, uint64_t seed);

// # Safety
// `cfg` must be a valid handle.
enum NfrisStatus nfris_config_set_trials(struct NfrisConfig *cfg, size_t trials);

// Sets the SNR in dB; `INFINITY` disables noise.
//
// # Safety
// `cfg` must be a valid handle.
enum NfrisStatus nfris_config_set_snr_db(struct NfrisConfig *cfg, double snr_db);

// Writes `N`, `M`, `N_RF` and `Q`. Any output pointer may be null.
//
// # Safety
// `cfg` must be a valid handle; non-null outputs must be writable.
enum NfrisStatus nfris_config_dims(const struct NfrisConfig *cfg,
                                   size_t *n_bs,
                                   size_t *m_ris,
                                   size_t *n_rf,
                                   size_t *q_pieces);

// `B_min = max_q ceil(M / (Q min(N_RF, r_q)))` for `len` piece ranks.
//
// # Safety
// `ranks` must point to `len` values; `out` must be writable.
enum NfrisStatus nfris_b_min(size_t m_ris,
                             size_t q_pieces,
                             size_t n_rf,
                             const size_t *ranks,
                             size_t len,
                             size_t *out);

// Pilot counts of `method` (an `NfrisMethod`); `b_subframes` is used by tsp only.
//
// # Safety
// `cfg` must be a valid handle; `out` must be writable.
enum NfrisStatus nfris_report_overhead(const struct NfrisConfig *cfg,
                                       uint32_t method,
                                       size_t b_subframes,
                                       struct NfrisOverhead *out);

// Draws a channel realization with `T` blocks from `seed`; `model` is an
// `NfrisModel`.
//
// # Safety
// `cfg` must be a valid handle; `out` must be writable.
enum NfrisStatus nfris_channel_sample(const struct NfrisConfig *cfg,
                                      uint32_t model,
                                      uint64_t seed,
                                      struct NfrisChannel **out);

// # Safety
// `ch` must be null or a handle from this library, freed once.
void nfris_channel_free(struct NfrisChannel *ch);

// Writes `N`, `M` and `T`. Any output pointer may be null.
//
// # Safety
// `ch` must be a valid handle; non-null outputs must be writable.
enum NfrisStatus nfris_channel_dims(const struct NfrisChannel *ch,
                                    size_t *n_bs,
                                    size_t *m_ris,
                                    size_t *t_blocks);

// Copies the effective channel of block `t` into `out` (`2 N M` doubles).
//
// # Safety
// `ch` must be a valid handle; `out` must hold `len` doubles.
enum NfrisStatus nfris_channel_effective(const struct NfrisChannel *ch,
                                         size_t t,
                                         double *out,
                                         size_t len);

// Builds an estimator from block 0 of `ch`, taken as an exact initial
// estimate. `b_subframes = 0` selects `2 B_min`.
//
// # Safety
// `cfg` and `ch` must be valid handles; `out` must be writable.
enum NfrisStatus nfris_estimator_new(const struct NfrisConfig *cfg,
                                     const struct NfrisChannel *ch,
                                     size_t b_subframes,
                                     struct NfrisEstimator **out);

// # Safety
// `est` must be null or a handle from this library, freed once.
void nfris_estimator_free(struct NfrisEstimator *est);

// Subframes per block used by the estimator's schedule.
//
// # Safety
// `est` must be a valid handle; `out` must be writable.
enum NfrisStatus nfris_estimator_b_subframes(const struct NfrisEstimator *est, size_t *out);

// Trains on block `t` of `ch` with noise deviation `sigma` and writes the
// estimated small-timescale vector (`2 M` doubles) to `d_out`. `nmse_out`,
// if not null, receives the linear NMSE of the reconstructed channel.
//
// # Safety
// Handles must be valid; `d_out` must hold `len` doubles; `nmse_out` must
// be null or writable.
enum NfrisStatus nfris_estimator_run(const struct NfrisEstimator *est,
                                     const struct NfrisChannel *ch,
                                     size_t t,
                                     double sigma,
                                     uint64_t seed,
                                     double *d_out,
                                     size_t len,
                                     double *nmse_out);

// Monte Carlo NMSE of `method` (an `NfrisMethod`) on `model` (an
// `NfrisModel`) at one SNR, using the config's seed and trial count. `b_subframes = 0` selects `2 B_min` for tsp.
//
// # Safety
// `cfg` must be a valid handle; outputs must be writable.
enum NfrisStatus nfris_run_nmse(const struct NfrisConfig *cfg,
                                uint32_t model,
                                uint32_t method,
                                double snr_db,
                                size_t b_subframes,
                                double *mean_db,
                                double *std_err_db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NFRIS_H */
