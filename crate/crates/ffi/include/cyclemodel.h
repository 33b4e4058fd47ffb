#ifndef CYCLEMODEL_H
#define CYCLEMODEL_H

/* Generated by cbindgen from cyclemodel-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes; mirrors the CLI exit-code family (2 invalid argument,
// 3 data, 4 numerical).
typedef enum CmStatus {
  CM_STATUS_OK = 0,
  CM_STATUS_NULL_POINTER = 1,
  CM_STATUS_INVALID_ARGUMENT = 2,
  CM_STATUS_DATA_ERROR = 3,
  CM_STATUS_NUMERICAL_ERROR = 4,
  CM_STATUS_BUFFER_TOO_SMALL = 5,
  CM_STATUS_PANIC = 6,
} CmStatus;

// Prediction mode for `cm_predictor_new`.
typedef enum CmMode {
  // Trust the next reported cycle (s* = 0).
  CM_MODE_ASSUME_NO_SKIP = 0,
  // Marginalize possible skipped cycles (s* up to S).
  CM_MODE_ALLOW_SKIPS = 1,
} CmMode;

// Fitted model: hyperparameters plus the numerical configuration
// (S, M, D, seed) they were trained with.
typedef struct CmFitted CmFitted;

// Prediction engine for one (fitted model, mode) pair.
typedef struct CmPredictor CmPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cm_version(void);

// Copy the last error message (NUL-terminated, possibly truncated) into
// `buf`. Returns the full message length in bytes, excluding the NUL.
//
// # Safety
// `buf` must point to `len` writable bytes (or be null with len 0).
size_t cm_last_error(char *buf, size_t len);

// Build a fitted-model handle from explicit values. On success stores the
// handle in `out`.
//
// # Safety
// `out` must be writable.
enum CmStatus cm_fitted_new(double kappa,
                            double gamma,
                            double alpha,
                            double beta,
                            uint32_t s_max,
                            size_t mc_samples,
                            uint32_t d_max,
                            uint64_t seed,
                            struct CmFitted **out);

// Load a fitted model from the JSON written by `cyclemodel fit`.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string.
enum CmStatus cm_fitted_load_json(const char *path, struct CmFitted **out);

// Read back the hyperparameters and configuration of a fitted handle.
// Any output pointer may be null to skip that field.
//
// # Safety
// `fitted` must be a live handle from `cm_fitted_new`/`cm_fitted_load_json`.
enum CmStatus cm_fitted_get(const struct CmFitted *fitted,
                            double *kappa,
                            double *gamma,
                            double *alpha,
                            double *beta,
                            uint32_t *s_max,
                            uint32_t *d_max);

// Destroy a fitted handle. Null is a no-op.
//
// # Safety
// `fitted` must have come from this library and not been freed before.
void cm_fitted_free(struct CmFitted *fitted);

// Build a prediction engine from a fitted model. `seed` overrides the
// theta-sampling seed carried by the fitted configuration when
// `override_seed` is nonzero.
//
// # Safety
// `fitted` must be a live handle; `out` must be writable.
enum CmStatus cm_predictor_new(const struct CmFitted *fitted,
                               enum CmMode mode,
                               int32_t override_seed,
                               uint64_t seed,
                               struct CmPredictor **out);

// Destroy a predictor handle. Null is a no-op.
//
// # Safety
// `predictor` must have come from `cm_predictor_new` and not been freed.
void cm_predictor_free(struct CmPredictor *predictor);

// Expected next cycle length E[d* | d* > d_current, history] and the grid
// argmax of the conditional pmf. Either output pointer may be null.
//
// # Safety
// `cycles` must point to `n_cycles` entries; outputs must be writable.
enum CmStatus cm_predict_expected(const struct CmPredictor *predictor,
                                  const uint32_t *cycles,
                                  size_t n_cycles,
                                  uint32_t d_current,
                                  double *out_expected,
                                  uint32_t *out_map);

// Conditional next-cycle pmf over d* in {d_current+1 .. D}. Writes up to
// `buf_len` probabilities into `out_probs` (support starts at
// `*out_first_day`), storing the full support size in `*out_len`.
// Fails with CM_STATUS_BUFFER_TOO_SMALL if the buffer cannot hold it.
//
// # Safety
// Pointer arguments must be valid for the stated lengths.
enum CmStatus cm_predict_pmf(const struct CmPredictor *predictor,
                             const uint32_t *cycles,
                             size_t n_cycles,
                             uint32_t d_current,
                             double *out_probs,
                             size_t buf_len,
                             uint32_t *out_first_day,
                             size_t *out_len);

// Posterior over the next skip count s*; writes min(support, buf_len)
// probabilities (s* = 0, 1, 2, ... in order) and stores the full support
// size in `*out_len`.
//
// # Safety
// Pointer arguments must be valid for the stated lengths.
enum CmStatus cm_skip_posterior(const struct CmPredictor *predictor,
                                const uint32_t *cycles,
                                size_t n_cycles,
                                uint32_t d_current,
                                double *out_probs,
                                size_t buf_len,
                                size_t *out_len);

// Truncated-geometric skip pmf p(s | pi) over s in {0..s_max}; writes
// s_max + 1 entries.
//
// # Safety
// `out_probs` must hold `s_max + 1` doubles.
enum CmStatus cm_skip_pmf(double pi, uint32_t s_max, double *out_probs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CYCLEMODEL_H */
