#ifndef GCSTAR_H
#define GCSTAR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GcsStatus {
  GCS_STATUS_OK = 0,
  GCS_STATUS_DOMAIN = 1,
  GCS_STATUS_CONVERGENCE = 2,
  GCS_STATUS_CALIBRATION = 3,
  GCS_STATUS_DIMENSION = 4,
  GCS_STATUS_DESIGN = 5,
  GCS_STATUS_GRAPH = 6,
  GCS_STATUS_PARSE = 7,
  GCS_STATUS_CONFIG = 8,
  GCS_STATUS_TOO_MANY_HYPER = 9,
  GCS_STATUS_INDEX = 10,
  GCS_STATUS_UNKNOWN_LEVEL = 11,
  GCS_STATUS_IO = 12,
  GCS_STATUS_NULL_POINTER = 13,
  GCS_STATUS_INVALID_UTF8 = 14,
  GCS_STATUS_PANIC = 15,
} GcsStatus;

// Opaque fitted model.
typedef struct GcsFit GcsFit;

// Posterior summary of one parameter.
typedef struct GcsSummary {
  double mean;
  double sd;
  double q025;
  double q500;
  double q975;
} GcsSummary;

typedef struct GcsScores {
  double dic;
  double p_d;
  double waic;
  double p_waic;
  double log_score;
  size_t cpo_failures;
} GcsScores;

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call into this library.
const char *gcs_last_error_message(void);

// `P(Y = y)` for the gamma-count law with shape `alpha` and rate `gamma`.
//
// # Safety
// `out` must point to a writable `double`.
enum GcsStatus gcs_pmf(double alpha, double gamma, uint64_t y, double *out);

// Log of [`gcs_pmf`], floored at `ln(1e-300)`.
//
// # Safety
// `out` must point to a writable `double`.
enum GcsStatus gcs_log_pmf(double alpha, double gamma, uint64_t y, double *out);

// Mean and variance by series summation to tolerance `tol`.
//
// # Safety
// `mean` and `variance` must point to writable `double`s.
enum GcsStatus gcs_mean(double alpha, double gamma, double tol, double *mean, double *variance);

// Kullback-Leibler divergence of Gamma(alpha, rate ratio) from the exponential base.
//
// # Safety
// `out` must point to a writable `double`.
enum GcsStatus gcs_kld_gamma(double alpha, double rate_ratio, double *out);

// PC-prior rate λ from `P(d > u) = a`.
//
// # Safety
// `out` must point to a writable `double`.
enum GcsStatus gcs_pc_calibrate(double u, double a, double *out);

// Scale-dependent rate θ from `P(σ > u) = a`.
//
// # Safety
// `out` must point to a writable `double`.
enum GcsStatus gcs_sd_calibrate(double u, double a, double *out);

// Fits the model described by a TOML run configuration. Report files go to
// `out_dir`, or to the configured output directory when it is null.
//
// # Safety
// `config_path` must be a valid C string, `out_dir` null or a valid C
// string, and `out` must point to a writable handle pointer.
enum GcsStatus gcs_fit_from_config(const char *config_path,
                                   const char *out_dir,
                                   struct GcsFit **out);

// Length of the latent vector (intercept first).
//
// # Safety
// `fit` must be a live handle or null.
size_t gcs_fit_latent_len(const struct GcsFit *fit);

// Label of latent element `index`, owned by the handle.
//
// # Safety
// `fit` must be a live handle or null.
const char *gcs_fit_latent_label(const struct GcsFit *fit, size_t index);

// Posterior marginal summary of latent element `index`.
//
// # Safety
// `fit` must be a live handle and `out` writable.
enum GcsStatus gcs_fit_latent_marginal(const struct GcsFit *fit,
                                       size_t index,
                                       struct GcsSummary *out);

// Posterior mean of α (gamma-count), the size (negative binomial) or 1 (Poisson).
//
// # Safety
// `fit` must be a live handle and `out` writable.
enum GcsStatus gcs_fit_dispersion_mean(const struct GcsFit *fit, double *out);

// # Safety
// `fit` must be a live handle and `out` writable.
enum GcsStatus gcs_fit_scores(const struct GcsFit *fit, struct GcsScores *out);

// Releases a handle from [`gcs_fit_from_config`]; null is ignored.
//
// # Safety
// `fit` must come from [`gcs_fit_from_config`] and not be used afterwards.
void gcs_fit_free(struct GcsFit *fit);

#endif  /* GCSTAR_H */
