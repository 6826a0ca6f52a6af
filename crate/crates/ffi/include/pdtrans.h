#ifndef PDTRANS_H
#define PDTRANS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PdtStatus {
  PDT_STATUS_OK = 0,
  PDT_STATUS_NULL_POINTER = 1,
  PDT_STATUS_INVALID_ARGUMENT = 2,
  PDT_STATUS_IO = 3,
  PDT_STATUS_PARSE = 4,
  // Dataset content violates an invariant (gaps, duplicates, bad values).
  PDT_STATUS_DATA = 5,
  PDT_STATUS_SHAPE = 6,
  // Non-finite values or non-positive scale parameters.
  PDT_STATUS_NUMERIC = 7,
  PDT_STATUS_CHECKPOINT = 8,
  PDT_STATUS_PANIC = 9,
} PdtStatus;

// An immutable collection of series.
typedef struct PdtDataset PdtDataset;

// A trained model loaded from a checkpoint.
typedef struct PdtModel PdtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on this thread.
const char *pdt_last_error(void);

// Library version as a static nul-terminated string.
const char *pdt_version(void);

// Loads a long-format CSV (`timestamp,series_id,value`).
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum PdtStatus pdt_dataset_load_csv(const char *path, struct PdtDataset **out);

// Generates a synthetic dataset from a JSON spec; null uses the defaults.
//
// # Safety
// `spec_json` must be null or a nul-terminated string; `out` must be writable.
enum PdtStatus pdt_dataset_synthetic(const char *spec_json, struct PdtDataset **out);

// Writes the dataset as long-format CSV.
//
// # Safety
// `dataset` must come from this library; `path` must be nul-terminated.
enum PdtStatus pdt_dataset_write_csv(const struct PdtDataset *dataset, const char *path);

// # Safety
// `dataset` must come from this library; `out` must be writable.
enum PdtStatus pdt_dataset_n_series(const struct PdtDataset *dataset, size_t *out);

// Length and id of the series at `index`.
//
// # Safety
// `dataset` must come from this library; outputs may be null.
enum PdtStatus pdt_dataset_series_info(const struct PdtDataset *dataset,
                                       size_t index,
                                       size_t *out_len,
                                       int64_t *out_id);

// # Safety
// `dataset` must be null or come from this library, and is invalid afterwards.
void pdt_dataset_free(struct PdtDataset *dataset);

// Loads a checkpoint written by training.
//
// # Safety
// `path` must be nul-terminated; `out` must be writable.
enum PdtStatus pdt_model_load(const char *path, struct PdtModel **out);

// # Safety
// `model` must be null or come from this library, and is invalid afterwards.
void pdt_model_free(struct PdtModel *model);

// Conditioning length `t0` and horizon `tau` of the model.
//
// # Safety
// `model` must come from this library; outputs may be null.
enum PdtStatus pdt_model_dims(const struct PdtModel *model, size_t *out_t0, size_t *out_tau);

// Forecasts the `tau` steps following `t0` observations that start at
// `start` in series `series_index`. Each output array has `tau` entries and
// may be null when not wanted. Values are in the data domain.
//
// # Safety
// Handles must come from this library; non-null outputs must hold `tau` doubles.
enum PdtStatus pdt_model_forecast_window(const struct PdtModel *model,
                                         const struct PdtDataset *dataset,
                                         size_t series_index,
                                         size_t start,
                                         size_t n_samples,
                                         uint64_t seed,
                                         double *out_q10,
                                         double *out_q50,
                                         double *out_q90,
                                         double *out_mu_hat,
                                         double *out_sigma,
                                         double *out_trend,
                                         double *out_seasonal);

// Rolling evaluation over the last `n_windows` windows of every series.
//
// # Safety
// Handles must come from this library; outputs may be null.
enum PdtStatus pdt_model_evaluate(const struct PdtModel *model,
                                  const struct PdtDataset *dataset,
                                  size_t n_samples,
                                  size_t n_windows,
                                  uint64_t seed,
                                  double *out_rho50,
                                  double *out_rho90);

// Trains with a JSON config (null for defaults), writing checkpoints and
// the step log into `run_dir`.
//
// # Safety
// `config_json` must be null or nul-terminated; `dataset` must come from this
// library; `run_dir` must be nul-terminated.
enum PdtStatus pdt_train(const char *config_json,
                         const struct PdtDataset *dataset,
                         const char *run_dir,
                         double *out_best_val);

// `ρ`-quantile loss `2·ΣP_ρ(y, ŷ) / Σ|y|`.
//
// # Safety
// `y` and `y_hat` must hold `len` doubles; `out` must be writable.
enum PdtStatus pdt_quantile_loss(const double *y,
                                 const double *y_hat,
                                 size_t len,
                                 double rho,
                                 double *out);

// Mean Gaussian negative log-likelihood including `½ln(2π)`.
//
// # Safety
// The three arrays must hold `len` doubles; `out` must be writable.
enum PdtStatus pdt_gaussian_nll(const double *y,
                                const double *mu,
                                const double *sigma,
                                size_t len,
                                double *out);

// Learning rate at `epoch`: `base_lr · 0.8^⌊epoch/2⌋`.
double pdt_lr_schedule(size_t epoch, double base_lr);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDTRANS_H */
