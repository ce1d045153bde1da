#ifndef VIBSHAPE_H
#define VIBSHAPE_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Model indices for `vs_result_metrics`.
#define VS_MODEL_ERS 0

#define VS_MODEL_EKF 1

#define VS_MODEL_ZVD 2

typedef enum VsStatus {
  VS_STATUS_OK = 0,
  VS_STATUS_NULL_POINTER = 1,
  VS_STATUS_INVALID_ARGUMENT = 2,
  VS_STATUS_PARSE_ERROR = 3,
  VS_STATUS_IO_ERROR = 4,
  VS_STATUS_NUMERICAL_ERROR = 5,
  VS_STATUS_PANIC = 6,
} VsStatus;

// Opaque pipeline configuration.
typedef struct VsConfig VsConfig;

// Opaque vibration dataset.
typedef struct VsDataset VsDataset;

// Opaque result of a pipeline run.
typedef struct VsResult VsResult;

typedef struct VsMetrics {
  double max_err;
  double rmse;
  double mean_err;
  double mts;
  size_t n;
} VsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated, truncated to `len`).
// Returns the full message length excluding the terminator, or 0 when there is no error.
size_t vs_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *vs_version(void);

// ZVD amplitudes and times (seconds) for a plant at `omega_hz`, `zeta`. Both arrays hold 3 values.
enum VsStatus vs_design_zvd(double omega_hz, double zeta, double *amplitudes, double *times);

// Residual vibration ratio of a ZVD designed at (`design_hz`, `design_zeta`) on a plant.
enum VsStatus vs_residual_ratio(double plant_hz,
                                double plant_zeta,
                                double design_hz,
                                double design_zeta,
                                double *out);

enum VsStatus vs_config_default(struct VsConfig **out);

// Parses `key = value` configuration text.
enum VsStatus vs_config_parse(const char *text, struct VsConfig **out);

enum VsStatus vs_config_load(const char *path, struct VsConfig **out);

enum VsStatus vs_config_set_seed(struct VsConfig *cfg, uint64_t seed);

void vs_config_free(struct VsConfig *cfg);

// Synthetic dataset from the generator settings in `cfg`.
enum VsStatus vs_dataset_generate(const struct VsConfig *cfg,
                                  uint64_t seed,
                                  struct VsDataset **out);

enum VsStatus vs_dataset_load(const char *path, struct VsDataset **out);

enum VsStatus vs_dataset_save(const struct VsDataset *data, const char *path);

// Number of samples, 0 for a null handle.
size_t vs_dataset_len(const struct VsDataset *data);

void vs_dataset_free(struct VsDataset *data);

// Full identification and comparison run.
enum VsStatus vs_run(const struct VsConfig *cfg,
                     const struct VsDataset *data,
                     struct VsResult **out);

// EKF estimate, in Hz and dimensionless damping.
enum VsStatus vs_result_ekf(const struct VsResult *res, double *omega_hz, double *zeta);

// Corrected parameters (EKF estimate plus learned correction).
enum VsStatus vs_result_corrected(const struct VsResult *res, double *omega_hz, double *zeta);

// Held-out metrics of one model (`VS_MODEL_*`).
enum VsStatus vs_result_metrics(const struct VsResult *res, uint32_t model, struct VsMetrics *out);

void vs_result_free(struct VsResult *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIBSHAPE_H */
