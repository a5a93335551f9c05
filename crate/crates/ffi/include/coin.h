#ifndef COIN_H
#define COIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CoinStatus {
  COIN_STATUS_OK = 0,
  COIN_STATUS_NULL_POINTER = 1,
  COIN_STATUS_INVALID_ARGUMENT = 2,
  COIN_STATUS_CONFIG = 3,
  COIN_STATUS_NUMERIC = 4,
  COIN_STATUS_IO = 5,
  COIN_STATUS_FORMAT = 6,
  COIN_STATUS_SHAPE = 7,
  COIN_STATUS_PANIC = 8,
} CoinStatus;

typedef enum CoinMethod {
  COIN_METHOD_COIN = 0,
  COIN_METHOD_VANILLA_SDS = 1,
  COIN_METHOD_NOISE_OPT = 2,
  COIN_METHOD_GUIDED = 3,
  COIN_METHOD_INIT_ONLY = 4,
} CoinMethod;

// Ground truth and observations of one scene.
typedef struct CoinDataset CoinDataset;

// A fitted motion prior.
typedef struct CoinPrior CoinPrior;

// The stitched output of one estimation run.
typedef struct CoinRun CoinRun;

// Evaluation results, lengths in scene units and angles in degrees.
typedef struct CoinMetrics {
  double w_mpjpe;
  double wa_mpjpe;
  double pa_mpjpe;
  double w_rje;
  double accel;
  double rte;
  double roe;
  double ate;
  double ate_s;
  double cam_accel;
  double scale;
} CoinMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next call.
const char *coin_last_error(void);

// Static description of a status code.
const char *coin_status_string(enum CoinStatus status);

// Soft inpainting weight `w(t)`.
double coin_mask_weight(double t);

// Fits the default synthetic prior with the given corpus seed.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum CoinStatus coin_prior_train_default(uint64_t seed, struct CoinPrior **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum CoinStatus coin_prior_load(const char *path, struct CoinPrior **out);

// # Safety
// `prior` must come from this library; `path` must be a NUL-terminated string.
enum CoinStatus coin_prior_save(const struct CoinPrior *prior, const char *path);

// Latent dimension of the prior, or 0 for a null handle.
//
// # Safety
// `prior` must be null or come from this library.
size_t coin_prior_dim(const struct CoinPrior *prior);

// # Safety
// `prior` must be null or come from this library and not be used afterwards.
void coin_prior_free(struct CoinPrior *prior);

// Generates a scene. `scenario_toml` may be null for the defaults.
//
// # Safety
// `scenario_toml` must be null or a NUL-terminated string; `out` writable.
enum CoinStatus coin_dataset_generate(const char *scenario_toml,
                                      uint64_t seed,
                                      struct CoinDataset **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum CoinStatus coin_dataset_load(const char *path, struct CoinDataset **out);

// # Safety
// `ds` must come from this library; `path` must be a NUL-terminated string.
enum CoinStatus coin_dataset_save(const struct CoinDataset *ds, const char *path);

// Frame count, or 0 for a null handle.
//
// # Safety
// `ds` must be null or come from this library.
size_t coin_dataset_frames(const struct CoinDataset *ds);

// # Safety
// `ds` must be null or come from this library and not be used afterwards.
void coin_dataset_free(struct CoinDataset *ds);

// Runs an estimation method. `pipeline_toml` (a pipeline configuration) may be
// null for the defaults with observation noise matched to the dataset.
//
// # Safety
// Handles must come from this library; `pipeline_toml` null or NUL-terminated; `out` writable.
enum CoinStatus coin_run(const struct CoinDataset *ds,
                         const struct CoinPrior *prior,
                         enum CoinMethod m,
                         const char *pipeline_toml,
                         uint64_t seed,
                         struct CoinRun **out);

// Recovered global scale, or NaN for a null handle.
//
// # Safety
// `run` must be null or come from this library.
double coin_run_scale(const struct CoinRun *run);

// Frame count of a run, or 0 for a null handle.
//
// # Safety
// `run` must be null or come from this library.
size_t coin_run_frames(const struct CoinRun *run);

// Copies `3 · frames` root translations (x, y, z per frame) into `buf`.
//
// # Safety
// `run` must come from this library and `buf` must hold `len` doubles.
enum CoinStatus coin_run_root_translations(const struct CoinRun *run, double *buf, size_t len);

// Copies `3 · frames` camera centers in world coordinates into `buf`.
//
// # Safety
// `run` must come from this library and `buf` must hold `len` doubles.
enum CoinStatus coin_run_camera_centers(const struct CoinRun *run, double *buf, size_t len);

// Scores a run against the dataset's ground truth.
//
// # Safety
// Handles must come from this library and `out` must be writable.
enum CoinStatus coin_evaluate(const struct CoinRun *run,
                              const struct CoinDataset *ds,
                              struct CoinMetrics *out);

// # Safety
// `run` must be null or come from this library and not be used afterwards.
void coin_run_free(struct CoinRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COIN_H */
