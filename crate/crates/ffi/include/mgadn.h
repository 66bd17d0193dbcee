#ifndef MGADN_H
#define MGADN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum MgadnStatus {
  MGADN_STATUS_OK = 0,
  MGADN_STATUS_NULL_POINTER = 1,
  MGADN_STATUS_INVALID_ARGUMENT = 2,
  MGADN_STATUS_IO = 3,
  MGADN_STATUS_PARSE = 4,
  MGADN_STATUS_DATA = 5,
  MGADN_STATUS_CONFIG = 6,
  MGADN_STATUS_CHECKPOINT = 7,
  MGADN_STATUS_NUMERIC = 8,
  MGADN_STATUS_BUFFER_TOO_SMALL = 9,
  MGADN_STATUS_PANIC = 10,
} MgadnStatus;

// A labelled multivariate series.
typedef struct MgadnDataset MgadnDataset;

// A trained detector together with the metadata needed to save it.
typedef struct MgadnDetector MgadnDetector;

// Point-wise detection metrics.
typedef struct MgadnMetrics {
  double precision;
  double recall;
  double f1;
  size_t tp;
  size_t fp;
  size_t fn_;
  size_t tn;
} MgadnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null after a
// success. The pointer stays valid until the next call into the library
// from the same thread.
const char *mgadn_last_error(void);

// Library version as a static NUL-terminated string.
const char *mgadn_version(void);

// Generates a seeded synthetic labelled series.
enum MgadnStatus mgadn_synth_generate(size_t n_sensors,
                                      size_t n_steps,
                                      double anomaly_rate,
                                      uint64_t seed,
                                      struct MgadnDataset **out);

// Wraps caller-provided rows; `labels` may be null.
enum MgadnStatus mgadn_dataset_new(const double *values,
                                   size_t n_rows,
                                   size_t n_sensors,
                                   const uint8_t *labels,
                                   struct MgadnDataset **out);

// Number of rows and sensors.
enum MgadnStatus mgadn_dataset_shape(const struct MgadnDataset *ds,
                                     size_t *n_rows,
                                     size_t *n_sensors);

// Copies all values into `buf`, which must hold `rows * sensors` entries.
enum MgadnStatus mgadn_dataset_values(const struct MgadnDataset *ds, double *buf, size_t buf_len);

// Copies the 0/1 labels into `buf` (one per row). Fails with
// `MGADN_STATUS_DATA` when the dataset is unlabelled.
enum MgadnStatus mgadn_dataset_labels(const struct MgadnDataset *ds, uint8_t *buf, size_t buf_len);

void mgadn_dataset_free(struct MgadnDataset *ds);

// Loads a detector from a checkpoint file.
enum MgadnStatus mgadn_detector_load(const char *path, struct MgadnDetector **out);

// Trains a detector on `ds`. `config_toml` holds optional run settings
// in the same keys the command-line config file accepts; null means
// defaults.
enum MgadnStatus mgadn_detector_train(const struct MgadnDataset *ds,
                                      const char *config_toml,
                                      struct MgadnDetector **out);

// Writes the detector as a checkpoint file, atomically.
enum MgadnStatus mgadn_detector_save(const struct MgadnDetector *det, const char *path);

enum MgadnStatus mgadn_detector_n_sensors(const struct MgadnDetector *det, size_t *out);

// Window length; scoring `n` rows yields `n - window` scores.
enum MgadnStatus mgadn_detector_window(const struct MgadnDetector *det, size_t *out);

enum MgadnStatus mgadn_detector_threshold(const struct MgadnDetector *det, double *out);

// Scores raw (unnormalized) rows. Row `window + k` gets score `k`, so
// `scores` needs room for `n_rows - window` entries; `verdicts` may be
// null, otherwise it receives one 0/1 flag per score. The number of
// scores written goes to `n_written`.
enum MgadnStatus mgadn_detector_score(const struct MgadnDetector *det,
                                      const double *values,
                                      size_t n_rows,
                                      size_t n_sensors,
                                      double *scores,
                                      uint8_t *verdicts,
                                      size_t capacity,
                                      size_t *n_written);

void mgadn_detector_free(struct MgadnDetector *det);

// Weight on the forecast loss that minimises the norm of the combined
// gradient, given both heads' gradients with respect to the shared output.
enum MgadnStatus mgadn_mgda_alpha(const double *g_pred,
                                  const double *g_recon,
                                  size_t len,
                                  double *out);

// Precision, recall and F1 of 0/1 verdicts against 0/1 labels.
enum MgadnStatus mgadn_metrics(const uint8_t *verdicts,
                               const uint8_t *labels,
                               size_t len,
                               struct MgadnMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MGADN_H */
