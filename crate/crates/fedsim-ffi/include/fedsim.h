/* C interface for the fedsim federated-learning simulator. */

#ifndef FEDSIM_H
#define FEDSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a fallible call. Anything but `Ok` leaves a message
// readable via `fedsim_last_error` on the same thread.
typedef enum FedsimStatus {
  FEDSIM_STATUS_OK = 0,
  // A required pointer argument was null.
  FEDSIM_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  FEDSIM_STATUS_UTF8 = 2,
  // A parameter is out of its documented range.
  FEDSIM_STATUS_INVALID_INPUT = 3,
  // Dimensions of the inputs do not agree.
  FEDSIM_STATUS_SHAPE_MISMATCH = 4,
  // Training or encoding produced or received a non-finite value.
  FEDSIM_STATUS_NUMERICAL = 5,
  // The dataset is unusable: empty, unparseable, or inconsistent.
  FEDSIM_STATUS_DATA = 6,
  // The aggregation protocol was violated.
  FEDSIM_STATUS_PROTOCOL = 7,
  // A file could not be read or written.
  FEDSIM_STATUS_IO = 8,
  // An unexpected internal failure; a bug if it ever surfaces.
  FEDSIM_STATUS_INTERNAL = 9,
} FedsimStatus;

// An owned dataset handle.
typedef struct FedsimDataset FedsimDataset;

// An owned model handle.
typedef struct FedsimModel FedsimModel;

// Everything a federation run needs besides the dataset. Obtain
// defaults from `fedsim_run_config_default` and override fields.
typedef struct FedsimRunConfig {
  // Number of simulated clients, at least 1.
  size_t clients;
  // Hard cap on federation rounds.
  size_t rounds;
  // Local epochs per round.
  size_t local_epochs;
  size_t batch_size;
  double learning_rate;
  // Round-over-round max-abs weight change at or below this stops early.
  double convergence_tol;
  // Base seed; splits, partitions, and training derive from it.
  uint64_t seed;
  // Merge through masked fixed-point sums instead of plaintext models.
  bool secure_agg;
  // Weight client contributions by shard size.
  bool weighted;
  // Fixed-point fractional bits used when secure_agg is set.
  uint32_t frac_bits;
  // Hidden layer widths; null means the library default (64, 32).
  const size_t *hidden;
  // Number of entries behind `hidden`; ignored when `hidden` is null.
  size_t hidden_len;
  // Fraction of rows held out for the test split, in (0, 1).
  double test_fraction;
  // Z-score features on the training split before use.
  bool standardize;
} FedsimRunConfig;

// Final-round quality of a model on the held-out test split.
typedef struct FedsimMetrics {
  double accuracy;
  double macro_precision;
  double macro_recall;
  double macro_f1;
} FedsimMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message from the most recent failing call on this thread, empty if
// none. The pointer stays valid until the next library call on the
// same thread.
const char *fedsim_last_error(void);

// Library version as a static NUL-terminated string.
const char *fedsim_version(void);

// Fill `out` with the default run configuration: 1 client, 20 rounds,
// 50 local epochs, batch 32, learning rate 0.01, tolerance 1e-4,
// seed 42, secure aggregation on, unweighted, 24 fractional bits,
// default hidden layers, 0.2 test fraction, standardization on.
enum FedsimStatus fedsim_run_config_default(struct FedsimRunConfig *out);

// Generate Gaussian blob data: `rows` samples, `features` columns,
// one cluster per class with pairwise center distance `separation`.
// On success writes a dataset handle to `out`.
enum FedsimStatus fedsim_dataset_synthetic(size_t rows,
                                           size_t features,
                                           size_t classes,
                                           double separation,
                                           uint64_t seed,
                                           struct FedsimDataset **out);

// Load whitespace-separated sensor log files (last column is the class
// label). `paths` is an array of `count` NUL-terminated UTF-8 paths.
// Label 0 is dropped unless `keep_null` is set.
enum FedsimStatus fedsim_dataset_load(const char *const *paths,
                                      size_t count,
                                      bool keep_null,
                                      struct FedsimDataset **out);

// Number of samples, 0 for a null handle.
size_t fedsim_dataset_rows(const struct FedsimDataset *data);

// Number of feature columns, 0 for a null handle.
size_t fedsim_dataset_features(const struct FedsimDataset *data);

// Number of classes, 0 for a null handle.
size_t fedsim_dataset_classes(const struct FedsimDataset *data);

// Release a dataset handle. Null is a no-op.
void fedsim_dataset_free(struct FedsimDataset *data);

// Split the dataset, train a federation of `cfg->clients` clients, and
// return the final merged model. When `out_metrics` is non-null it
// receives the final round's test-split metrics. Seeds derive from
// `cfg->seed` exactly as the experiment harness derives them for its
// first repetition. When `cfg->standardize` is set the model expects
// z-scored inputs (the training split's fit).
enum FedsimStatus fedsim_federate(const struct FedsimDataset *data,
                                  const struct FedsimRunConfig *cfg,
                                  struct FedsimModel **out_model,
                                  struct FedsimMetrics *out_metrics);

// Train one centralized model on the training split with the same
// hyperparameters and seed derivation a single-client federation would
// use; `cfg->clients` is ignored.
enum FedsimStatus fedsim_train_baseline(const struct FedsimDataset *data,
                                        const struct FedsimRunConfig *cfg,
                                        struct FedsimModel **out_model,
                                        struct FedsimMetrics *out_metrics);

// Evaluate a model on a dataset prepared the same way its training
// data was (same standardization), writing the metrics to `out`.
enum FedsimStatus fedsim_evaluate(const struct FedsimModel *model,
                                  const struct FedsimDataset *data,
                                  struct FedsimMetrics *out);

// Total number of weights and biases, 0 for a null handle.
size_t fedsim_model_param_count(const struct FedsimModel *model);

// Write the model to `path` as JSON.
enum FedsimStatus fedsim_model_save(const struct FedsimModel *model, const char *path);

// Read a model previously written by `fedsim_model_save`.
enum FedsimStatus fedsim_model_load(const char *path, struct FedsimModel **out);

// Release a model handle. Null is a no-op.
void fedsim_model_free(struct FedsimModel *model);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* FEDSIM_H */
