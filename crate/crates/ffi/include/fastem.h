#ifndef FASTEM_H
#define FASTEM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum FastemStatus {
  FASTEM_STATUS_OK = 0,
  // A required pointer was null or a string was not UTF-8.
  FASTEM_STATUS_NULL_ARGUMENT = 1,
  // Invalid training configuration.
  FASTEM_STATUS_CONFIG = 2,
  // Malformed input or mismatched shapes.
  FASTEM_STATUS_DATA = 3,
  // A matrix was not positive definite or a system was singular.
  FASTEM_STATUS_NUMERICAL = 4,
  // Unexpected internal failure.
  FASTEM_STATUS_INTERNAL = 5,
} FastemStatus;

// Row-major data matrix with NaN at missing cells.
typedef struct FastemDataset FastemDataset;

// Trained mixture.
typedef struct FastemModel FastemModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library from the same thread.
const char *fastem_last_error(void);

// Copies an `n × d` row-major buffer into a new dataset. NaN marks a missing cell.
//
// # Safety
// `values` must point to `n * d` readable doubles; `out` must be writable.
enum FastemStatus fastem_dataset_new(const double *values,
                                     size_t n,
                                     size_t d,
                                     struct FastemDataset **out);

// # Safety
// `dataset` must be null or a handle from [`fastem_dataset_new`] not yet freed.
void fastem_dataset_free(struct FastemDataset *dataset);

// Fits a mixture. `config_json` holds any subset of the training settings
// (`components`, `max_iters`, `ridge`, `seed`, `engine`, ...); null uses defaults.
//
// # Safety
// `dataset` must be a live handle; `config_json` null or a nul-terminated string;
// `out` writable.
enum FastemStatus fastem_fit(const struct FastemDataset *dataset,
                             const char *config_json,
                             struct FastemModel **out);

// # Safety
// `model` must be null or a live handle.
void fastem_model_free(struct FastemModel *model);

// Dimension and component count of a model.
//
// # Safety
// `model` must be a live handle; `d` and `components` writable.
enum FastemStatus fastem_model_shape(const struct FastemModel *model,
                                     size_t *d,
                                     size_t *components);

// Serializes a model. Release the string with [`fastem_string_free`].
//
// # Safety
// `model` must be a live handle; `out` writable.
enum FastemStatus fastem_model_to_json(const struct FastemModel *model, char **out);

// # Safety
// `json` must be a nul-terminated string; `out` writable.
enum FastemStatus fastem_model_from_json(const char *json, struct FastemModel **out);

// # Safety
// `s` must be null or a string returned by this library.
void fastem_string_free(char *s);

// Writes the dataset with every missing cell replaced by its conditional mean
// under the model into `out_values` (`n × d`, row-major).
//
// # Safety
// Handles must be live; `out_values` must hold `n * d` writable doubles.
enum FastemStatus fastem_impute(const struct FastemModel *model,
                                const struct FastemDataset *dataset,
                                double *out_values);

// Mean observed-data log-likelihood of the dataset under the model.
//
// # Safety
// Handles must be live; `out` writable.
enum FastemStatus fastem_log_likelihood(const struct FastemModel *model,
                                        const struct FastemDataset *dataset,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FASTEM_H */
