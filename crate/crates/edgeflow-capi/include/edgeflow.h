/* C interface to the edgeflow dynamic CNN inference library. */

#ifndef EDGEFLOW_H
#define EDGEFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome. Non-zero values match the CLI exit codes.
 */
typedef enum EfStatus {
  EF_STATUS_OK = 0,
  /**
   * Invalid arguments or configuration.
   */
  EF_STATUS_CONFIG_ERROR = 2,
  /**
   * Missing or malformed data (files, weights, datasets).
   */
  EF_STATUS_DATA_ERROR = 3,
  /**
   * A resource budget was exceeded.
   */
  EF_STATUS_BUDGET_ERROR = 4,
  /**
   * A required pointer argument was NULL.
   */
  EF_STATUS_NULL_ARGUMENT = 5,
} EfStatus;

/**
 * Execution mode selector.
 */
typedef enum EfMode {
  EF_MODE_STATIC = 0,
  EF_MODE_DASP = 1,
  EF_MODE_DAPP = 2,
  EF_MODE_SDCI = 3,
} EfMode;

/**
 * Opaque labeled-dataset handle.
 */
typedef struct EfDataset EfDataset;

/**
 * Opaque model description handle.
 */
typedef struct EfModel EfModel;

/**
 * Opaque trained-parameters handle.
 */
typedef struct EfParams EfParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. Valid until the next
 * failing call on the same thread; never NULL.
 */
const char *ef_last_error(void);

/**
 * New handle for the built-in LeNet-5 description. Free with
 * [`ef_model_free`].
 */
struct EfModel *ef_model_lenet5(void);

/**
 * # Safety
 * `model` must come from [`ef_model_lenet5`] and not already be freed.
 */
void ef_model_free(struct EfModel *model);

/**
 * Load trained parameters from a weights file, validated against the
 * model. Free with [`ef_params_free`].
 *
 * # Safety
 * `model` must be a live model handle; `path` a NUL-terminated string;
 * `out` a valid pointer.
 */
enum EfStatus ef_params_load(const struct EfModel *model, const char *path, struct EfParams **out);

/**
 * Train a baseline on a synthetic digit set, for self-contained demos.
 *
 * # Safety
 * `model` must be a live model handle and `out` a valid pointer.
 */
enum EfStatus ef_params_train_synthetic(const struct EfModel *model,
                                        uintptr_t image_count,
                                        uint64_t seed,
                                        uintptr_t epochs,
                                        struct EfParams **out);

/**
 * # Safety
 * `params` must come from a params constructor and not already be freed.
 */
void ef_params_free(struct EfParams *params);

/**
 * Load an IDX image/label pair. Free with [`ef_dataset_free`].
 *
 * # Safety
 * Paths must be NUL-terminated strings and `out` a valid pointer.
 */
enum EfStatus ef_dataset_load(const char *images_path,
                              const char *labels_path,
                              struct EfDataset **out);

/**
 * Deterministic synthetic digit set. Free with [`ef_dataset_free`].
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum EfStatus ef_dataset_synthetic(uintptr_t count, uint64_t seed, struct EfDataset **out);

/**
 * Number of labeled images in the set; 0 for NULL.
 *
 * # Safety
 * `dataset` must be a live dataset handle or NULL.
 */
uintptr_t ef_dataset_len(const struct EfDataset *dataset);

/**
 * # Safety
 * `dataset` must come from a dataset constructor and not already be freed.
 */
void ef_dataset_free(struct EfDataset *dataset);

/**
 * Classify one 28x28 image (784 floats in [0,1], row-major). Writes the
 * predicted digit to `out_digit`.
 *
 * # Safety
 * `model` and `params` must be live handles; `pixels` must point to
 * `pixel_count` readable floats; `out_digit` must be a valid pointer.
 */
enum EfStatus ef_classify(const struct EfModel *model,
                          const struct EfParams *params,
                          const float *pixels,
                          uintptr_t pixel_count,
                          int32_t *out_digit);

/**
 * Run one execution mode over the first `images` of the dataset. Writes
 * the accuracy percentage and the streamed parameter payload bytes.
 *
 * # Safety
 * Handles must be live; out-pointers may be NULL to skip that output.
 */
enum EfStatus ef_run(const struct EfModel *model,
                     const struct EfParams *params,
                     const struct EfDataset *dataset,
                     enum EfMode mode,
                     uint8_t bits,
                     uint8_t frac_bits,
                     uintptr_t images,
                     double *out_accuracy_pct,
                     uint64_t *out_streamed_bytes);

/**
 * Like [`ef_run`] but returns the full report as a JSON string. Free the
 * string with [`ef_string_free`].
 *
 * # Safety
 * Handles must be live; `out_json` must be a valid pointer.
 */
enum EfStatus ef_run_report_json(const struct EfModel *model,
                                 const struct EfParams *params,
                                 const struct EfDataset *dataset,
                                 enum EfMode mode,
                                 uint8_t bits,
                                 uint8_t frac_bits,
                                 uintptr_t images,
                                 char **out_json);

/**
 * # Safety
 * `s` must be a string returned by this library and not already freed.
 */
void ef_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDGEFLOW_H */
