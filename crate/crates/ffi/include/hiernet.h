#ifndef HIERNET_H
#define HIERNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HnStatus {
  HN_OK = 0,
  HN_NULL_POINTER = 1,
  HN_INVALID_ARGUMENT = 2,
  HN_CONFIG = 3,
  HN_IO = 4,
  HN_VERSION_MISMATCH = 5,
  HN_CORRUPT = 6,
  HN_NUMERICAL = 7,
  HN_BUFFER_TOO_SMALL = 8,
  HN_PANIC = 9,
} HnStatus;

typedef struct HnConfig HnConfig;

typedef struct HnDataset HnDataset;

typedef struct HnModel HnModel;

typedef struct HnTrace HnTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread (empty after success).
// Valid until the next `hn_*` call on the same thread.
const char *hn_last_error(void);

// Library version as a static NUL-terminated string.
const char *hn_version(void);

// Parses a JSON config and resolves `"auto"` beta.
//
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum HnStatus hn_config_from_json(const char *json, struct HnConfig **out);

// `path` must be a NUL-terminated string and `out` a valid pointer.
enum HnStatus hn_config_load(const char *path, struct HnConfig **out);

// `cfg` must be null or a handle from this library, not yet freed.
enum HnStatus hn_config_set_seed(struct HnConfig *cfg, uint64_t seed);

// `cfg` must be null or a handle from this library, not yet freed.
void hn_config_free(struct HnConfig *cfg);

// Builds the configured target and samples `m` examples from it.
//
// `cfg` must be a live handle and `out` a valid pointer.
enum HnStatus hn_dataset_generate(const struct HnConfig *cfg, struct HnDataset **out);

// `path` must be a NUL-terminated string and `out` a valid pointer.
enum HnStatus hn_dataset_load(const char *path, struct HnDataset **out);

// `ds` must be a live handle and `path` a NUL-terminated string.
enum HnStatus hn_dataset_save(const struct HnDataset *ds, const char *path);

// Number of samples, or 0 for a null handle.
//
// `ds` must be null or a live handle.
uintptr_t hn_dataset_len(const struct HnDataset *ds);

// `ds` must be null or a handle from this library, not yet freed.
void hn_dataset_free(struct HnDataset *ds);

// Initializes an untrained network shaped for `ds`.
//
// `cfg` and `ds` must be live handles and `out` a valid pointer.
enum HnStatus hn_model_init(const struct HnConfig *cfg,
                            const struct HnDataset *ds,
                            struct HnModel **out);

// Trains every layer of `model` in place; the trace goes to `out_trace`.
//
// All handles must be live and `out_trace` a valid pointer.
enum HnStatus hn_model_train(struct HnModel *model,
                             const struct HnConfig *cfg,
                             const struct HnDataset *ds,
                             struct HnTrace **out_trace);

// Output width `|G| * n` of [`hn_model_forward`].
//
// `model` must be null or a live handle.
uintptr_t hn_model_output_len(const struct HnModel *model);

// Network output after all layers. `x` holds `|G| * d` inputs row-major by
// location; `out` receives `|G| * n` values.
//
// `x` must point to `x_len` doubles and `out` to `out_len` writable doubles.
enum HnStatus hn_model_forward(const struct HnModel *model,
                               const double *x,
                               uintptr_t x_len,
                               double *out,
                               uintptr_t out_len);

// Writes a checkpoint (orthogonality is re-checked on load).
//
// `model` must be a live handle and `path` a NUL-terminated string.
enum HnStatus hn_model_save(const struct HnModel *model, const char *path);

// `path` must be a NUL-terminated string and `out` a valid pointer.
enum HnStatus hn_model_load(const char *path, struct HnModel **out);

// `model` must be null or a handle from this library, not yet freed.
void hn_model_free(struct HnModel *model);

// Sample error at margin 0 after the last layer.
//
// `trace` must be a live handle and `out` a valid pointer.
enum HnStatus hn_trace_final_error(const struct HnTrace *trace, double *out);

// `trace` must be a live handle and `path` a NUL-terminated string.
enum HnStatus hn_trace_save_csv(const struct HnTrace *trace, const char *path);

// `trace` must be null or a handle from this library, not yet freed.
void hn_trace_free(struct HnTrace *trace);

// Closed-form random-features kernel `k(x, y)` for `activation` ("tanh",
// "relu", ...) and junta size `k`; `tail` receives its truncation bound.
//
// `x` and `y` must point to `n` doubles each; `value` and `tail` must be valid.
enum HnStatus hn_kernel(const char *activation,
                        uintptr_t k,
                        const double *x,
                        const double *y,
                        uintptr_t n,
                        double beta,
                        double *value,
                        double *tail);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIERNET_H */
