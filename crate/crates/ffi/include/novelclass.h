#ifndef NOVELCLASS_H
#define NOVELCLASS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NcStatus {
  NC_STATUS_OK = 0,
  NC_STATUS_NULL_POINTER = 1,
  NC_STATUS_INVALID_ARGUMENT = 2,
  NC_STATUS_INVALID_INPUT = 3,
  NC_STATUS_NUMERICAL = 4,
  NC_STATUS_IO = 5,
  NC_STATUS_INTERNAL = 6,
} NcStatus;

typedef enum NcLabelKind {
  // `label` is a training class id.
  NC_LABEL_KIND_KNOWN = 0,
  // `label` is the founding sample index of a discovered cluster.
  NC_LABEL_KIND_DISCOVERED = 1,
  // The sample founds a new cluster; `label` is its own index.
  NC_LABEL_KIND_NEW = 2,
} NcLabelKind;

// Opaque engine handle.
typedef struct NcEngine NcEngine;

// One assignment decision.
typedef struct NcDecision {
  uint64_t index;
  enum NcLabelKind kind;
  uint64_t label;
  double p_novel;
  double unlabeled_mass;
  double ess;
  size_t discovered_clusters;
} NcDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *nc_last_error(void);

// Library version as a static NUL-terminated string.
const char *nc_version(void);

// Builds an engine from a labeled training set.
//
// `train` holds `n * dim` values row-major, `labels` holds `n` class ids,
// `mu0` holds `dim` values and `sigma0` holds `dim * dim` values row-major.
// `uniform_counts` nonzero gives every known class pseudo-count 1 instead of
// its training size.
//
// # Safety
// Pointers must be valid for the stated lengths; `out` must be writable.
enum NcStatus nc_engine_new(const double *train,
                            const uint32_t *labels,
                            size_t n,
                            size_t dim,
                            const double *mu0,
                            double kappa,
                            const double *sigma0,
                            double m,
                            double alpha,
                            size_t particles,
                            uint64_t seed,
                            int32_t uniform_counts,
                            struct NcEngine **out);

// Processes one sample of `dim` values and writes the decision to `out`.
//
// # Safety
// `engine` must come from this library; `x` must hold `dim` values.
enum NcStatus nc_engine_step(struct NcEngine *engine,
                             const double *x,
                             size_t dim,
                             struct NcDecision *out);

// Samples processed so far, or 0 for a null handle.
//
// # Safety
// `engine` must be null or come from this library.
uint64_t nc_engine_samples_seen(const struct NcEngine *engine);

// Feature dimension, or 0 for a null handle.
//
// # Safety
// `engine` must be null or come from this library.
size_t nc_engine_dim(const struct NcEngine *engine);

// Serializes the engine to a JSON checkpoint. Release the string with
// `nc_string_free`.
//
// # Safety
// `engine` must come from this library; `out` must be writable.
enum NcStatus nc_engine_checkpoint(const struct NcEngine *engine, char **out);

// Restores an engine from a JSON checkpoint string.
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum NcStatus nc_engine_from_checkpoint(const char *json, struct NcEngine **out);

// Writes a checkpoint file.
//
// # Safety
// `engine` must come from this library; `path` must be NUL-terminated.
enum NcStatus nc_engine_save(const struct NcEngine *engine, const char *path);

// Reads a checkpoint file.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum NcStatus nc_engine_load(const char *path, struct NcEngine **out);

// Releases an engine. Null is ignored.
//
// # Safety
// `engine` must be null or come from this library, and not be used afterwards.
void nc_engine_free(struct NcEngine *engine);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or come from this library, and not be used afterwards.
void nc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NOVELCLASS_H */
