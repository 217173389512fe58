#ifndef FE_LAB_H
#define FE_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call. The nonzero values match the CLI exit codes
// where the categories overlap.
typedef enum FeStatus {
  FE_STATUS_OK = 0,
  // Bad shapes, configuration, or malformed files.
  FE_STATUS_INVALID = 2,
  FE_STATUS_IO = 3,
  // Numerical failure such as a non-finite loss.
  FE_STATUS_NUMERIC = 4,
  FE_STATUS_NULL_POINTER = 5,
  // A caller buffer is too small; the required length was written back.
  FE_STATUS_BUFFER_TOO_SMALL = 6,
  // An internal panic was caught.
  FE_STATUS_PANIC = 7,
} FeStatus;

typedef enum FeSystemKind {
  FE_SYSTEM_KIND_NONLINEAR = 0,
  FE_SYSTEM_KIND_LINEAR = 1,
} FeSystemKind;

typedef enum FeModelKind {
  FE_MODEL_KIND_FE = 0,
  FE_MODEL_KIND_VAE = 1,
  FE_MODEL_KIND_BETA_VAE = 2,
  FE_MODEL_KIND_BETA_FE = 3,
  FE_MODEL_KIND_SUPERVISED_FE = 4,
} FeModelKind;

// A synthetic system with its training and held-out samples.
typedef struct FeBundle FeBundle;

// A model together with its optimizer state.
typedef struct FeTrainer FeTrainer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next fe-lab call on the same thread.
const char *fe_last_error(void);

// Draw a system with its default shape and `noise_std` (negative selects the
// default), then sample `n` training and `n_eval` held-out rows.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum FeStatus fe_bundle_generate(uint64_t seed,
                                 enum FeSystemKind kind,
                                 size_t n,
                                 size_t n_eval,
                                 double noise_std,
                                 struct FeBundle **out);

// Load a directory written by `fe_bundle_save` or the `gen-data` command.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` writable.
enum FeStatus fe_bundle_load(const char *dir, struct FeBundle **out);

// # Safety
// `bundle` must be a live handle and `dir` a NUL-terminated string.
enum FeStatus fe_bundle_save(const struct FeBundle *bundle, const char *dir);

// Write factor count, output count, training rows and held-out rows. Any
// output pointer may be null.
//
// # Safety
// `bundle` must be a live handle; non-null outputs must be writable.
enum FeStatus fe_bundle_shape(const struct FeBundle *bundle,
                              size_t *n_inputs,
                              size_t *n_outputs,
                              size_t *n_train,
                              size_t *n_eval);

// # Safety
// `bundle` must be null or a handle not yet freed.
void fe_bundle_free(struct FeBundle *bundle);

// Build an untrained model sized for `bundle`. A `beta` of zero or less
// selects the kind's default.
//
// # Safety
// `bundle` must be a live handle and `out` writable.
enum FeStatus fe_trainer_new(const struct FeBundle *bundle,
                             enum FeModelKind kind,
                             size_t n_latents,
                             double beta,
                             uint64_t seed,
                             double lr,
                             struct FeTrainer **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum FeStatus fe_trainer_load(const char *path, struct FeTrainer **out);

// # Safety
// `trainer` must be a live handle and `path` a NUL-terminated string.
enum FeStatus fe_trainer_save(const struct FeTrainer *trainer, const char *path);

// # Safety
// `trainer` must be null or a handle not yet freed.
void fe_trainer_free(struct FeTrainer *trainer);

// Take `iterations` more optimizer steps on minibatches of the bundle's training rows.
//
// # Safety
// Both handles must be live.
enum FeStatus fe_trainer_train(struct FeTrainer *trainer,
                               const struct FeBundle *bundle,
                               uint64_t iterations,
                               size_t batch_size);

// Number of reconstruction levels the model produces.
//
// # Safety
// `trainer` must be a live handle.
size_t fe_trainer_levels(const struct FeTrainer *trainer);

// Optimizer steps taken so far.
//
// # Safety
// `trainer` must be a live handle.
uint64_t fe_trainer_iteration(const struct FeTrainer *trainer);

// Held-out reconstruction error per level into `out[0..cap]`; `len`
// receives the number of levels.
//
// # Safety
// Both handles must be live; `out` must hold `cap` values.
enum FeStatus fe_trainer_recon_errors(const struct FeTrainer *trainer,
                                      const struct FeBundle *bundle,
                                      double *out,
                                      size_t cap,
                                      size_t *len);

// Encode `rows` row-major observations of width `cols`; writes
// `rows * n_latents` row-major latent means.
//
// # Safety
// `trainer` must be live; `x` must hold `rows * cols` values and `out` `cap`.
enum FeStatus fe_trainer_encode(const struct FeTrainer *trainer,
                                const double *x,
                                size_t rows,
                                size_t cols,
                                double *out,
                                size_t cap,
                                size_t *len);

// Mean absolute Spearman match between the latents of two models on the
// bundle's held-out rows.
//
// # Safety
// All handles must be live and `mean` writable.
enum FeStatus fe_stability(const struct FeTrainer *a,
                           const struct FeTrainer *b,
                           const struct FeBundle *bundle,
                           double *mean);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FE_LAB_H */
