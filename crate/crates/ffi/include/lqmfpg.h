#ifndef LQMFPG_H
#define LQMFPG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum LqmfpgStatus {
  LQMFPG_STATUS_OK = 0,
  LQMFPG_STATUS_NULL_POINTER = 1,
  LQMFPG_STATUS_INVALID_ARGUMENT = 2,
  LQMFPG_STATUS_NOT_ADMISSIBLE = 3,
  LQMFPG_STATUS_NUMERICS = 4,
  LQMFPG_STATUS_IO = 5,
  LQMFPG_STATUS_PANIC = 6,
} LqmfpgStatus;

/**
 * Opaque model handle.
 */
typedef struct LqmfpgModel LqmfpgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *lqmfpg_last_error(void);

/**
 * The scalar reference model (all coefficients 0.5, discount 0.9).
 * `gaussian_as_std` selects how the step-noise parameter 0.01 is read.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LqmfpgStatus lqmfpg_model_scalar_reference(bool gaussian_as_std, struct LqmfpgModel **out);

/**
 * Builds a model from configuration text (the `[model]` and `[noise]`
 * sections are used).
 *
 * # Safety
 * `text` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 */
enum LqmfpgStatus lqmfpg_model_from_config(const char *text, struct LqmfpgModel **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from a constructor and not be freed twice.
 */
void lqmfpg_model_free(struct LqmfpgModel *model);

/**
 * State dimension `d` and control dimension `l`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum LqmfpgStatus lqmfpg_model_dims(const struct LqmfpgModel *model, size_t *d, size_t *l);

/**
 * # Safety
 * `k` and `l` must point to `l*d` doubles; `out` must be valid.
 */
enum LqmfpgStatus lqmfpg_is_admissible(const struct LqmfpgModel *model,
                                       const double *k,
                                       const double *l,
                                       bool *out);

/**
 * Exact mean-field cost `C(K, L)`.
 *
 * # Safety
 * `k` and `l` must point to `l*d` doubles; `out` must be valid.
 */
enum LqmfpgStatus lqmfpg_exact_cost(const struct LqmfpgModel *model,
                                    const double *k,
                                    const double *l,
                                    double *out);

/**
 * Exact policy gradient, written row-major into `grad_k` and `grad_l`.
 *
 * # Safety
 * All arrays must hold `l*d` doubles.
 */
enum LqmfpgStatus lqmfpg_exact_gradient(const struct LqmfpgModel *model,
                                        const double *k,
                                        const double *l,
                                        double *grad_k,
                                        double *grad_l);

/**
 * Optimal gains `(K*, L*)` and the optimal cost.
 *
 * # Safety
 * `k_out` and `l_out` must hold `l*d` doubles; `cost` must be valid.
 */
enum LqmfpgStatus lqmfpg_optimal_gains(const struct LqmfpgModel *model,
                                       double *k_out,
                                       double *l_out,
                                       double *cost);

/**
 * One realised discounted cost over `horizon` steps.
 *
 * # Safety
 * `k` and `l` must point to `l*d` doubles; `out` must be valid.
 */
enum LqmfpgStatus lqmfpg_mkv_rollout(const struct LqmfpgModel *model,
                                     const double *k,
                                     const double *l,
                                     size_t horizon,
                                     uint64_t seed,
                                     double *out);

/**
 * Zeroth-order gradient estimate from `perturbations` MKV rollouts.
 *
 * # Safety
 * All arrays must hold `l*d` doubles.
 */
enum LqmfpgStatus lqmfpg_estimate_gradient_mkv(const struct LqmfpgModel *model,
                                               const double *k,
                                               const double *l,
                                               size_t perturbations,
                                               size_t horizon,
                                               double tau,
                                               uint64_t seed,
                                               double *grad_k,
                                               double *grad_l);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LQMFPG_H */
