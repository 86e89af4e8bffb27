#ifndef ADACO_H
#define ADACO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdacoStatus {
  ADACO_STATUS_OK = 0,
  ADACO_STATUS_NULL_POINTER = 1,
  ADACO_STATUS_INVALID_ARGUMENT = 2,
  ADACO_STATUS_IO = 3,
  /**
   * The input was valid but the computation has no answer (flat curve,
   * empty history, every fit diverged).
   */
  ADACO_STATUS_UNDEFINED = 4,
  ADACO_STATUS_BUFFER_TOO_SMALL = 5,
  ADACO_STATUS_INTERNAL = 6,
} AdacoStatus;

typedef enum AdacoPhase {
  ADACO_PHASE_WARMUP = 0,
  ADACO_PHASE_CORRECTION = 1,
} AdacoPhase;

/**
 * Rolling per-point prediction history.
 */
typedef struct AdacoHistory AdacoHistory;

/**
 * A scene loaded from disk.
 */
typedef struct AdacoScene AdacoScene;

/**
 * Fitted saturation curve `a * (1 - exp(-t^b / c))`.
 */
typedef struct AdacoCurveParams {
  double a;
  double b;
  double c;
  double residual;
} AdacoCurveParams;

typedef struct AdacoLossConfig {
  double lambda;
  double beta;
  double sigma;
} AdacoLossConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *adaco_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a
 * success. Valid until the next call on the same thread.
 */
const char *adaco_last_error(void);

/**
 * Fit the saturation curve to `n` per-epoch mIoU values (epoch 1 first).
 *
 * # Safety
 * `series` must point to `n` readable doubles and `out` must be writable.
 */
enum AdacoStatus adaco_fit_curve(const double *series, uintptr_t n, struct AdacoCurveParams *out);

/**
 * Curve value at epoch `t`.
 */
double adaco_eval_curve(struct AdacoCurveParams params, double t);

/**
 * Curve slope at epoch `t`.
 */
double adaco_eval_derivative(struct AdacoCurveParams params, double t);

/**
 * First epoch in `1..=max_epoch` where `|f'(1) - f'(t)| / f'(1) > r`, or 0
 * when it never fires.
 *
 * # Safety
 * `out_epoch` must be writable.
 */
enum AdacoStatus adaco_first_trigger_epoch(struct AdacoCurveParams params,
                                           double r,
                                           uintptr_t max_epoch,
                                           uintptr_t *out_epoch);

/**
 * Cluster `n` points. Writes one id per point (`-1` for noise) and the
 * cluster count.
 *
 * # Safety
 * `xyz` must hold `3 * n` doubles, `out_assignment` room for `n` ids and
 * `out_clusters` must be writable.
 */
enum AdacoStatus adaco_dbscan(const double *xyz,
                              uintptr_t n,
                              double eps,
                              uintptr_t min_pts,
                              int64_t *out_assignment,
                              uintptr_t *out_clusters);

/**
 * Adaptive robust loss over `n x k` row-major logits. `out_grad` may be
 * NULL; otherwise it receives `n * k` gradient entries.
 *
 * # Safety
 * `logits` must hold `n * k` doubles, `targets` `n` labels (65535 means
 * ignored), `config` and `out_value` must be valid.
 */
enum AdacoStatus adaco_arl(const double *logits,
                           const uint16_t *targets,
                           uintptr_t n,
                           uintptr_t k,
                           const struct AdacoLossConfig *config,
                           enum AdacoPhase phase,
                           double *out_value,
                           double *out_grad);

/**
 * New empty history for `n_points` points, `num_classes` classes and the
 * last `capacity` rounds.
 *
 * # Safety
 * `out` must be writable.
 */
enum AdacoStatus adaco_history_new(uintptr_t n_points,
                                   uintptr_t num_classes,
                                   uintptr_t capacity,
                                   struct AdacoHistory **out);

/**
 * # Safety
 * `history` must come from [`adaco_history_new`] and not be used again.
 */
void adaco_history_free(struct AdacoHistory *history);

/**
 * Append one round of `n` hard predictions.
 *
 * # Safety
 * `history` must be a live handle and `predictions` hold `n` labels.
 */
enum AdacoStatus adaco_history_record(struct AdacoHistory *history,
                                      const uint16_t *predictions,
                                      uintptr_t n);

/**
 * Rounds currently held (at most the capacity).
 *
 * # Safety
 * `history` must be a live handle or NULL (returns 0).
 */
uintptr_t adaco_history_rounds(const struct AdacoHistory *history);

/**
 * Confidence of one point, in `[0, 1]`.
 *
 * # Safety
 * `history` must be a live handle and `out` writable.
 */
enum AdacoStatus adaco_history_confidence(const struct AdacoHistory *history,
                                          uintptr_t point,
                                          double *out);

/**
 * Points with confidence at least `gamma` and their modal labels, in
 * ascending point order. `out_len` always receives the full count; when it
 * exceeds `capacity` nothing is written and `BufferTooSmall` is returned.
 *
 * # Safety
 * `history` must be a live handle, `indices` and `labels` must have room
 * for `capacity` entries, `out_len` must be writable.
 */
enum AdacoStatus adaco_history_reliable_set(const struct AdacoHistory *history,
                                            double gamma,
                                            uintptr_t *indices,
                                            uint16_t *labels,
                                            uintptr_t capacity,
                                            uintptr_t *out_len);

/**
 * Load a scene directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated UTF-8 path and `out` writable.
 */
enum AdacoStatus adaco_scene_read(const char *dir, struct AdacoScene **out);

/**
 * # Safety
 * `scene` must come from [`adaco_scene_read`] and not be used again.
 */
void adaco_scene_free(struct AdacoScene *scene);

/**
 * # Safety
 * `scene` must be a live handle or NULL (returns 0).
 */
uintptr_t adaco_scene_num_points(const struct AdacoScene *scene);

/**
 * # Safety
 * `scene` must be a live handle or NULL (returns 0).
 */
uintptr_t adaco_scene_num_classes(const struct AdacoScene *scene);

/**
 * Packed `x, y, z` floats, `3 * num_points` of them, owned by the handle.
 *
 * # Safety
 * `scene` must be a live handle or NULL (returns NULL).
 */
const float *adaco_scene_points(const struct AdacoScene *scene);

/**
 * Noisy (training) labels, `num_points` of them, owned by the handle.
 *
 * # Safety
 * `scene` must be a live handle or NULL (returns NULL).
 */
const uint16_t *adaco_scene_labels(const struct AdacoScene *scene);

/**
 * Clean labels, or NULL when the scene has none.
 *
 * # Safety
 * `scene` must be a live handle or NULL (returns NULL).
 */
const uint16_t *adaco_scene_clean_labels(const struct AdacoScene *scene);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADACO_H */
