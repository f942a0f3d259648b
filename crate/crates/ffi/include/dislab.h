#ifndef DISLAB_H
#define DISLAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum {
  DISLAB_STATUS_OK = 0,
  DISLAB_STATUS_NULL_POINTER = 1,
  DISLAB_STATUS_INVALID_ARGUMENT = 2,
  DISLAB_STATUS_INVALID_MEASURE = 3,
  DISLAB_STATUS_INVALID_GROUP = 4,
  DISLAB_STATUS_NOT_SUBGROUP = 5,
  DISLAB_STATUS_NOT_NORMAL = 6,
  DISLAB_STATUS_NORMALIZATION = 7,
  DISLAB_STATUS_NEGATIVE_DENSITY = 8,
  DISLAB_STATUS_DIVERGENT = 9,
  DISLAB_STATUS_INCOMPATIBLE = 10,
  DISLAB_STATUS_ABSOLUTE_CONTINUITY = 11,
  DISLAB_STATUS_ZERO_MASS_FIBER = 12,
  DISLAB_STATUS_BUDGET = 13,
  DISLAB_STATUS_NUMERICAL = 14,
  DISLAB_STATUS_PANIC = 15,
} DislabStatus;

/**
 * A finite group.
 */
typedef struct DislabGroup DislabGroup;

/**
 * A reference measure.
 */
typedef struct DislabMeasure DislabMeasure;

/**
 * A probability law with a density against a reference measure.
 */
typedef struct DislabProb DislabProb;

/**
 * The three chain-rule terms in nats.
 */
typedef struct {
  double total;
  double marginal;
  double conditional;
  double discrepancy;
  double tolerance;
  bool passed;
} DislabChainRule;

/**
 * Typical-set estimates. `lower_ok` is -1 when the premise `P(A) ≥ 1-ε`
 * fails and the lower bound is not asserted.
 */
typedef struct {
  double entropy;
  double prob;
  double prob_stderr;
  double volume;
  double volume_stderr;
  /**
   * NaN when the volume is zero.
   */
  double rate;
  double upper_bound;
  double lower_bound;
  bool upper_ok;
  int32_t lower_ok;
  bool zero_hits;
} DislabTypicalSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `capacity`. Returns the full message length in bytes.
 *
 * # Safety
 * `buffer` must be null or point to `capacity` writable bytes.
 */
size_t dislab_last_error(char *buffer, size_t capacity);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dislab_version(void);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
DislabStatus dislab_group_cyclic(size_t n, DislabGroup **out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
DislabStatus dislab_group_symmetric(size_t k, DislabGroup **out);

/**
 * Group from a row-major `order × order` composition table.
 *
 * # Safety
 * `table` must point to `order * order` values; `out` must be valid.
 */
DislabStatus dislab_group_from_table(size_t order,
                                     const size_t *table,
                                     size_t identity,
                                     DislabGroup **out);

/**
 * Group order, or 0 for a null handle.
 *
 * # Safety
 * `group` must be null or a live handle.
 */
size_t dislab_group_order(const DislabGroup *group);

/**
 * # Safety
 * `group` must be null or a handle not freed before.
 */
void dislab_group_free(DislabGroup *group);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
DislabStatus dislab_measure_counting(size_t n, DislabMeasure **out);

/**
 * Atoms `0..len` with the given weights.
 *
 * # Safety
 * `weights` must point to `len` values; `out` must be valid.
 */
DislabStatus dislab_measure_discrete(const double *weights, size_t len, DislabMeasure **out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
DislabStatus dislab_measure_interval(double a, double b, DislabMeasure **out);

/**
 * # Safety
 * `lower` and `upper` must point to `dim` values; `out` must be valid.
 */
DislabStatus dislab_measure_box(const double *lower,
                                const double *upper,
                                size_t dim,
                                DislabMeasure **out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
DislabStatus dislab_measure_annulus(double r_min, double r_max, DislabMeasure **out);

/**
 * `scale` times counting measure on the group.
 *
 * # Safety
 * `group` must be a live handle; `out` must be valid.
 */
DislabStatus dislab_measure_group_haar(const DislabGroup *group, double scale, DislabMeasure **out);

/**
 * # Safety
 * `left` and `right` must be live handles; `out` must be valid.
 */
DislabStatus dislab_measure_product(const DislabMeasure *left,
                                    const DislabMeasure *right,
                                    DislabMeasure **out);

/**
 * A new measure equal to `alpha` times `measure`.
 *
 * # Safety
 * `measure` must be a live handle; `out` must be valid.
 */
DislabStatus dislab_measure_scaled(const DislabMeasure *measure, double alpha, DislabMeasure **out);

/**
 * Total mass, or NaN for a null handle.
 *
 * # Safety
 * `measure` must be null or a live handle.
 */
double dislab_measure_total_mass(const DislabMeasure *measure);

/**
 * # Safety
 * `measure` must be null or a handle not freed before.
 */
void dislab_measure_free(DislabMeasure *measure);

/**
 * Law with the given probability per atom, in the measure's atom order.
 *
 * # Safety
 * `measure` must be a live handle, `masses` must point to `len` values and
 * `out` must be valid.
 */
DislabStatus dislab_prob_from_masses(const DislabMeasure *measure,
                                     const double *masses,
                                     size_t len,
                                     DislabProb **out);

/**
 * Constant density `1 / total mass`.
 *
 * # Safety
 * `measure` must be a live handle; `out` must be valid.
 */
DislabStatus dislab_prob_uniform(const DislabMeasure *measure, DislabProb **out);

/**
 * # Safety
 * `prob` must be null or a handle not freed before.
 */
void dislab_prob_free(DislabProb *prob);

/**
 * Entropy in nats and its error estimate.
 *
 * # Safety
 * `prob` must be a live handle; `value` and `error` must be valid.
 */
DislabStatus dislab_entropy(const DislabProb *prob, double *value, double *error);

/**
 * `D(p || q)` in nats; both laws must share the reference measure.
 *
 * # Safety
 * `p` and `q` must be live handles; `out` must be valid.
 */
DislabStatus dislab_kl_divergence(const DislabProb *p, const DislabProb *q, double *out);

/**
 * Chain rule along `G -> G/H` for a law on a group reference. The Haar scale
 * of `G` is the reference's; `H` gets `subgroup_scale`.
 *
 * # Safety
 * `prob` must be a live handle, `subgroup` must point to `len` values and
 * `out` must be valid.
 */
DislabStatus dislab_chain_rule_group_quotient(const DislabProb *prob,
                                              const size_t *subgroup,
                                              size_t len,
                                              double subgroup_scale,
                                              DislabChainRule *out);

/**
 * Chain rule along an atom map; `map[i]` is the image of the `i`-th atom.
 *
 * # Safety
 * `prob` must be a live handle, `map` must point to `len` values and `out`
 * must be valid.
 */
DislabStatus dislab_chain_rule_discrete_map(const DislabProb *prob,
                                            const size_t *map,
                                            size_t len,
                                            DislabChainRule *out);

/**
 * Chain rule along the projection of a product reference onto its left factor.
 *
 * # Safety
 * `prob` must be a live handle; `out` must be valid.
 */
DislabStatus dislab_chain_rule_product_projection(const DislabProb *prob, DislabChainRule *out);

/**
 * Chain rule along the radius of an annulus reference.
 *
 * # Safety
 * `prob` must be a live handle; `out` must be valid.
 */
DislabStatus dislab_chain_rule_polar(const DislabProb *prob, DislabChainRule *out);

/**
 * Exact typical-set volume and probability by type enumeration.
 *
 * # Safety
 * `prob` must be a live handle; `out` must be valid.
 */
DislabStatus dislab_exact_typical(const DislabProb *prob,
                                  size_t n,
                                  double delta,
                                  double epsilon,
                                  DislabTypicalSet *out);

/**
 * Seeded Monte Carlo estimates of the typical-set volume and probability.
 *
 * # Safety
 * `prob` must be a live handle; `out` must be valid.
 */
DislabStatus dislab_monte_carlo_typical(const DislabProb *prob,
                                        size_t n,
                                        double delta,
                                        double epsilon,
                                        size_t samples,
                                        uint64_t seed,
                                        DislabTypicalSet *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISLAB_H */
