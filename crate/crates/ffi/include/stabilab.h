#ifndef STABILAB_H
#define STABILAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StabilabStatus {
  STABILAB_STATUS_OK = 0,
  STABILAB_STATUS_NULL_POINTER = 1,
  STABILAB_STATUS_INVALID_ARGUMENT = 2,
  STABILAB_STATUS_NUMERICAL = 3,
  STABILAB_STATUS_PANIC = 4,
} StabilabStatus;

// Parsed and validated domain.
typedef struct StabilabDomain StabilabDomain;

// Finished stochastic ensemble.
typedef struct StabilabEnsemble StabilabEnsemble;

typedef struct StabilabThreshold {
  double margin;
  // NaN when the margin is not positive or there are no holes.
  double epsilon0;
  double predicted_exponent;
  // 1 when the zero state is stabilized.
  int32_t stabilized;
} StabilabThreshold;

typedef struct StabilabSimConfig {
  double beta;
  double dt;
  double horizon;
  // Negative for the default `horizon / 5`.
  double burn_in;
  size_t paths;
  uint64_t seed;
  // Amplitude of the `φ₁` initial state.
  double amplitude;
} StabilabSimConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *stabilab_last_error(void);

// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum StabilabStatus stabilab_domain_from_json(const char *json, struct StabilabDomain **out);

// # Safety
// `domain` must come from [`stabilab_domain_from_json`] and not be used
// afterwards. Null is ignored.
void stabilab_domain_free(struct StabilabDomain *domain);

// Smallest Dirichlet eigenvalue on the lattice with `resolution` nodes per
// unit length.
//
// # Safety
// `domain` and `lambda1` must be valid pointers.
enum StabilabStatus stabilab_eigen(const struct StabilabDomain *domain,
                                   size_t resolution,
                                   double *lambda1);

// Capacity of the holes of `domain` relative to its outer boundary.
//
// # Safety
// `domain` and `value` must be valid pointers.
enum StabilabStatus stabilab_capacity(const struct StabilabDomain *domain,
                                      size_t resolution,
                                      double *value);

// Margin, critical hole size and exponent bound from known eigen data.
// `phi1_sq` holds `n_holes` values and may be null when `n_holes` is 0.
//
// # Safety
// `phi1_sq` must point to `n_holes` doubles and `out` must be valid.
enum StabilabStatus stabilab_threshold(size_t dimension,
                                       double beta,
                                       double gamma0,
                                       double rho0,
                                       double lambda1,
                                       const double *phi1_sq,
                                       size_t n_holes,
                                       struct StabilabThreshold *out);

// Defaults matching the command line: `dt = 0.005`, `T = 10`, 16 paths.
struct StabilabSimConfig stabilab_sim_config_default(double beta);

// Runs an ensemble. `noise` uses the command-line syntax, e.g.
// `"linear:alpha=3.4641"`.
//
// # Safety
// All pointers must be valid; `noise` NUL-terminated.
enum StabilabStatus stabilab_simulate(const struct StabilabDomain *domain,
                                      size_t resolution,
                                      const char *noise,
                                      const struct StabilabSimConfig *config,
                                      struct StabilabEnsemble **out);

// # Safety
// `ensemble` must be valid.
size_t stabilab_ensemble_paths(const struct StabilabEnsemble *ensemble);

// Finite-time exponent of `log||u||²` on path `path`.
//
// # Safety
// `ensemble` and `value` must be valid.
enum StabilabStatus stabilab_ensemble_lyapunov(const struct StabilabEnsemble *ensemble,
                                               size_t path,
                                               double *value);

// Ensemble summary as a JSON string, to be released with
// [`stabilab_string_free`].
//
// # Safety
// `ensemble` and `out` must be valid.
enum StabilabStatus stabilab_ensemble_summary_json(const struct StabilabEnsemble *ensemble,
                                                   char **out);

// # Safety
// `ensemble` must come from [`stabilab_simulate`]. Null is ignored.
void stabilab_ensemble_free(struct StabilabEnsemble *ensemble);

// # Safety
// `s` must come from this library. Null is ignored.
void stabilab_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* STABILAB_H */
