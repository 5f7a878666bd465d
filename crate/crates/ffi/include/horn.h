#ifndef HORN_H
#define HORN_H

#include <stddef.h>
#include <stdint.h>

typedef enum HornStatus {
  HORN_STATUS_OK = 0,
  HORN_STATUS_NULL_POINTER = 1,
  HORN_STATUS_INVALID_UTF8 = 2,
  HORN_STATUS_INVALID_PARAMETER = 3,
  HORN_STATUS_UNKNOWN_CROSS_SECTION = 4,
  HORN_STATUS_PRECONDITION = 5,
  HORN_STATUS_NOT_INTEGRAL = 6,
  HORN_STATUS_NO_CONVERGENCE = 7,
  HORN_STATUS_CONFIG = 8,
  HORN_STATUS_PANIC = 9,
  HORN_STATUS_OTHER = 10,
} HornStatus;

// Geometric operator model on a horn over a catalog cross-section.
typedef struct HornModel HornModel;

// Warping function `h`.
typedef struct HornProfile HornProfile;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty if none. Valid until
// the next failing call on the same thread.
const char *horn_last_error(void);

// Static name of a status code.
const char *horn_status_name(enum HornStatus status);

// Builds the model of `op` (`dirac`, `gb`, `signature`) over `cross_section` with exponent `alpha`.
//
// # Safety
// String arguments must be valid NUL-terminated strings; `out` must be writable.
enum HornStatus horn_model_new(const char *op,
                               const char *cross_section,
                               double alpha,
                               struct HornModel **out);

// # Safety
// `model` must be null or a handle from [`horn_model_new`] not yet freed.
void horn_model_free(struct HornModel *model);

// Dimension of `D_max / D_min`.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum HornStatus horn_model_quotient_dim(const struct HornModel *model, size_t *out);

// Quotient dimension counted by the finite-difference oracle with singular-value tolerance `tol`.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum HornStatus horn_model_oracle_quotient_dim(const struct HornModel *model,
                                               double tol,
                                               size_t *out);

// Dirac index on a horn over `cross_section` with the default spin structure;
// `extension` is `min`, `max`, `delta` or `W:s1,s2,...`.
//
// # Safety
// String arguments must be valid NUL-terminated strings; `out` must be writable.
enum HornStatus horn_dirac_index(const char *cross_section,
                                 const char *extension,
                                 double ahat_integral,
                                 double alpha,
                                 int64_t *out);

// Gauss-Bonnet index of a manifold with horns over `cross_section`, given `∫ e`.
//
// # Safety
// `cross_section` must be a valid NUL-terminated string; `out` must be writable.
enum HornStatus horn_gb_index(const char *cross_section, double euler_integral, int64_t *out);

// `h = x^beta` on `(0, eps]`.
//
// # Safety
// `out` must be writable.
enum HornStatus horn_profile_power(double beta, double eps, struct HornProfile **out);

// Horn profile `x^alpha` on `(0, eps0]`, blended to a smooth end at `eps`.
//
// # Safety
// `out` must be writable.
enum HornStatus horn_profile_horn(double alpha, double eps0, double eps, struct HornProfile **out);

// # Safety
// `profile` must be null or a handle from a `horn_profile_*` constructor not yet freed.
void horn_profile_free(struct HornProfile *profile);

// `h(x)` and `h'(x)`; either out pointer may be null.
//
// # Safety
// `profile` must be a live handle; non-null out pointers must be writable.
enum HornStatus horn_profile_eval(const struct HornProfile *profile,
                                  double x,
                                  double *h,
                                  double *dh);

// `-∫_delta^eps h''` over a warped surface collar.
//
// # Safety
// `profile` must be a live handle; `out` must be writable.
enum HornStatus horn_surface_euler_integral(const struct HornProfile *profile,
                                            double delta,
                                            double eps,
                                            double *out);

// Smallest integer `s` for which `x^s` contracts `[0, 1 - w]`.
//
// # Safety
// `out` must be writable.
enum HornStatus horn_contraction_threshold(double w, uint32_t *out);

// Runs a CLI command line (`argv[0]` excluded) and returns its rendered output.
// The process exit code (0, 1 or 2) is written to `exit_code`; the output
// string must be released with [`horn_string_free`].
//
// # Safety
// `argv` must point to `argc` valid NUL-terminated strings; out pointers must be writable.
enum HornStatus horn_run(size_t argc, const char *const *argv, int32_t *exit_code, char **output);

// # Safety
// `s` must be null or a string returned by [`horn_run`] not yet freed.
void horn_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HORN_H */
