#ifndef HDMARGIN_H
#define HDMARGIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  HDM_STATUS_OK = 0,
  HDM_STATUS_NULL_POINTER = 1,
  HDM_STATUS_INVALID_ARGUMENT = 2,
  HDM_STATUS_INVALID_LOSS = 3,
  HDM_STATUS_INVALID_MODEL = 4,
  HDM_STATUS_INVALID_DATA = 5,
  HDM_STATUS_NO_CONVERGENCE = 6,
  HDM_STATUS_NUMERICAL = 7,
  HDM_STATUS_IO = 8,
  HDM_STATUS_PANIC = 9,
} HdmStatus;

/**
 * Asymptotic precision over a lambda grid.
 */
typedef struct HdmCurve HdmCurve;

/**
 * A loss function (`plr`, `svm`, `dwd:q=..`, `lum:a=..,c=..`).
 */
typedef struct HdmLoss HdmLoss;

/**
 * A spiked two-class population model.
 */
typedef struct HdmModel HdmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next failing call.
 */
const char *hdm_last_error(void);

/**
 * Static description of a status code.
 */
const char *hdm_status_str(HdmStatus status);

/**
 * Parses a loss specification such as `"dwd:q=1"`.
 */
HdmStatus hdm_loss_parse(const char *spec, HdmLoss **out);

void hdm_loss_free(HdmLoss *loss);

/**
 * Loss value `V(u)`.
 */
HdmStatus hdm_loss_eval(const HdmLoss *loss, double u, double *out);

/**
 * Proximal map `argmin_u V(u) + (u - a)^2 / (2 b)`.
 */
HdmStatus hdm_prox(const HdmLoss *loss, double a, double b, double *out);

/**
 * Shared-covariance model with balanced classes; `alpha` is the total ratio `n / p`.
 * `spikes` and `r` both have `k` entries (either may be null when `k == 0`).
 */
HdmStatus hdm_model_homogeneous(double mu,
                                double sigma,
                                double alpha,
                                const double *spikes,
                                const double *r,
                                size_t k,
                                HdmModel **out);

/**
 * Model from its JSON form.
 */
HdmStatus hdm_model_from_json(const char *json, HdmModel **out);

/**
 * JSON form of a model; release with [`hdm_string_free`].
 */
HdmStatus hdm_model_to_json(const HdmModel *model, char **out);

void hdm_model_free(HdmModel *model);

void hdm_string_free(char *s);

/**
 * Estimates a model from a row-major `n x p` feature matrix and `±1` labels.
 * `pooled` nonzero selects the shared-covariance estimator.
 */
HdmStatus hdm_estimate(const double *features,
                       const double *labels,
                       size_t n,
                       size_t p,
                       int pooled,
                       HdmModel **out);

/**
 * Sweeps a log-spaced grid of `count` values in `[lambda_min, lambda_max]`.
 */
HdmStatus hdm_sweep(const HdmLoss *loss,
                    const HdmModel *model,
                    double lambda_min,
                    double lambda_max,
                    size_t count,
                    HdmCurve **out);

size_t hdm_curve_len(const HdmCurve *curve);

/**
 * Grid point `index`: lambda, class precisions, balanced precision and a convergence flag.
 * Any output pointer may be null.
 */
HdmStatus hdm_curve_point(const HdmCurve *curve,
                          size_t index,
                          double *lambda,
                          double *precision_plus,
                          double *precision_minus,
                          double *balanced,
                          int *converged);

/**
 * Refined maximizer of the balanced precision.
 */
HdmStatus hdm_curve_optimum(const HdmCurve *curve, double *lambda, double *balanced);

void hdm_curve_free(HdmCurve *curve);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HDMARGIN_H */
