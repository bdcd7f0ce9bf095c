/* C interface of the bql library. Every call returns a bql_status; on failure
 * bql_last_error() describes it (thread-local, valid until the next call on
 * the same thread). Strings returned through char** are owned by the caller
 * and released with bql_string_free. */
#ifndef BQL_BQL_H
#define BQL_BQL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define BQL_API __declspec(dllexport)
#else
#define BQL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bql_status {
  BQL_OK = 0,
  BQL_E_INVALID_ARGUMENT = 1,
  BQL_E_CONFIG = 2,
  BQL_E_DOMAIN = 3,
  BQL_E_NUMERIC = 4,
  BQL_E_CALIBRATION = 5,
  BQL_E_CAPABILITY = 6,
  BQL_E_UNDERPOWERED = 7,
  BQL_E_IO = 8,
  BQL_E_UNKNOWN_CHECK = 9,
  BQL_E_INTERNAL = 10
} bql_status;

typedef enum bql_convention { BQL_REG_GENERATOR = 0, BQL_REG_REMARK = 1 } bql_convention;

typedef enum bql_suite_outcome { BQL_SUITE_PASS = 0, BQL_SUITE_FAIL = 1, BQL_SUITE_EMPTY = 4 } bql_suite_outcome;

typedef struct bql_problem bql_problem;
typedef struct bql_hjb bql_hjb;

typedef struct bql_estimate {
  double mean;
  double stderr_;
  double bias_bound;
  long n_paths;
} bql_estimate;

BQL_API const char* bql_version(void);
BQL_API const char* bql_last_error(void);
BQL_API const char* bql_status_name(int status);
BQL_API void bql_string_free(char* s);

/* Problems. */
BQL_API int bql_problem_load(const char* path, bql_problem** out);
BQL_API int bql_problem_parse(const char* json_text, bql_problem** out);
BQL_API void bql_problem_free(bql_problem* p);
BQL_API int bql_problem_dim(const bql_problem* p, int* d);
BQL_API int bql_problem_controls(const bql_problem* p, int* n);
BQL_API int bql_problem_psi(const bql_problem* p, const double* x, double* psi);
/* Problem with psi rescaled so the drift condition holds with margin. */
BQL_API int bql_problem_normalize(const bql_problem* p, bql_problem** out);

/* Monte Carlo. eps < 0 simulates the plain problem, eps >= 0 the regularized one.
 * policy: -1 = max over all constant controls, k >= 0 = control k only. */
BQL_API int bql_value(const bql_problem* p, const double* x, long n_paths, double dt, double eps, int policy,
                      uint64_t seed, int threads, bql_estimate* out);
/* Traces of n_paths paths from x under control `control`, as CSV
 * (path,t,x1..xd,psi,phi,logp). */
BQL_API int bql_simulate(const bql_problem* p, const double* x, int n_paths, double dt, int control, uint64_t seed,
                         char** csv);
/* Results-table CSV of coupling, likelihood-ratio and representation runs.
 * options_json: {"x", "xi", "eps": [...], "T", "delta", "paths", "dt"}; any key may be omitted. */
BQL_API int bql_quasicheck(const bql_problem* p, const char* options_json, uint64_t seed, int threads, char** csv);
/* Calibrated barrier parameters and certificates as JSON. */
BQL_API int bql_barriers(const bql_problem* p, int n_samples, uint64_t seed, char** json_out);

/* Discrete Bellman solver. */
BQL_API int bql_hjb_solve(const bql_problem* p, double h, double eps_reg, int convention, bql_hjb** out);
BQL_API void bql_hjb_free(bql_hjb* s);
BQL_API int bql_hjb_value_at(const bql_hjb* s, const double* x, double* out);
BQL_API int bql_hjb_info(const bql_hjb* s, int* iterations, double* residual_sup, long* unknowns);
BQL_API int bql_hjb_csv(const bql_hjb* s, char** csv);
/* Fitted derivative-estimate constants as JSON. */
BQL_API int bql_hjb_estimates(const bql_hjb* s, double kappa, char** json_out);

/* Verification suite. suite_json may be NULL to use the problem config's
 * "suite" block. seed < 0 keeps the configured master seed. outcome is a
 * bql_suite_outcome. */
BQL_API int bql_verify(const bql_problem* p, const char* suite_json, int64_t seed, int threads, char** report_json,
                       char** summary, int* outcome);
BQL_API int bql_registered_checks(char** json_list);

#ifdef __cplusplus
}
#endif

#endif
