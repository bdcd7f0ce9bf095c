#pragma once

#include "bql/quasi.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace bql {

struct Estimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  long n_paths = 0;
  double bias_bound = 0.0;  // truncation tail + exit-detection budget
  std::string caveat;
};

Estimate make_estimate(const std::vector<double>& samples, double bias_bound = 0.0);

using PolicySpec = PolicyRef;

struct McConfig {
  SimConfig sim;
  std::uint64_t seed = 1;
  int threads = 0;
};

// Sampled sup-norms used by bias budgets and a-priori bounds.
struct ProblemBounds {
  double psi_sup = 0.0;         // sup of psi over D
  double f_sup = 0.0;           // sup over controls of |f|
  double g_sup = 0.0;           // sup of |g| on the boundary
  double g_grad_sup = 0.0;      // sup of |grad g| on the boundary
  double grad_psi_min = 0.0;    // inf of |grad psi| on the boundary
  double sigma_sup = 0.0;       // sup of the Frobenius norm of sigma
};
ProblemBounds problem_bounds(const ProblemSpec& problem);

// Per-path payoffs and exit times for one policy (eps < 0 means no regularization).
struct PathSamples {
  std::vector<double> payoff;
  std::vector<double> exit_time;
  long truncated = 0;
};
PathSamples run_paths(const ProblemSpec& problem, double eps, const PolicySpec& policy, const Vec& x, long n_paths,
                      const McConfig& config, std::uint64_t seed);

Estimate estimate_value(const ProblemSpec& problem, const std::vector<PolicySpec>& policies, const Vec& x,
                        long n_paths, const McConfig& config);
Estimate estimate_value_regularized(const ProblemSpec& problem, double eps, const std::vector<PolicySpec>& policies,
                                    const Vec& x, long n_paths, const McConfig& config);

enum class FdOrder { First, Second };
// First: (v(x+e xi) - v(x))/e. Second: (v(x+e xi) - 2v(x) + v(x-e xi))/e^2.
// common_noise = false draws independent streams at each start point.
std::vector<Estimate> fd_directional(const ProblemSpec& problem, const std::vector<PolicySpec>& policies, const Vec& x,
                                     const Vec& xi, const std::vector<double>& eps_list, long n_paths,
                                     const McConfig& config, FdOrder order, bool common_noise = true);

// Joint stop of the coupled runs: t >= T, |xi| >= n_cap, or psi <= delta for
// the base or any perturbed path.
struct StopSpec {
  double T = 5.0;
  double n_cap = 1e3;
  double delta = 0.05;
};

struct QuasiRunConfig {
  double dt = 1e-3;
  BarrierParams params;
  bool disable_aux = false;
  int control = 0;
  std::uint64_t seed = 1;
  int threads = 0;
};

struct RepresentationReport {
  double lhs = 0.0;
  Estimate rhs;
  double abs_diff = 0.0;
  double tolerance = 0.0;  // 3 stderr + slack
  bool pass = false;
};
RepresentationReport representation_first(const ProblemSpec& problem, const Vec& x, const Vec& xi, double eps,
                                          const StopSpec& stop, long n_paths, const QuasiRunConfig& config,
                                          const Field* v_oracle, double slack = 0.01);

// Mean of the likelihood ratio p at the joint stop.
Estimate girsanov_normalization(const ProblemSpec& problem, const Vec& x, const Vec& xi, double eps,
                                const StopSpec& stop, long n_paths, const QuasiRunConfig& config);

// Per eps: mean of the sup-norm coupling error up to the stop of the base path
// (t >= T, |xi| >= n_cap or psi(x) <= delta); the perturbed paths do not stop it.
std::vector<Estimate> coupling_first(const ProblemSpec& problem, const Vec& x, const Vec& xi,
                                     const std::vector<double>& eps_list, const StopSpec& stop, long n_paths,
                                     const QuasiRunConfig& config);
std::vector<Estimate> coupling_second(const ProblemSpec& problem, const Vec& x, const Vec& xi, const Vec& eta0,
                                      const std::vector<double>& eps_list, const StopSpec& stop, long n_paths,
                                      const QuasiRunConfig& config);

struct MomentEstimate {
  int n = 1;
  Estimate moment;
  double bound = 0.0;  // n! sup(psi)^(n-1) psi(x)
};
std::vector<MomentEstimate> exit_moments(const ProblemSpec& problem, const Vec& x, const std::vector<int>& n_list,
                                         long n_paths, const McConfig& config);

// Glued quasiderivative paths from (x, xi); tracks the second-order adjoint
// components that the construction makes vanish.
struct NullityReport {
  double max_eta_tilde = 0.0;
  double max_eta_d2 = 0.0;
  double max_eta_tilde_ito = 0.0;  // product-rule form, diagnostic only
  long n_paths = 0;
  long total_steps = 0;
};
NullityReport eta_tilde_nullity(const ProblemSpec& problem, const Vec& x, const Vec& xi, const StopSpec& stop,
                                long n_paths, const QuasiRunConfig& config);

// Barrier along glued paths from a single start with a local time step
// dt = dt_factor * min((psi0 / (|grad psi| |sigma|))^2, psi0 / (|sigma|^2 |hess psi| / 2)), stopped when psi <= psi0/2,
// when the regime changes, or after max_steps.
struct BarrierRunConfig {
  double dt_factor = 1e-3;
  long max_steps = 2000;
  std::uint64_t seed = 1;
  int threads = 0;
};
struct BarrierRunReport {
  Vec x0, xi0;
  double psi0 = 0.0;
  Regime regime = Regime::Interior;
  double dt = 0.0;
  double b_start = 0.0;     // active barrier at the start
  double upper_start = 0.0; // upper envelope at the start
  Estimate b_stop;          // active barrier at the stop
  Estimate lower_stop;      // lower envelope at the stop
  Estimate sup_xi2;         // sup |xi|^2 along the path
};
BarrierRunReport barrier_run(const ProblemSpec& problem, int control, const BarrierParams& params, const Vec& x0,
                             const Vec& xi0, long n_paths, const BarrierRunConfig& config);

struct ResultRow {
  std::string experiment;
  Vec x, xi;
  double eps = 0.0;
  Estimate estimate;
  std::uint64_t seed = 0;
};
// Header: experiment,x,xi,eps,mean,stderr,bias_bound,n_paths,seed
void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows);

}  // namespace bql
