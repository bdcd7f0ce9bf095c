#pragma once

#include "bql/sde.hpp"

#include "json.hpp"

namespace bql {

struct BarrierParams {
  double lambda = 0.125;
  double delta = 0.125 * 0.125 / 16.0;
  double theta = 1.0 / 6.0;
  double k1 = 1.0;
  double nu = 2.0 / 27.0;
  double kappa = 1.0;

  static double nu_of(double theta) { return theta * (1 - 2 * theta) * (1 - 2 * theta) / (2 * (1 - 3 * theta)); }
  // delta defaults to lambda^2 / 16.
  static BarrierParams make(double lambda, double theta, double k1, double delta = -1.0, double kappa = 1.0);
  void validate() const;
};

struct QuasiState {
  Vec xi;
  Vec eta;
  double xi_tilde = 0.0;
  double eta_tilde = 0.0;
  double xi_d1 = 0.0, xi_d2 = 0.0, xi_d3 = 0.0;
  double eta_d1 = 0.0, eta_d2 = 0.0, eta_d3 = 0.0;
  // eta_tilde accumulated through the product-rule form pi_hat.dw + d(xi_tilde^2) - d<xi_tilde>.
  double eta_tilde_ito = 0.0;

  static QuasiState start(const Vec& xi, const Vec& eta);
};

AuxProcesses aux_boundary(const Geometry& geom, const ControlPoint& control, const Vec& xi, double xi_tilde,
                          const BarrierParams& params);
AuxProcesses aux_interior(const Geometry& geom, const ControlPoint& control, const Vec& xi, double xi_tilde,
                          const BarrierParams& params);
// Residual of the boundary rotation identity for column k.
double pproperty_residual(const Geometry& geom, const ControlPoint& control, const Vec& xi, const AuxProcesses& aux,
                          int k);

QuasiState step_quasi(const QuasiState& s, const AuxProcesses& aux, const ControlPoint& control, const Vec& x,
                      double phi, const Vec& dw, double dt);

struct SwitchAutomaton {
  Regime regime = Regime::Interior;
  std::vector<double> switch_times;
};
void update_regime(SwitchAutomaton& automaton, double psi, const BarrierParams& params, double t);

double barrier_B1(const Geometry& geom, const Vec& xi, const BarrierParams& params);
double barrier_B2(const Geometry& geom, const Vec& xi, const BarrierParams& params);
struct Envelopes {
  double upper = 0.0;
  double lower = 0.0;
};
Envelopes barrier_envelopes(const Geometry& geom, const Vec& xi, const BarrierParams& params);

enum class Barrier { B1, B2 };

struct DriftEval {
  double drift = 0.0;
  double scale = 0.0;  // sum of magnitudes of the individual generator terms
  AuxProcesses aux;
};

DriftEval generator_drift_eval(const ControlPoint& control, const DomainFn& domain, const Geometry& geom,
                               const Vec& xi, double xi_tilde, Regime regime, const BarrierParams& params,
                               Barrier barrier, double kappa);
double generator_drift(const ProblemSpec& problem, const ControlPoint& control, const DomainFn& domain, const Vec& x,
                       const Vec& xi, double xi_tilde, Regime regime, const BarrierParams& params, Barrier barrier,
                       double kappa);
// Same quantity from central finite differences of the barrier at real points.
double generator_drift_fd(const ControlPoint& control, const DomainFn& domain, const Vec& x, const Vec& xi,
                          Regime regime, const BarrierParams& params, Barrier barrier, double kappa, double h);

// Point on {psi = level} along a random ray from the anchor; psi is set to
// exactly `level` in the returned geometry.
Geometry sample_level_point(const DomainFn& domain, double level, const Vec& direction);
Vec random_unit_vector(std::mt19937_64& rng, int d);

struct SwitchingReport {
  double min_b1_minus_4b2 = 0.0;  // on {psi = lambda}
  double min_b2_minus_4b1 = 0.0;  // on {psi = lambda^2}
  bool pass = false;
  int n_samples = 0;
};
// Each sampled point is tested at a random unit xi and at the unit normal and
// a unit tangent of the level set, where B1 - 4 B2 attains its extremes.
SwitchingReport switching_check(const DomainFn& domain, const BarrierParams& params, int n_samples, std::uint64_t seed);

struct DriftCertificate {
  double drift_max = -1e300;       // max raw drift
  double normalized_max = -1e300;  // max drift / scale
  int violations = 0;
  int n_evaluations = 0;
  Vec worst_x;
  double worst_psi = 0.0;
  Vec worst_xi;
};
// Samples n points with psi log-uniform in [lo, hi]; at each point and for
// every control evaluates the drift at a random unit xi and at the unit xi
// maximizing the (quadratic in xi) drift of B itself.
// Top eigenvector of the quadratic form xi -> drift of B (kappa = 1).
Vec worst_drift_direction(const ControlPoint& control, const DomainFn& domain, const Geometry& geom, Regime regime,
                          const BarrierParams& params, Barrier barrier);
DriftCertificate drift_certificate(const ProblemSpec& problem, const BarrierParams& params, Barrier barrier,
                                   double kappa, double psi_lo, double psi_hi, int n_samples, std::uint64_t seed,
                                   double tol = 1e-8);

struct Calibration {
  BarrierParams params;
  DriftCertificate strip;
  DriftCertificate interior;
  SwitchingReport switching;
  int n_samples = 0;
  std::uint64_t seed = 0;
  int candidates_tried = 0;
  nlohmann::json certificate() const;
};

struct CalibrationGrid {
  int lambda_log2_min = 2;   // lambda = 2^-k for k in [min, max]
  int lambda_log2_max = 40;
  std::vector<double> thetas{0.25, 1.0 / 6.0, 1.0 / 12.0};
  std::vector<double> k1s{1, 4, 16, 64};
};

Calibration calibrate_lambda(const ProblemSpec& problem, int n_samples, std::uint64_t seed,
                             const CalibrationGrid& grid = {});

// Glued quasiderivative path for a single control: base state, quasi state,
// automaton and current auxiliary processes.
struct GluedPath {
  const ProblemSpec* problem = nullptr;
  int control = 0;
  BarrierParams params;
  Vec x;
  QuasiState q;
  SwitchAutomaton automaton;
  double phi = 0.0;
  double t = 0.0;
  Geometry geom;
  AuxProcesses aux;
  bool aux_disabled = false;

  GluedPath(const ProblemSpec& p, int control_index, const BarrierParams& bp, const Vec& x0, const Vec& xi0,
            const Vec& eta0, bool disable_aux = false);
  const ControlPoint& ctrl() const { return problem->controls[static_cast<std::size_t>(control)]; }
  // Refreshes geometry, regime and aux at the current state.
  void prepare();
  void advance(const Vec& dw, double dt);
};

}  // namespace bql
