#pragma once

#include "bql/problem.hpp"

#include <iosfwd>
#include <memory>
#include <optional>
#include <random>

namespace bql {

// Three independent per-path streams: the main Wiener increments, the
// auxiliary increments of the regularizing noise, and uniforms for the
// bridge exit test.
class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, std::uint64_t path_index);
  Vec increments(int n, double dt);
  Vec aux_increments(int n, double dt);
  double uniform();
  std::uint64_t seed() const { return seed_; }
  std::uint64_t path_index() const { return path_index_; }

 private:
  std::uint64_t seed_, path_index_;
  std::mt19937_64 main_, aux_, unif_;
  std::normal_distribution<double> n_main_, n_aux_;
  std::uniform_real_distribution<double> u01_{0.0, 1.0};
};

// Control index per node of a regular grid (feedback policy).
struct FeedbackTable {
  Vec lo;
  double h = 0.0;
  std::vector<int> n;  // nodes per axis
  std::vector<int> index;
  int lookup(const Vec& x) const;
};

struct PolicyRef {
  enum class Kind { Constant, Feedback };
  Kind kind = Kind::Constant;
  int index = 0;
  std::shared_ptr<const FeedbackTable> table;

  static PolicyRef constant(int i) { return PolicyRef{Kind::Constant, i, nullptr}; }
  static PolicyRef feedback(std::shared_ptr<const FeedbackTable> t) { return PolicyRef{Kind::Feedback, 0, std::move(t)}; }
  int control_at(const Vec& x) const { return kind == Kind::Constant ? index : table->lookup(x); }
};

enum class ExitMode { Geometric, Bridge };

struct SimConfig {
  double dt = 1e-3;
  double t_max = 50.0;
  int boundary_bisection_iters = 60;
  PolicyRef policy;
  ExitMode exit_mode = ExitMode::Bridge;
  bool trace = false;
  void validate() const;
};

struct TracePoint {
  double t, psi, phi, logp;
  Vec x;
};

struct PathRecord {
  double exit_time = 0.0;
  Vec exit_point;
  double discount = 0.0;
  double payoff = 0.0;
  double running = 0.0;  // the integral part of payoff
  bool truncated = false;
  long steps = 0;
  std::vector<TracePoint> trace;
};

Vec step_base(const Vec& x, const ControlPoint& control, const Vec& dw, double dt);

enum class Order { First, Second };
double time_change_factor(double r, double r_hat, double eps, Order order);

enum class Regime { Boundary, Interior };

struct AuxProcesses {
  double r = 0.0;
  double r_hat = 0.0;
  Vec pi;
  Vec pi_hat;
  Mat P;
  Mat P_hat;
  Regime regime = Regime::Interior;
  static AuxProcesses zero(int d, int d1, Regime regime = Regime::Interior);
};

// State of y(eps) (first order) or z(eps) (second order) with its accumulators.
struct PerturbedState {
  Vec y;
  double log_p = 0.0;
  double phi = 0.0;
  double q = 0.0;
};

PerturbedState step_perturbed_first(const PerturbedState& s, const AuxProcesses& aux, const ControlPoint& control,
                                    double eps, const Vec& dw, double dt);
PerturbedState step_perturbed_second(const PerturbedState& s, const AuxProcesses& aux, const ControlPoint& control,
                                     double eps, const Vec& dw, double dt);

// Bisection along [x_prev, x_next] for {psi = level}.
std::optional<Vec> detect_exit(const DomainFn& domain, const Vec& x_prev, const Vec& x_next, double level, int iters);

PathRecord simulate_path(const ProblemSpec& problem, const SimConfig& config, const Vec& x0, NoiseStream& noise);
PathRecord simulate_regularized(const ProblemSpec& problem, double eps, const SimConfig& config, const Vec& x0,
                                NoiseStream& noise);

void write_trace_csv(std::ostream& os, const PathRecord& rec, int d);

}  // namespace bql
