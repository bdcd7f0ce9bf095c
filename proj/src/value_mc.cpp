#include "bql/value_mc.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <ostream>

namespace bql {

Estimate make_estimate(const std::vector<double>& samples, double bias_bound) {
  if (samples.size() < 2) throw Error(ErrorCode::InvalidArgument, "estimate: need at least 2 samples");
  const SampleStats s = sample_stats(samples);
  Estimate e;
  e.mean = s.mean;
  e.stderr_ = s.stderr_;
  e.n_paths = s.n;
  e.bias_bound = bias_bound;
  return e;
}

ProblemBounds problem_bounds(const ProblemSpec& problem) {
  ProblemBounds b;
  const auto pts = sample_domain(problem, 2000, 11);
  b.psi_sup = problem.domain.psi(problem.domain.anchor());
  for (const auto& x : pts) {
    b.psi_sup = std::max(b.psi_sup, problem.domain.psi(x));
    for (const auto& c : problem.controls) b.f_sup = std::max(b.f_sup, std::abs(c.f.value(x)));
  }
  for (const auto& c : problem.controls) b.sigma_sup = std::max(b.sigma_sup, c.sigma.norm());
  std::mt19937_64 rng(13);
  b.grad_psi_min = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 256; ++k) {
    Vec dir(problem.d);
    if (problem.d == 1)
      dir(0) = k % 2 == 0 ? 1.0 : -1.0;
    else
      dir = random_unit_vector(rng, problem.d);
    const Geometry g = sample_level_point(problem.domain, 0.0, dir);
    b.g_sup = std::max(b.g_sup, std::abs(problem.g.value(g.x)));
    b.g_grad_sup = std::max(b.g_grad_sup, problem.g.grad(g.x).norm());
    b.grad_psi_min = std::min(b.grad_psi_min, g.grad.norm());
  }
  return b;
}

PathSamples run_paths(const ProblemSpec& problem, double eps, const PolicySpec& policy, const Vec& x, long n_paths,
                      const McConfig& config, std::uint64_t seed) {
  if (n_paths < 2) throw Error(ErrorCode::InvalidArgument, "run_paths: n_paths must be >= 2");
  if (!problem.inside(x)) throw Error(ErrorCode::Domain, "estimate: start point outside D");
  SimConfig sim = config.sim;
  sim.policy = policy;
  sim.trace = false;
  sim.validate();
  PathSamples out;
  out.payoff.assign(static_cast<std::size_t>(n_paths), 0.0);
  out.exit_time.assign(static_cast<std::size_t>(n_paths), 0.0);
  std::vector<char> trunc(static_cast<std::size_t>(n_paths), 0);
  parallel_for(n_paths, resolve_threads(config.threads), [&](long i) {
    NoiseStream noise(seed, static_cast<std::uint64_t>(i));
    const PathRecord r = eps < 0.0 ? simulate_path(problem, sim, x, noise) : simulate_regularized(problem, eps, sim, x, noise);
    out.payoff[static_cast<std::size_t>(i)] = r.payoff;
    out.exit_time[static_cast<std::size_t>(i)] = r.exit_time;
    trunc[static_cast<std::size_t>(i)] = r.truncated ? 1 : 0;
  });
  for (char t : trunc) out.truncated += t;
  return out;
}

namespace {

double bias_budget(const ProblemSpec& problem, const McConfig& config, double mean_exit_time) {
  const ProblemBounds b = problem_bounds(problem);
  // Tail beyond t_max: E(tau - tau ^ T) <= sup psi * E tau / T and P(tau > T) <= E tau / T.
  const double tail = (b.f_sup * b.psi_sup + b.g_sup) * mean_exit_time / config.sim.t_max;
  // Overshoot of the discretely monitored exit: 0.5826 sigma sqrt(dt) in distance,
  // converted to value through the Lipschitz scale of the payoff near the boundary.
  const double lip = b.f_sup * b.psi_sup / std::max(b.grad_psi_min, 1e-300) + b.g_grad_sup;
  double exit_budget = 0.5826 * b.sigma_sup * std::sqrt(config.sim.dt) * lip;
  if (config.sim.exit_mode == ExitMode::Bridge) exit_budget *= std::sqrt(config.sim.dt);
  return tail + exit_budget;
}

Estimate estimate_impl(const ProblemSpec& problem, double eps, const std::vector<PolicySpec>& policies, const Vec& x,
                       long n_paths, const McConfig& config) {
  if (policies.empty()) throw Error(ErrorCode::InvalidArgument, "estimate_value: policy list is empty");
  Estimate best;
  double best_exit = 0.0;
  bool first = true;
  for (const auto& pol : policies) {
    const PathSamples s = run_paths(problem, eps, pol, x, n_paths, config, config.seed);
    const Estimate e = make_estimate(s.payoff);
    if (first || e.mean > best.mean) {
      best = e;
      best_exit = sample_stats(s.exit_time).mean;
      first = false;
    }
  }
  best.bias_bound = bias_budget(problem, config, best_exit);
  if (policies.size() > 1 || problem.controls.size() > 1)
    best.caveat = "max over the supplied constant/feedback policies; a lower bound on the value";
  return best;
}

}  // namespace

Estimate estimate_value(const ProblemSpec& problem, const std::vector<PolicySpec>& policies, const Vec& x,
                        long n_paths, const McConfig& config) {
  return estimate_impl(problem, -1.0, policies, x, n_paths, config);
}

Estimate estimate_value_regularized(const ProblemSpec& problem, double eps, const std::vector<PolicySpec>& policies,
                                    const Vec& x, long n_paths, const McConfig& config) {
  if (!(eps >= 0.0)) throw Error(ErrorCode::InvalidArgument, "estimate_value_regularized: eps must be >= 0");
  return estimate_impl(problem, eps, policies, x, n_paths, config);
}

std::vector<Estimate> fd_directional(const ProblemSpec& problem, const std::vector<PolicySpec>& policies, const Vec& x,
                                     const Vec& xi, const std::vector<double>& eps_list, long n_paths,
                                     const McConfig& config, FdOrder order, bool common_noise) {
  if (policies.empty()) throw Error(ErrorCode::InvalidArgument, "fd_directional: policy list is empty");
  std::vector<Estimate> out;
  for (double e : eps_list) {
    if (!(e > 0.0)) throw Error(ErrorCode::InvalidArgument, "fd_directional: eps must be positive");
    std::vector<Vec> starts{x, Vec(x + e * xi)};
    if (order == FdOrder::Second) starts.push_back(Vec(x - e * xi));
    for (const auto& s : starts)
      if (!problem.inside(s)) throw Error(ErrorCode::Domain, "fd_directional: shifted start exits D");
    // Payoffs per start for the policy that maximizes the mean at that start.
    std::vector<std::vector<double>> pay;
    for (std::size_t k = 0; k < starts.size(); ++k) {
      const std::uint64_t seed = common_noise ? config.seed : derive_seed(config.seed, "fd-start-" + std::to_string(k));
      std::vector<double> best;
      double best_mean = -std::numeric_limits<double>::infinity();
      for (const auto& pol : policies) {
        PathSamples s = run_paths(problem, -1.0, pol, starts[k], n_paths, config, seed);
        const double m = sample_stats(s.payoff).mean;
        if (m > best_mean) {
          best_mean = m;
          best = std::move(s.payoff);
        }
      }
      pay.push_back(std::move(best));
    }
    std::vector<double> diff(static_cast<std::size_t>(n_paths));
    for (std::size_t i = 0; i < diff.size(); ++i) {
      if (order == FdOrder::First)
        diff[i] = (pay[1][i] - pay[0][i]) / e;
      else
        diff[i] = (pay[1][i] - 2.0 * pay[0][i] + pay[2][i]) / (e * e);
    }
    out.push_back(make_estimate(diff));
  }
  return out;
}

namespace {

struct CoupledStop {
  double V = 0.0;
  double p = 1.0;
  double sup_err = 0.0;
};

bool stop_now(double t, const Vec& xi, const StopSpec& stop, double dt) {
  return t >= stop.T - 1e-9 * dt || xi.norm() >= stop.n_cap;
}

void check_stop_spec(const StopSpec& s, const QuasiRunConfig& c) {
  if (!(s.T > 0.0) || !(s.n_cap > 0.0) || !(s.delta >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "stop_spec: need T > 0, n_cap > 0, delta >= 0");
  if (!(c.dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "quasi run: dt must be positive");
}

// joint_stop = false stops on the base path only, so the window does not depend on eps.
CoupledStop run_first(const ProblemSpec& problem, const Vec& x, const Vec& xi, double eps, const StopSpec& stop,
                      const QuasiRunConfig& cfg, NoiseStream& noise, const Field* v, bool joint_stop = true) {
  GluedPath gp(problem, cfg.control, cfg.params, x, xi, Vec::Zero(problem.d), cfg.disable_aux);
  PerturbedState y;
  y.y = x + eps * xi;
  CoupledStop out;
  const ControlPoint& ctrl = gp.ctrl();
  while (!stop_now(gp.t, gp.q.xi, stop, cfg.dt) && problem.domain.psi(gp.x) > stop.delta &&
         (!joint_stop || problem.domain.psi(y.y) > stop.delta)) {
    gp.prepare();
    const Vec dw = noise.increments(problem.d1, cfg.dt);
    y = step_perturbed_first(y, gp.aux, ctrl, eps, dw, cfg.dt);
    gp.advance(dw, cfg.dt);
    if (eps > 0.0) out.sup_err = std::max(out.sup_err, (Vec((y.y - gp.x) / eps) - gp.q.xi).norm());
  }
  out.p = std::exp(y.log_p);
  if (v) out.V = v->value(y.y) * out.p * std::exp(-y.phi) + y.q;
  return out;
}

template <class F>
std::vector<double> per_path(long n_paths, const QuasiRunConfig& cfg, std::uint64_t seed, F&& fn) {
  if (n_paths < 2) throw Error(ErrorCode::InvalidArgument, "quasi run: n_paths must be >= 2");
  std::vector<double> out(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, resolve_threads(cfg.threads), [&](long i) {
    NoiseStream noise(seed, static_cast<std::uint64_t>(i));
    out[static_cast<std::size_t>(i)] = fn(noise);
  });
  return out;
}

void check_start(const ProblemSpec& problem, const Vec& p, const StopSpec& stop, const char* what) {
  if (!(problem.domain.psi(p) > stop.delta)) throw Error(ErrorCode::Domain, std::string(what) + ": start outside the run region");
}

}  // namespace

RepresentationReport representation_first(const ProblemSpec& problem, const Vec& x, const Vec& xi, double eps,
                                          const StopSpec& stop, long n_paths, const QuasiRunConfig& config,
                                          const Field* v_oracle, double slack) {
  if (!v_oracle) throw Error(ErrorCode::Capability, "representation_first: no value oracle supplied");
  if (problem.controls.size() != 1)
    throw Error(ErrorCode::Capability, "representation_first: the identity is checked for single-control problems only");
  check_stop_spec(stop, config);
  check_start(problem, x, stop, "representation_first");
  check_start(problem, Vec(x + eps * xi), stop, "representation_first");
  RepresentationReport rep;
  rep.lhs = v_oracle->value(Vec(x + eps * xi));
  const auto vals = per_path(n_paths, config, config.seed, [&](NoiseStream& n) {
    return run_first(problem, x, xi, eps, stop, config, n, v_oracle).V;
  });
  rep.rhs = make_estimate(vals);
  rep.abs_diff = std::abs(rep.lhs - rep.rhs.mean);
  rep.tolerance = 3.0 * rep.rhs.stderr_ + slack;
  rep.pass = rep.abs_diff <= rep.tolerance;
  return rep;
}

Estimate girsanov_normalization(const ProblemSpec& problem, const Vec& x, const Vec& xi, double eps,
                                const StopSpec& stop, long n_paths, const QuasiRunConfig& config) {
  check_stop_spec(stop, config);
  check_start(problem, x, stop, "girsanov_normalization");
  check_start(problem, Vec(x + eps * xi), stop, "girsanov_normalization");
  return make_estimate(per_path(n_paths, config, config.seed, [&](NoiseStream& n) {
    return run_first(problem, x, xi, eps, stop, config, n, nullptr).p;
  }));
}

std::vector<Estimate> coupling_first(const ProblemSpec& problem, const Vec& x, const Vec& xi,
                                     const std::vector<double>& eps_list, const StopSpec& stop, long n_paths,
                                     const QuasiRunConfig& config) {
  check_stop_spec(stop, config);
  std::vector<Estimate> out;
  for (double e : eps_list) {
    if (!(e > 0.0)) throw Error(ErrorCode::InvalidArgument, "coupling_first: eps must be positive");
    check_start(problem, x, stop, "coupling_first");
    out.push_back(make_estimate(per_path(n_paths, config, config.seed, [&](NoiseStream& n) {
      return run_first(problem, x, xi, e, stop, config, n, nullptr, false).sup_err;
    })));
  }
  return out;
}

std::vector<Estimate> coupling_second(const ProblemSpec& problem, const Vec& x, const Vec& xi, const Vec& eta0,
                                      const std::vector<double>& eps_list, const StopSpec& stop, long n_paths,
                                      const QuasiRunConfig& config) {
  check_stop_spec(stop, config);
  std::vector<Estimate> out;
  for (double e : eps_list) {
    if (!(e > 0.0)) throw Error(ErrorCode::InvalidArgument, "coupling_second: eps must be positive");
    const Vec zp0 = x + e * xi + (0.5 * e * e) * eta0;
    const Vec zm0 = x - e * xi + (0.5 * e * e) * eta0;
    check_start(problem, x, stop, "coupling_second");
    out.push_back(make_estimate(per_path(n_paths, config, config.seed, [&](NoiseStream& n) {
      GluedPath gp(problem, config.control, config.params, x, xi, eta0, config.disable_aux);
      PerturbedState zp, zm;
      zp.y = zp0;
      zm.y = zm0;
      const ControlPoint& ctrl = gp.ctrl();
      auto err = [&] { return (Vec((zp.y - 2.0 * gp.x + zm.y) / (e * e)) - gp.q.eta).norm(); };
      double sup = err();
      while (!stop_now(gp.t, gp.q.xi, stop, config.dt) && problem.domain.psi(gp.x) > stop.delta) {
        gp.prepare();
        const Vec dw = n.increments(problem.d1, config.dt);
        zp = step_perturbed_second(zp, gp.aux, ctrl, e, dw, config.dt);
        zm = step_perturbed_second(zm, gp.aux, ctrl, -e, dw, config.dt);
        gp.advance(dw, config.dt);
        sup = std::max(sup, err());
      }
      return sup;
    })));
  }
  return out;
}

std::vector<MomentEstimate> exit_moments(const ProblemSpec& problem, const Vec& x, const std::vector<int>& n_list,
                                         long n_paths, const McConfig& config) {
  const PathSamples s = run_paths(problem, -1.0, config.sim.policy, x, n_paths, config, config.seed);
  const ProblemBounds b = problem_bounds(problem);
  const double psi_x = problem.domain.psi(x);
  std::vector<MomentEstimate> out;
  for (int n : n_list) {
    if (n < 1) throw Error(ErrorCode::InvalidArgument, "exit_moments: moment order must be >= 1");
    std::vector<double> v(s.exit_time.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::pow(s.exit_time[i], n);
    MomentEstimate m;
    m.n = n;
    m.moment = make_estimate(v, 0.0);
    m.bound = std::tgamma(n + 1.0) * std::pow(b.psi_sup, n - 1) * psi_x;
    out.push_back(m);
  }
  return out;
}

NullityReport eta_tilde_nullity(const ProblemSpec& problem, const Vec& x, const Vec& xi, const StopSpec& stop,
                                long n_paths, const QuasiRunConfig& config) {
  check_stop_spec(stop, config);
  check_start(problem, x, stop, "eta_tilde_nullity");
  if (n_paths < 1) throw Error(ErrorCode::InvalidArgument, "eta_tilde_nullity: n_paths must be >= 1");
  std::vector<std::array<double, 4>> per(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, resolve_threads(config.threads), [&](long i) {
    NoiseStream noise(config.seed, static_cast<std::uint64_t>(i));
    GluedPath gp(problem, config.control, config.params, x, xi, Vec::Zero(problem.d), config.disable_aux);
    std::array<double, 4> m{0.0, 0.0, 0.0, 0.0};
    while (!stop_now(gp.t, gp.q.xi, stop, config.dt) && problem.domain.psi(gp.x) > stop.delta) {
      gp.prepare();
      gp.advance(noise.increments(problem.d1, config.dt), config.dt);
      m[0] = std::max(m[0], std::abs(gp.q.eta_tilde));
      m[1] = std::max(m[1], std::abs(gp.q.eta_d2));
      m[2] = std::max(m[2], std::abs(gp.q.eta_tilde_ito));
      m[3] += 1.0;
    }
    per[static_cast<std::size_t>(i)] = m;
  });
  NullityReport r;
  r.n_paths = n_paths;
  for (const auto& m : per) {
    r.max_eta_tilde = std::max(r.max_eta_tilde, m[0]);
    r.max_eta_d2 = std::max(r.max_eta_d2, m[1]);
    r.max_eta_tilde_ito = std::max(r.max_eta_tilde_ito, m[2]);
    r.total_steps += static_cast<long>(m[3]);
  }
  return r;
}

BarrierRunReport barrier_run(const ProblemSpec& problem, int control, const BarrierParams& params, const Vec& x0,
                             const Vec& xi0, long n_paths, const BarrierRunConfig& config) {
  if (control < 0 || control >= static_cast<int>(problem.controls.size()))
    throw Error(ErrorCode::InvalidArgument, "barrier_run: control index out of range");
  const Geometry g0 = problem.domain.eval(x0);
  if (!(g0.psi > params.delta)) throw Error(ErrorCode::Domain, "barrier_run: start outside D_delta");
  BarrierRunReport rep;
  rep.x0 = x0;
  rep.xi0 = xi0;
  rep.psi0 = g0.psi;
  SwitchAutomaton probe;
  update_regime(probe, g0.psi, params, 0.0);
  rep.regime = probe.regime;
  const Barrier active = rep.regime == Regime::Boundary ? Barrier::B1 : Barrier::B2;
  auto bval = [&](const Geometry& g, const Vec& xi) {
    return active == Barrier::B1 ? barrier_B1(g, xi, params) : barrier_B2(g, xi, params);
  };
  rep.b_start = bval(g0, xi0);
  rep.upper_start = barrier_envelopes(g0, xi0, params).upper;
  const double sig = problem.controls[static_cast<std::size_t>(control)].sigma.norm();
  const double speed = g0.grad.norm() * sig;
  const double curv = 0.5 * sig * sig * g0.hess.norm();
  // Both the diffusive and the curvature change of psi over one step stay below psi0 scale.
  rep.dt = config.dt_factor * std::min(speed > 0.0 ? std::pow(g0.psi / speed, 2) : HUGE_VAL,
                                       curv > 0.0 ? g0.psi / curv : HUGE_VAL);
  if (!(rep.dt > 0.0) || !std::isfinite(rep.dt)) throw Error(ErrorCode::Numeric, "barrier_run: degenerate local time step");
  const double floor = 0.5 * g0.psi;
  std::vector<double> b(static_cast<std::size_t>(n_paths)), lo(b.size()), s2(b.size());
  if (n_paths < 2) throw Error(ErrorCode::InvalidArgument, "barrier_run: n_paths must be >= 2");
  parallel_for(n_paths, resolve_threads(config.threads), [&](long i) {
    NoiseStream noise(config.seed, static_cast<std::uint64_t>(i));
    GluedPath gp(problem, control, params, x0, xi0, Vec::Zero(problem.d));
    double sup2 = xi0.squaredNorm();
    gp.prepare();
    for (long k = 0; k < config.max_steps; ++k) {
      gp.advance(noise.increments(problem.d1, rep.dt), rep.dt);
      sup2 = std::max(sup2, gp.q.xi.squaredNorm());
      if (problem.domain.psi(gp.x) <= floor) break;
      gp.prepare();
      if (gp.automaton.regime != rep.regime) break;
    }
    const Geometry g = problem.domain.eval(gp.x);
    const auto u = static_cast<std::size_t>(i);
    b[u] = bval(g, gp.q.xi);
    lo[u] = barrier_envelopes(g, gp.q.xi, params).lower;
    s2[u] = sup2;
  });
  rep.b_stop = make_estimate(b);
  rep.lower_stop = make_estimate(lo);
  rep.sup_xi2 = make_estimate(s2);
  return rep;
}

void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  os << "experiment,x,xi,eps,mean,stderr,bias_bound,n_paths,seed\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  auto vec = [&](const Vec& v) {
    std::string s;
    for (int i = 0; i < v.size(); ++i) s += (i ? ";" : "") + num(v(i));
    return s;
  };
  for (const auto& r : rows)
    os << r.experiment << ',' << vec(r.x) << ',' << vec(r.xi) << ',' << num(r.eps) << ',' << num(r.estimate.mean) << ','
       << num(r.estimate.stderr_) << ',' << num(r.estimate.bias_bound) << ',' << r.estimate.n_paths << ',' << r.seed
       << '\n';
}

}  // namespace bql
