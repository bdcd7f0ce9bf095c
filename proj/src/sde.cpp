#include "bql/sde.hpp"

#include <cmath>
#include <ostream>

namespace bql {

namespace {

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t path, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32), stream};
  return std::mt19937_64(seq);
}

}  // namespace

NoiseStream::NoiseStream(std::uint64_t seed, std::uint64_t path_index)
    : seed_(seed),
      path_index_(path_index),
      main_(make_engine(seed, path_index, 1)),
      aux_(make_engine(seed, path_index, 2)),
      unif_(make_engine(seed, path_index, 3)) {}

Vec NoiseStream::increments(int n, double dt) {
  const double s = std::sqrt(dt);
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = s * n_main_(main_);
  return v;
}

Vec NoiseStream::aux_increments(int n, double dt) {
  const double s = std::sqrt(dt);
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = s * n_aux_(aux_);
  return v;
}

double NoiseStream::uniform() { return u01_(unif_); }

int FeedbackTable::lookup(const Vec& x) const {
  long flat = 0, stride = 1;
  for (std::size_t k = 0; k < n.size(); ++k) {
    long i = std::lround((x(static_cast<int>(k)) - lo(static_cast<int>(k))) / h);
    i = std::clamp<long>(i, 0, n[k] - 1);
    flat += i * stride;
    stride *= n[k];
  }
  return index[static_cast<std::size_t>(flat)];
}

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "SimConfig: dt must be positive");
  if (!(dt <= t_max)) throw Error(ErrorCode::InvalidArgument, "SimConfig: dt must not exceed t_max");
  if (boundary_bisection_iters < 0) throw Error(ErrorCode::InvalidArgument, "SimConfig: bisection iterations must be >= 0");
}

Vec step_base(const Vec& x, const ControlPoint& control, const Vec& dw, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "step_base: dt must be positive");
  if (x.size() != control.sigma.rows() || dw.size() != control.sigma.cols())
    throw Error(ErrorCode::InvalidArgument, "step_base: dimension mismatch");
  const Vec noise = matvec(control.sigma, dw);
  Vec out(x.size());
  for (int i = 0; i < x.size(); ++i) out(i) = x(i) + noise(i) + control.b(i) * dt;
  return out;
}

double time_change_factor(double r, double r_hat, double eps, Order order) {
  const double arg = order == Order::First ? 2.0 * M_PI * eps * r : M_PI * (2.0 * eps * r + eps * eps * r_hat);
  return 1.0 + std::atan(arg) / M_PI;
}

AuxProcesses AuxProcesses::zero(int d, int d1, Regime regime) {
  AuxProcesses a;
  a.pi = Vec::Zero(d1);
  a.pi_hat = Vec::Zero(d1);
  a.P = Mat::Zero(d, d);
  a.P_hat = Mat::Zero(d, d);
  a.regime = regime;
  return a;
}

namespace {

PerturbedState advance(const PerturbedState& s, const ControlPoint& control, double theta, const Mat& rot,
                       const Vec& shift, const Vec& dw, double dt) {
  const double st = std::sqrt(theta);
  const Mat rs = matmul(rot, control.sigma);
  const Mat m = st * rs;
  const Vec noise = matvec(m, dw);
  const Vec corr = matvec(rs, shift);
  PerturbedState out;
  out.y = Vec(s.y.size());
  for (int i = 0; i < s.y.size(); ++i) {
    const double drift = theta * control.b(i) - st * corr(i);
    out.y(i) = s.y(i) + noise(i) + drift * dt;
  }
  out.log_p = s.log_p + (dot(shift, dw) - 0.5 * dot(shift, shift) * dt);
  const double disc = std::exp(-s.phi);
  out.q = s.q + theta * control.f.value(s.y) * std::exp(s.log_p) * disc * dt;
  out.phi = s.phi + theta * control.c * dt;
  return out;
}

}  // namespace

PerturbedState step_perturbed_first(const PerturbedState& s, const AuxProcesses& aux, const ControlPoint& control,
                                    double eps, const Vec& dw, double dt) {
  if (!aux.pi.allFinite() || !aux.P.allFinite() || !std::isfinite(aux.r))
    throw Error(ErrorCode::Numeric, "step_perturbed_first: non-finite auxiliary process");
  const double theta = time_change_factor(aux.r, aux.r_hat, eps, Order::First);
  const Mat rot = expm_skew(Mat(eps * aux.P));
  return advance(s, control, theta, rot, Vec(eps * aux.pi), dw, dt);
}

PerturbedState step_perturbed_second(const PerturbedState& s, const AuxProcesses& aux, const ControlPoint& control,
                                     double eps, const Vec& dw, double dt) {
  if (!aux.pi.allFinite() || !aux.pi_hat.allFinite() || !aux.P.allFinite() || !std::isfinite(aux.r) ||
      !std::isfinite(aux.r_hat))
    throw Error(ErrorCode::Numeric, "step_perturbed_second: non-finite auxiliary process");
  const double theta = time_change_factor(aux.r, aux.r_hat, eps, Order::Second);
  const Mat rot = matmul(expm_skew(Mat(eps * aux.P)), expm_skew(Mat(0.5 * eps * eps * aux.P_hat)));
  const Vec shift = eps * aux.pi + (0.5 * eps * eps) * aux.pi_hat;
  return advance(s, control, theta, rot, shift, dw, dt);
}

namespace {

// Returns the fraction s in (0, 1] of the segment where psi first reaches level.
double bisect_fraction(const DomainFn& domain, const Vec& a, const Vec& b, double level, int iters) {
  double lo = 0.0, hi = 1.0;
  for (int k = 0; k < iters; ++k) {
    const double mid = 0.5 * (lo + hi);
    const double v = domain.psi(a + mid * (b - a)) - level;
    if (v > 0.0)
      lo = mid;
    else
      hi = mid;
    if (std::abs(domain.psi(a + hi * (b - a)) - level) <= 1e-10) break;
  }
  return hi;
}

Vec project_to_level(const DomainFn& domain, Vec y, double level) {
  for (int k = 0; k < 30; ++k) {
    const Geometry g = domain.eval(y);
    const double gap = g.psi - level;
    if (std::abs(gap) <= 1e-12) break;
    const double n2 = g.grad.squaredNorm();
    if (!(n2 > 0.0)) break;
    y = y - (gap / n2) * g.grad;
  }
  return y;
}

}  // namespace

std::optional<Vec> detect_exit(const DomainFn& domain, const Vec& x_prev, const Vec& x_next, double level, int iters) {
  if (iters < 0) throw Error(ErrorCode::InvalidArgument, "detect_exit: iters must be >= 0");
  if (!(domain.psi(x_prev) > level)) throw Error(ErrorCode::InvalidArgument, "detect_exit: previous point already outside");
  if (domain.psi(x_next) > level) return std::nullopt;
  const double s = bisect_fraction(domain, x_prev, x_next, level, iters);
  return Vec(x_prev + s * (x_next - x_prev));
}

namespace {

PathRecord simulate_impl(const ProblemSpec& problem, double eps, bool regularized, const SimConfig& config,
                         const Vec& x0, NoiseStream& noise) {
  config.validate();
  if (x0.size() != problem.d) throw Error(ErrorCode::InvalidArgument, "simulate: x0 dimension mismatch");
  if (!(problem.domain.psi(x0) > 0.0)) throw Error(ErrorCode::Domain, "simulate: x0 outside D");
  if (regularized && problem.d1 + problem.d > kMaxNoise + kMaxDim)
    throw Error(ErrorCode::InvalidArgument, "simulate_regularized: noise dimension too large");
  const double dt = config.dt;
  PathRecord rec;
  Vec x = x0;
  double t = 0.0, phi = 0.0, running = 0.0;
  if (config.trace) rec.trace.push_back({0.0, problem.domain.psi(x), 0.0, 0.0, x});
  while (true) {
    if (t >= config.t_max - 1e-12 * dt) {
      rec.truncated = true;
      rec.exit_point = x;
      rec.exit_time = t;
      rec.discount = phi;
      rec.running = running;
      rec.payoff = running;
      return rec;
    }
    const ControlPoint& ctrl = problem.controls[static_cast<std::size_t>(config.policy.control_at(x))];
    const double disc = std::exp(-phi);
    const double fval = ctrl.f.value(x);
    const Vec dw = noise.increments(problem.d1, dt);
    Vec incr = matvec(ctrl.sigma, dw);
    if (regularized) {
      const Vec dwa = noise.aux_increments(problem.d, dt);
      for (int i = 0; i < problem.d; ++i) incr(i) += eps * dwa(i);
    }
    Vec xn(problem.d);
    for (int i = 0; i < problem.d; ++i) xn(i) = x(i) + incr(i) + ctrl.b(i) * dt;
    const double psi_n = problem.domain.psi(xn);
    bool exited = false;
    double frac = 1.0;
    Vec exit_point;
    if (psi_n <= 0.0) {
      exited = true;
      frac = bisect_fraction(problem.domain, x, xn, 0.0, config.boundary_bisection_iters);
      exit_point = x + frac * (xn - x);
    } else if (config.exit_mode == ExitMode::Bridge) {
      const Geometry g = problem.domain.eval(x);
      double s2 = matvec(Mat(ctrl.sigma.transpose()), g.grad).squaredNorm();
      if (regularized) s2 += eps * eps * g.grad.squaredNorm();
      const double u = noise.uniform();
      if (s2 > 0.0 && u < std::exp(-2.0 * g.psi * psi_n / (s2 * dt))) {
        exited = true;
        exit_point = project_to_level(problem.domain, xn, 0.0);
      }
    }
    running += fval * disc * dt * frac;
    phi += ctrl.c * dt * frac;
    t += dt * frac;
    x = exited ? exit_point : xn;
    ++rec.steps;
    if (config.trace) rec.trace.push_back({t, problem.domain.psi(x), phi, 0.0, x});
    if (exited) {
      rec.exit_point = x;
      rec.exit_time = t;
      rec.discount = phi;
      rec.running = running;
      rec.payoff = problem.g.value(x) * std::exp(-phi) + running;
      return rec;
    }
  }
}

}  // namespace

PathRecord simulate_path(const ProblemSpec& problem, const SimConfig& config, const Vec& x0, NoiseStream& noise) {
  return simulate_impl(problem, 0.0, false, config, x0, noise);
}

PathRecord simulate_regularized(const ProblemSpec& problem, double eps, const SimConfig& config, const Vec& x0,
                                NoiseStream& noise) {
  if (!(eps >= 0.0)) throw Error(ErrorCode::InvalidArgument, "simulate_regularized: eps must be >= 0");
  return simulate_impl(problem, eps, true, config, x0, noise);
}

void write_trace_csv(std::ostream& os, const PathRecord& rec, int d) {
  os << "t";
  for (int i = 1; i <= d; ++i) os << ",x" << i;
  os << ",psi,phi,logp\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf;
  };
  for (const auto& p : rec.trace) {
    put(p.t);
    for (int i = 0; i < d; ++i) {
      os << ',';
      put(p.x(i));
    }
    os << ',';
    put(p.psi);
    os << ',';
    put(p.phi);
    os << ',';
    put(p.logp);
    os << '\n';
  }
}

}  // namespace bql
