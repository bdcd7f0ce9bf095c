#include "bql/quasi.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>

namespace bql {

BarrierParams BarrierParams::make(double lambda, double theta, double k1, double delta, double kappa) {
  BarrierParams p;
  p.lambda = lambda;
  p.theta = theta;
  p.k1 = k1;
  p.delta = delta > 0.0 ? delta : lambda * lambda / 16.0;
  p.nu = nu_of(theta);
  p.kappa = kappa;
  p.validate();
  return p;
}

void BarrierParams::validate() const {
  if (!(0.0 < delta && delta < lambda * lambda && lambda < 1.0))
    throw Error(ErrorCode::InvalidArgument, "BarrierParams: require 0 < delta < lambda^2 < lambda < 1");
  if (!(theta > 0.0 && theta < 1.0 / 3.0)) throw Error(ErrorCode::InvalidArgument, "BarrierParams: theta must be in (0, 1/3)");
  if (!(k1 >= 1.0)) throw Error(ErrorCode::InvalidArgument, "BarrierParams: k1 must be >= 1");
  if (!(nu > 0.0) || std::abs(nu - nu_of(theta)) > 1e-15 * nu)
    throw Error(ErrorCode::InvalidArgument, "BarrierParams: nu does not match its formula");
}

QuasiState QuasiState::start(const Vec& xi, const Vec& eta) {
  QuasiState s;
  s.xi = xi;
  s.eta = eta;
  return s;
}

namespace {

double beta_of(double psi, double lambda) { return 1.0 + psi / (8.0 * lambda) * (1.0 - psi / (4.0 * lambda)); }
double gamma_of(double psi, double lambda) { return lambda * lambda + psi * (1.0 - psi / (4.0 * lambda)); }

Vec column(const Mat& m, int k) { return Vec(m.col(k)); }

}  // namespace

AuxProcesses aux_boundary(const Geometry& geom, const ControlPoint& control, const Vec& xi, double xi_tilde,
                          const BarrierParams& params) {
  const int d = static_cast<int>(xi.size());
  const int d1 = static_cast<int>(control.sigma.cols());
  if (!(geom.psi > 0.0)) throw Error(ErrorCode::Domain, "aux_boundary: psi must be positive");
  const double n2 = geom.grad.squaredNorm();
  if (!(n2 > 0.0)) throw Error(ErrorCode::Numeric, "aux_boundary: |grad psi| = 0, rotation undefined");
  const double psi = geom.psi, lam = params.lambda;
  const Vec hxi = matvec(geom.hess, xi);
  const double psi_xi = dot(geom.grad, xi);
  AuxProcesses a = AuxProcesses::zero(d, d1, Regime::Boundary);
  const double rho = -dot(geom.grad, hxi) / n2;
  a.r = rho + psi_xi / psi;
  a.r_hat = (psi_xi / psi) * (psi_xi / psi);
  const double beta = beta_of(psi, lam), gam = gamma_of(psi, lam);
  const double pref = (1.0 / (2.0 * gam)) * (1.0 - psi / (2.0 * lam));
  for (int k = 0; k < d1; ++k) {
    const Vec sk = column(control.sigma, k);
    a.pi(k) = pref * (psi_xi / psi * dot(geom.grad, sk) + beta * dot(xi, sk));
  }
  for (int j = 0; j < d; ++j)
    for (int k = j + 1; k < d; ++k) {
      const double v = (hxi(j) * geom.grad(k) - hxi(k) * geom.grad(j)) / n2;
      a.P(j, k) = v;
      a.P(k, j) = -v;
    }
  a.pi_hat = (-2.0 * xi_tilde) * a.pi;
  return a;
}

AuxProcesses aux_interior(const Geometry& geom, const ControlPoint& control, const Vec& xi, double xi_tilde,
                          const BarrierParams& params) {
  const int d = static_cast<int>(xi.size());
  const int d1 = static_cast<int>(control.sigma.cols());
  if (!(geom.psi > 0.0)) throw Error(ErrorCode::Domain, "aux_interior: psi must be positive");
  const double psi = geom.psi;
  const double psi_xi = dot(geom.grad, xi);
  AuxProcesses a = AuxProcesses::zero(d, d1, Regime::Interior);
  a.r = params.theta * psi_xi / psi;
  const double pref = params.nu / (psi * psi);
  for (int k = 0; k < d1; ++k) {
    const Vec sk = column(control.sigma, k);
    a.pi(k) = pref * (params.k1 * psi * dot(xi, sk) + psi_xi * dot(geom.grad, sk));
  }
  a.pi_hat = (-2.0 * xi_tilde) * a.pi;
  return a;
}

double pproperty_residual(const Geometry& geom, const ControlPoint& control, const Vec& xi, const AuxProcesses& aux,
                          int k) {
  const Vec sk = column(control.sigma, k);
  const double rho = -dot(geom.grad, matvec(geom.hess, xi)) / geom.grad.squaredNorm();
  return dot(sk, matvec(geom.hess, xi)) + rho * dot(geom.grad, sk) + dot(geom.grad, matvec(aux.P, sk));
}

QuasiState step_quasi(const QuasiState& s, const AuxProcesses& aux, const ControlPoint& control, const Vec& x,
                      double phi, const Vec& dw, double dt) {
  const Mat& sg = control.sigma;
  const int d = static_cast<int>(s.xi.size());
  const Mat psg = matmul(aux.P, sg);
  const Mat a1 = aux.r * sg + psg;  // r sigma + P sigma
  const Mat p2 = matmul(aux.P, aux.P);
  const Mat a2 = (aux.r_hat - aux.r * aux.r) * sg + matmul(Mat(aux.P_hat + 2.0 * aux.r * aux.P + p2), sg);
  const Vec spi = matvec(sg, aux.pi);
  const Vec spih = matvec(sg, aux.pi_hat);
  const Vec a1pi = matvec(a1, aux.pi);
  const Vec n1 = matvec(a1, dw), n2 = matvec(a2, dw);
  QuasiState o = s;
  for (int i = 0; i < d; ++i) {
    o.xi(i) = s.xi(i) + n1(i) + (2.0 * aux.r * control.b(i) - spi(i)) * dt;
    o.eta(i) = s.eta(i) + n2(i) + (2.0 * aux.r_hat * control.b(i) - spih(i) - 2.0 * a1pi(i)) * dt;
  }
  const double pidw = dot(aux.pi, dw);
  o.xi_tilde = s.xi_tilde + pidw;
  o.eta_tilde = s.eta_tilde + dot(Vec(aux.pi_hat + (2.0 * s.xi_tilde) * aux.pi), dw);
  o.eta_tilde_ito = s.eta_tilde_ito + dot(aux.pi_hat, dw) + (o.xi_tilde * o.xi_tilde - s.xi_tilde * s.xi_tilde) -
                    dot(aux.pi, aux.pi) * dt;
  const double disc = std::exp(-phi);
  const double f = control.f.value(x);
  const double f_xi = control.f.directional(x, s.xi);
  const double f_xixi = control.f.second_directional(x, s.xi);
  const double f_eta = control.f.directional(x, s.eta);
  o.xi_d1 = s.xi_d1 + 2.0 * aux.r * control.c * dt;
  o.xi_d2 = s.xi_d2 + pidw;
  o.xi_d3 = s.xi_d3 + disc * (f_xi + (2.0 * aux.r - s.xi_d1 + s.xi_d2) * f) * dt;
  o.eta_d1 = s.eta_d1 + 2.0 * aux.r_hat * control.c * dt;
  o.eta_d2 = s.eta_d2 + dot(Vec(aux.pi_hat + (2.0 * s.xi_d2) * aux.pi), dw);
  const double x1 = s.xi_d1, x2 = s.xi_d2;
  const double bracket_f = 2.0 * aux.r_hat - 4.0 * aux.r * (x1 - x2) + x1 * x1 - s.eta_d1 - 2.0 * x1 * x2 + s.eta_d2;
  o.eta_d3 = s.eta_d3 + disc * (f_xixi + f_eta + 2.0 * (2.0 * aux.r - x1 + x2) * f_xi + bracket_f * f) * dt;
  return o;
}

void update_regime(SwitchAutomaton& automaton, double psi, const BarrierParams& params, double t) {
  const double l2 = params.lambda * params.lambda;
  if (automaton.regime == Regime::Interior && psi <= l2) {
    automaton.regime = Regime::Boundary;
    automaton.switch_times.push_back(t);
  } else if (automaton.regime == Regime::Boundary && psi >= params.lambda) {
    automaton.regime = Regime::Interior;
    automaton.switch_times.push_back(t);
  }
}

double barrier_B1(const Geometry& geom, const Vec& xi, const BarrierParams& params) {
  if (!(geom.psi > 0.0)) throw Error(ErrorCode::Domain, "barrier_B1: psi must be positive");
  const double psi = geom.psi, lam = params.lambda;
  const double pxi = dot(geom.grad, xi);
  return gamma_of(psi, lam) * (beta_of(psi, lam) * xi.squaredNorm() + pxi * pxi / psi);
}

double barrier_B2(const Geometry& geom, const Vec& xi, const BarrierParams& params) {
  if (!(geom.psi > 0.0)) throw Error(ErrorCode::Domain, "barrier_B2: psi must be positive");
  const double psi = geom.psi;
  const double pxi = dot(geom.grad, xi);
  return std::pow(params.lambda, 3.0 * params.theta) * std::pow(psi, 1.0 - 2.0 * params.theta) *
         (params.k1 * xi.squaredNorm() + pxi * pxi / psi);
}

Envelopes barrier_envelopes(const Geometry& geom, const Vec& xi, const BarrierParams& params) {
  const double psi = geom.psi, lam = params.lambda, l2 = lam * lam;
  if (!(psi > params.delta)) throw Error(ErrorCode::Domain, "barrier_envelopes: point outside D_delta");
  Envelopes e;
  const bool in_b1 = psi < lam;
  const bool in_b2 = psi >= l2;
  const double b1 = barrier_B1(geom, xi, params);
  const double b2 = in_b2 ? barrier_B2(geom, xi, params) : 0.0;
  e.upper = (in_b1 ? b1 : 0.0) + (in_b2 ? b2 : 0.0);
  if (psi < l2)
    e.lower = b1;
  else if (psi <= lam)
    e.lower = std::min(b1, b2);
  else
    e.lower = b2;
  return e;
}

namespace {

// Value, first and second derivative of a function along a line.
struct Jet {
  double v = 0.0, d1 = 0.0, d2 = 0.0;
};
Jet operator+(Jet a, Jet b) { return {a.v + b.v, a.d1 + b.d1, a.d2 + b.d2}; }
Jet operator*(Jet a, Jet b) { return {a.v * b.v, a.d1 * b.v + a.v * b.d1, a.d2 * b.v + 2.0 * a.d1 * b.d1 + a.v * b.d2}; }
Jet operator*(double s, Jet a) { return {s * a.v, s * a.d1, s * a.d2}; }
Jet operator+(double s, Jet a) { return {s + a.v, a.d1, a.d2}; }
Jet inv(Jet b) {
  const double i = 1.0 / b.v;
  return {i, -b.d1 * i * i, 2.0 * b.d1 * b.d1 * i * i * i - b.d2 * i * i};
}
Jet operator/(Jet a, Jet b) { return a * inv(b); }
Jet powj(Jet b, double p) {
  const double bp = std::pow(b.v, p);
  return {bp, p * bp / b.v * b.d1, p * (p - 1.0) * bp / (b.v * b.v) * b.d1 * b.d1 + p * bp / b.v * b.d2};
}

struct LineInputs {
  Jet psi, psi_xi, xi2;
};

LineInputs line_inputs(const DomainFn& domain, const Geometry& g, const Vec& xi, const Vec& u, const Vec& w) {
  LineInputs in;
  const Vec hu = matvec(g.hess, u);
  in.psi = {g.psi, dot(g.grad, u), dot(u, hu)};
  const Mat t = domain.third(g.x, u);
  in.psi_xi = {dot(g.grad, xi), dot(hu, xi) + dot(g.grad, w), dot(u, matvec(t, xi)) + 2.0 * dot(hu, w)};
  in.xi2 = {xi.squaredNorm(), 2.0 * dot(xi, w), 2.0 * w.squaredNorm()};
  return in;
}

Jet barrier_jet(const LineInputs& in, const BarrierParams& p, Barrier barrier) {
  const Jet q = in.psi_xi * in.psi_xi / in.psi;
  if (barrier == Barrier::B1) {
    const double lam = p.lambda;
    const Jet one_minus = 1.0 + (-1.0 / (4.0 * lam)) * in.psi;
    const Jet beta = 1.0 + (1.0 / (8.0 * lam)) * (in.psi * one_minus);
    const Jet gam = (lam * lam) + in.psi * one_minus;
    return gam * (beta * in.xi2 + q);
  }
  const double c = std::pow(p.lambda, 3.0 * p.theta);
  return c * (powj(in.psi, 1.0 - 2.0 * p.theta) * (p.k1 * in.xi2 + q));
}

}  // namespace

DriftEval generator_drift_eval(const ControlPoint& control, const DomainFn& domain, const Geometry& geom,
                               const Vec& xi, double xi_tilde, Regime regime, const BarrierParams& params,
                               Barrier barrier, double kappa) {
  if ((regime == Regime::Boundary) != (barrier == Barrier::B1))
    throw Error(ErrorCode::InvalidArgument, "generator_drift: regime does not match barrier");
  DriftEval out;
  out.aux = regime == Regime::Boundary ? aux_boundary(geom, control, xi, xi_tilde, params)
                                       : aux_interior(geom, control, xi, xi_tilde, params);
  const auto& a = out.aux;
  const Mat& sg = control.sigma;
  const int d1 = static_cast<int>(sg.cols());
  // Joint drift (b, 2 r b - sigma pi).
  const Vec mu_xi = 2.0 * a.r * control.b - matvec(sg, a.pi);
  const Jet jd = barrier_jet(line_inputs(domain, geom, xi, control.b, mu_xi), params, barrier);
  const double bval = jd.v;
  double first = jd.d1, second = 0.0, sq_grad = 0.0;
  double scale = std::abs(jd.d1);
  const Mat psg = matmul(a.P, sg);
  for (int k = 0; k < d1; ++k) {
    const Vec u = Vec(sg.col(k));
    const Vec w = a.r * u + Vec(psg.col(k));
    const Jet jk = barrier_jet(line_inputs(domain, geom, xi, u, w), params, barrier);
    second += 0.5 * jk.d2;
    scale += 0.5 * std::abs(jk.d2);
    sq_grad += jk.d1 * jk.d1;
  }
  const double gen1 = first + second;
  if (kappa == 1.0) {
    out.drift = gen1;
    out.scale = scale;
  } else {
    if (!(bval > 0.0)) {
      out.drift = 0.0;
      out.scale = 0.0;
    } else {
      const double f = kappa * std::pow(bval, kappa - 1.0);
      const double extra = 0.5 * (kappa - 1.0) / bval * sq_grad;
      out.drift = f * (gen1 + extra);
      out.scale = f * (scale + std::abs(extra));
    }
  }
  if (!std::isfinite(out.drift)) throw Error(ErrorCode::Numeric, "generator_drift: non-finite derivative");
  return out;
}

double generator_drift(const ProblemSpec&, const ControlPoint& control, const DomainFn& domain, const Vec& x,
                       const Vec& xi, double xi_tilde, Regime regime, const BarrierParams& params, Barrier barrier,
                       double kappa) {
  return generator_drift_eval(control, domain, domain.eval(x), xi, xi_tilde, regime, params, barrier, kappa).drift;
}

double generator_drift_fd(const ControlPoint& control, const DomainFn& domain, const Vec& x, const Vec& xi,
                          Regime regime, const BarrierParams& params, Barrier barrier, double kappa, double h) {
  const Geometry g0 = domain.eval(x);
  const AuxProcesses a = regime == Regime::Boundary ? aux_boundary(g0, control, xi, 0.0, params)
                                                    : aux_interior(g0, control, xi, 0.0, params);
  auto bk = [&](const Vec& y, const Vec& z) {
    const Geometry g = domain.eval(y);
    const double b = barrier == Barrier::B1 ? barrier_B1(g, z, params) : barrier_B2(g, z, params);
    return std::pow(b, kappa);
  };
  const double b0 = bk(x, xi);
  auto dir2 = [&](const Vec& u, const Vec& w) {
    return (bk(Vec(x + h * u), Vec(xi + h * w)) - 2.0 * b0 + bk(Vec(x - h * u), Vec(xi - h * w))) / (h * h);
  };
  auto dir1 = [&](const Vec& u, const Vec& w) {
    return (bk(Vec(x + h * u), Vec(xi + h * w)) - bk(Vec(x - h * u), Vec(xi - h * w))) / (2 * h);
  };
  const Mat& sg = control.sigma;
  double out = dir1(control.b, Vec(2.0 * a.r * control.b - matvec(sg, a.pi)));
  const Mat psg = matmul(a.P, sg);
  for (int k = 0; k < sg.cols(); ++k) {
    const Vec u = Vec(sg.col(k));
    out += 0.5 * dir2(u, Vec(a.r * u + Vec(psg.col(k))));
  }
  return out;
}

Vec random_unit_vector(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n01;
  Vec v(d);
  do {
    for (int i = 0; i < d; ++i) v(i) = n01(rng);
  } while (v.norm() < 1e-12);
  return v / v.norm();
}

Geometry sample_level_point(const DomainFn& domain, double level, const Vec& direction) {
  const Vec a = domain.anchor();
  if (!(domain.psi(a) > level)) throw Error(ErrorCode::Domain, "sample_level_point: level above the anchor value");
  double lo = 0.0, hi = 2.0 * domain.diameter() + 1.0;
  if (domain.psi(a + hi * direction) > level) throw Error(ErrorCode::Domain, "sample_level_point: ray misses the level set");
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (domain.psi(a + mid * direction) > level)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 4e-17 * hi) break;
  }
  Geometry g = domain.eval(Vec(a + lo * direction));
  g.psi = level;
  return g;
}

namespace {

// Unit vectors orthogonal and parallel to n (the extreme directions of
// a|xi|^2 + b (n.xi)^2).
std::vector<Vec> principal_directions(const Vec& n) {
  std::vector<Vec> out;
  const int d = static_cast<int>(n.size());
  const double nn = n.norm();
  if (!(nn > 0.0)) return out;
  out.push_back(n / nn);
  if (d >= 2) {
    Vec t = Vec::Zero(d);
    int j = 0;
    for (int i = 1; i < d; ++i)
      if (std::abs(n(i)) < std::abs(n(j))) j = i;
    t(j) = 1.0;
    t -= dot(t, n) / (nn * nn) * n;
    out.push_back(t / t.norm());
  }
  return out;
}

}  // namespace

SwitchingReport switching_check(const DomainFn& domain, const BarrierParams& params, int n_samples, std::uint64_t seed) {
  if (n_samples <= 0) throw Error(ErrorCode::InvalidArgument, "switching_check: n_samples must be positive");
  std::mt19937_64 rng(seed);
  SwitchingReport rep;
  rep.n_samples = n_samples;
  rep.min_b1_minus_4b2 = std::numeric_limits<double>::infinity();
  rep.min_b2_minus_4b1 = std::numeric_limits<double>::infinity();
  const double lam = params.lambda;
  long attempts = 0;
  for (int k = 0; k < n_samples; ++k) {
    for (int which = 0; which < 2; ++which) {
      Geometry g;
      while (true) {
        if (++attempts > 100L * n_samples * 2)
          throw Error(ErrorCode::Domain, "switching_check: level-set sampling failed");
        try {
          g = sample_level_point(domain, which == 0 ? lam : lam * lam, random_unit_vector(rng, domain.dim()));
          break;
        } catch (const Error&) {
        }
      }
      std::vector<Vec> xis = principal_directions(g.grad);
      xis.push_back(random_unit_vector(rng, domain.dim()));
      for (const Vec& xi : xis) {
        const double b1 = barrier_B1(g, xi, params), b2 = barrier_B2(g, xi, params);
        if (which == 0)
          rep.min_b1_minus_4b2 = std::min(rep.min_b1_minus_4b2, b1 - 4.0 * b2);
        else
          rep.min_b2_minus_4b1 = std::min(rep.min_b2_minus_4b1, b2 - 4.0 * b1);
      }
    }
  }
  rep.pass = rep.min_b1_minus_4b2 >= 0.0 && rep.min_b2_minus_4b1 >= 0.0;
  return rep;
}

Vec worst_drift_direction(const ControlPoint& control, const DomainFn& domain, const Geometry& geom, Regime regime,
                          const BarrierParams& params, Barrier barrier) {
  const int d = domain.dim();
  auto q = [&](const Vec& xi) {
    return generator_drift_eval(control, domain, geom, xi, 0.0, regime, params, barrier, 1.0).drift;
  };
  Eigen::MatrixXd a(d, d);
  std::vector<double> diag(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    Vec e = Vec::Zero(d);
    e(i) = 1.0;
    diag[static_cast<std::size_t>(i)] = q(e);
    a(i, i) = diag[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      Vec e = Vec::Zero(d);
      e(i) = 1.0;
      e(j) = 1.0;
      a(i, j) = a(j, i) = 0.5 * (q(e) - diag[static_cast<std::size_t>(i)] - diag[static_cast<std::size_t>(j)]);
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd top = es.eigenvectors().col(d - 1);
  Vec out(d);
  for (int i = 0; i < d; ++i) out(i) = top(i);
  return out;
}

DriftCertificate drift_certificate(const ProblemSpec& problem, const BarrierParams& params, Barrier barrier,
                                   double kappa, double psi_lo, double psi_hi, int n_samples, std::uint64_t seed,
                                   double tol) {
  if (n_samples <= 0) throw Error(ErrorCode::InvalidArgument, "drift_certificate: n_samples must be positive");
  if (!(0.0 < psi_lo && psi_lo < psi_hi)) throw Error(ErrorCode::InvalidArgument, "drift_certificate: need 0 < psi_lo < psi_hi");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  DriftCertificate cert;
  const Regime regime = barrier == Barrier::B1 ? Regime::Boundary : Regime::Interior;
  const double llo = std::log(psi_lo), lhi = std::log(psi_hi);
  for (int k = 0; k < n_samples; ++k) {
    const double level = std::exp(llo + u01(rng) * (lhi - llo));
    const Geometry g = sample_level_point(problem.domain, level, random_unit_vector(rng, problem.d));
    const Vec xi_rand = random_unit_vector(rng, problem.d);
    for (const auto& c : problem.controls) {
      const Vec xi_worst = worst_drift_direction(c, problem.domain, g, regime, params, barrier);
      for (const Vec* xi : {&xi_rand, &xi_worst}) {
        const DriftEval e = generator_drift_eval(c, problem.domain, g, *xi, 0.0, regime, params, barrier, kappa);
        ++cert.n_evaluations;
        const double normalized = e.scale > 0.0 ? e.drift / e.scale : (e.drift > 0.0 ? 1.0 : 0.0);
        if (normalized > cert.normalized_max) {
          cert.normalized_max = normalized;
          cert.worst_x = g.x;
          cert.worst_psi = g.psi;
          cert.worst_xi = *xi;
        }
        cert.drift_max = std::max(cert.drift_max, e.drift);
        if (e.drift > tol * e.scale) ++cert.violations;
      }
    }
  }
  return cert;
}

nlohmann::json Calibration::certificate() const {
  return nlohmann::json{{"lambda", params.lambda},
                        {"theta", params.theta},
                        {"k1", params.k1},
                        {"nu", params.nu},
                        {"delta", params.delta},
                        {"drift_max_strip", strip.drift_max},
                        {"drift_max_interior", interior.drift_max},
                        {"drift_max_strip_normalized", strip.normalized_max},
                        {"drift_max_interior_normalized", interior.normalized_max},
                        {"switching_margins", {switching.min_b1_minus_4b2, switching.min_b2_minus_4b1}},
                        {"n_samples", n_samples},
                        {"seed", seed},
                        {"candidates_tried", candidates_tried}};
}

Calibration calibrate_lambda(const ProblemSpec& problem, int n_samples, std::uint64_t seed, const CalibrationGrid& grid) {
  if (n_samples <= 0) throw Error(ErrorCode::InvalidArgument, "calibrate_lambda: n_samples must be positive");
  {
    const auto pts = sample_domain(problem, 500, seed ^ 0x5bd1e995ULL);
    if (!check_drift_condition(problem, pts).pass)
      throw Error(ErrorCode::Calibration, "calibrate_lambda: drift condition fails, problem not admissible");
  }
  const double psi_top = problem.domain.psi(problem.domain.anchor());
  Calibration best;
  best.n_samples = n_samples;
  best.seed = seed;
  std::string worst = "no candidate evaluated";
  int tried = 0;
  for (int k = grid.lambda_log2_min; k <= grid.lambda_log2_max; ++k) {
    const double lam = std::ldexp(1.0, -k);
    for (double theta : grid.thetas)
      for (double k1 : grid.k1s) {
        ++tried;
        const BarrierParams p = BarrierParams::make(lam, theta, k1);
        const SwitchingReport sw = switching_check(problem.domain, p, n_samples, derive_seed(seed, "switching"));
        if (!sw.pass) {
          worst = "switching margins " + std::to_string(sw.min_b1_minus_4b2) + ", " + std::to_string(sw.min_b2_minus_4b1);
          continue;
        }
        const DriftCertificate in = drift_certificate(problem, p, Barrier::B2, 1.0, lam * lam, 0.999 * psi_top,
                                                      n_samples, derive_seed(seed, "interior"));
        if (in.violations > 0) {
          worst = "interior drift max " + std::to_string(in.drift_max) + " at psi=" + std::to_string(in.worst_psi);
          continue;
        }
        const DriftCertificate st = drift_certificate(problem, p, Barrier::B1, 1.0, p.delta, lam, n_samples,
                                                      derive_seed(seed, "strip"));
        if (st.violations > 0) {
          worst = "strip drift max " + std::to_string(st.drift_max) + " at psi=" + std::to_string(st.worst_psi);
          continue;
        }
        best.params = p;
        best.strip = st;
        best.interior = in;
        best.switching = sw;
        best.candidates_tried = tried;
        return best;
      }
  }
  throw Error(ErrorCode::Calibration, "calibrate_lambda: no candidate passes; last violation: " + worst);
}

GluedPath::GluedPath(const ProblemSpec& p, int control_index, const BarrierParams& bp, const Vec& x0, const Vec& xi0,
                     const Vec& eta0, bool disable_aux)
    : problem(&p), control(control_index), params(bp), x(x0), q(QuasiState::start(xi0, eta0)), aux_disabled(disable_aux) {}

void GluedPath::prepare() {
  geom = problem->domain.eval(x);
  update_regime(automaton, geom.psi, params, t);
  if (aux_disabled) {
    aux = AuxProcesses::zero(problem->d, problem->d1, automaton.regime);
    return;
  }
  aux = automaton.regime == Regime::Boundary ? aux_boundary(geom, ctrl(), q.xi, q.xi_tilde, params)
                                             : aux_interior(geom, ctrl(), q.xi, q.xi_tilde, params);
}

void GluedPath::advance(const Vec& dw, double dt) {
  q = step_quasi(q, aux, ctrl(), x, phi, dw, dt);
  x = step_base(x, ctrl(), dw, dt);
  phi += ctrl().c * dt;
  t += dt;
}

}  // namespace bql
