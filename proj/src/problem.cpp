#include "bql/problem.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace bql {

Field Field::constant(int d, double value) {
  Field f;
  f.name = value == 1.0 ? "one" : (value == 0.0 ? "zero" : "constant");
  f.q = Mat::Zero(d, d);
  f.l = Vec::Zero(d);
  f.c0 = value;
  return f;
}

Field Field::quadratic(const Mat& q, const Vec& l, double c0) {
  Field f;
  f.name = "quadratic";
  f.q = q;
  f.l = l;
  f.c0 = c0;
  return f;
}

double Field::value(const Vec& x) const { return dot(x, matvec(q, x)) + dot(l, x) + c0; }

Vec Field::grad(const Vec& x) const { return matvec(Mat(q + q.transpose()), x) + l; }

Mat Field::hess(const Vec&) const { return q + q.transpose(); }

DomainFn DomainFn::ball(int d, double radius, const Vec& center) {
  if (d < 1 || d > kMaxDim) throw Error(ErrorCode::InvalidArgument, "ball: dimension must be 1..3");
  if (!(radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "ball: radius must be positive");
  DomainFn dom;
  dom.kind_ = Kind::Ball;
  dom.d_ = d;
  dom.radius_ = radius;
  dom.center_ = center.size() == d ? center : Vec(Vec::Zero(d));
  dom.lo_ = dom.center_.array() - radius;
  dom.hi_ = dom.center_.array() + radius;
  return dom;
}

DomainFn DomainFn::levelset(const std::string& expr, const Vec& axes) {
  const int d = static_cast<int>(axes.size());
  if (d < 1 || d > kMaxDim) throw Error(ErrorCode::InvalidArgument, "levelset: dimension must be 1..3");
  for (int i = 0; i < d; ++i)
    if (!(axes(i) > 0.0)) throw Error(ErrorCode::InvalidArgument, "levelset: axes must be positive");
  DomainFn dom;
  if (expr == "ellipse")
    dom.kind_ = Kind::Ellipse;
  else if (expr == "quartic")
    dom.kind_ = Kind::Quartic;
  else
    throw Error(ErrorCode::Config, "unknown levelset expression '" + expr + "'");
  dom.d_ = d;
  dom.axes_ = axes;
  dom.center_ = Vec::Zero(d);
  dom.lo_ = -axes;
  dom.hi_ = axes;
  return dom;
}

std::vector<std::string> DomainFn::registered_levelsets() { return {"ellipse", "quartic"}; }

DomainFn DomainFn::with_scale(double s) const {
  if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::InvalidArgument, "domain scale must be positive");
  DomainFn out = *this;
  out.scale_ = s;
  return out;
}

double DomainFn::psi(const Vec& x) const {
  double v = 0.0;
  switch (kind_) {
    case Kind::Ball: {
      double r2 = 0.0;
      for (int i = 0; i < d_; ++i) r2 += (x(i) - center_(i)) * (x(i) - center_(i));
      v = radius_ * radius_ - r2;
      break;
    }
    case Kind::Ellipse: {
      double s = 0.0;
      for (int i = 0; i < d_; ++i) s += (x(i) / axes_(i)) * (x(i) / axes_(i));
      v = 1.0 - s;
      break;
    }
    case Kind::Quartic: {
      double s = 0.0;
      for (int i = 0; i < d_; ++i) {
        const double t = (x(i) / axes_(i)) * (x(i) / axes_(i));
        s += t * t;
      }
      v = 1.0 - s;
      break;
    }
  }
  return scale_ * v;
}

Geometry DomainFn::eval(const Vec& x) const {
  if (x.size() != d_) throw Error(ErrorCode::InvalidArgument, "eval_domain: dimension mismatch");
  Geometry g;
  g.x = x;
  g.psi = psi(x);
  g.grad = Vec::Zero(d_);
  g.hess = Mat::Zero(d_, d_);
  for (int i = 0; i < d_; ++i) {
    switch (kind_) {
      case Kind::Ball:
        g.grad(i) = -2.0 * scale_ * (x(i) - center_(i));
        g.hess(i, i) = -2.0 * scale_;
        break;
      case Kind::Ellipse: {
        const double a2 = axes_(i) * axes_(i);
        g.grad(i) = -2.0 * scale_ * x(i) / a2;
        g.hess(i, i) = -2.0 * scale_ / a2;
        break;
      }
      case Kind::Quartic: {
        const double a4 = std::pow(axes_(i), 4);
        g.grad(i) = -4.0 * scale_ * x(i) * x(i) * x(i) / a4;
        g.hess(i, i) = -12.0 * scale_ * x(i) * x(i) / a4;
        break;
      }
    }
  }
  if (!std::isfinite(g.psi) || !g.grad.allFinite() || !g.hess.allFinite())
    throw Error(ErrorCode::Domain, "domain-definition error: non-finite psi or derivative");
  return g;
}

Mat DomainFn::third(const Vec& x, const Vec& u) const {
  Mat t = Mat::Zero(d_, d_);
  if (kind_ == Kind::Quartic)
    for (int i = 0; i < d_; ++i) t(i, i) = -24.0 * scale_ * x(i) * u(i) / std::pow(axes_(i), 4);
  return t;
}

Geometry DomainFn::eval_fd(const Vec& x) const {
  const double h = 1e-5 * diameter();
  Geometry g;
  g.x = x;
  g.psi = psi(x);
  g.grad = Vec::Zero(d_);
  g.hess = Mat::Zero(d_, d_);
  for (int i = 0; i < d_; ++i) {
    Vec e = Vec::Zero(d_);
    e(i) = h;
    g.grad(i) = (psi(x + e) - psi(x - e)) / (2 * h);
    for (int j = 0; j < d_; ++j) {
      Vec f = Vec::Zero(d_);
      f(j) = h;
      g.hess(i, j) = (psi(x + e + f) - psi(x + e - f) - psi(x - e + f) + psi(x - e - f)) / (4 * h * h);
    }
  }
  g.hess = 0.5 * (g.hess + Mat(g.hess.transpose()));
  return g;
}

double ControlPoint::generator(const Geometry& g) const {
  const Mat am = a();
  double tr = 0.0;
  for (int i = 0; i < am.rows(); ++i)
    for (int j = 0; j < am.cols(); ++j) tr += am(i, j) * g.hess(j, i);
  return tr + dot(b, g.grad);
}

namespace {

Vec random_unit(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n01;
  Vec v(d);
  do {
    for (int i = 0; i < d; ++i) v(i) = n01(rng);
  } while (v.norm() < 1e-12);
  return v / v.norm();
}

// Outermost point of {psi = level} on the ray anchor + t u, t > 0.
Vec ray_level_point(const DomainFn& dom, const Vec& anchor, const Vec& u, double level) {
  double lo = 0.0, hi = 2.0 * dom.diameter() + 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (dom.psi(anchor + mid * u) > level)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 1e-17 * (1.0 + hi)) break;
  }
  return anchor + lo * u;
}

}  // namespace

void ProblemSpec::validate() const {
  if (d < 1 || d > kMaxDim) throw Error(ErrorCode::Config, "dimension: must be in 1..3");
  if (d1 < 1 || d1 > kMaxNoise) throw Error(ErrorCode::Config, "noise_dimension: must be in 1..6");
  if (!(k0 >= 1.0)) throw Error(ErrorCode::Config, "k0: must be >= 1");
  if (controls.empty()) throw Error(ErrorCode::Config, "controls: list must be non-empty");
  if (domain.dim() != d) throw Error(ErrorCode::Config, "domain: dimension mismatch");
  const auto samples = sample_domain(*this, 256, 11);
  for (std::size_t k = 0; k < controls.size(); ++k) {
    const auto& c = controls[k];
    const std::string at = "controls[" + std::to_string(k) + "]";
    if (c.sigma.rows() != d || c.sigma.cols() != d1) throw Error(ErrorCode::Config, at + ".sigma: shape must be d x d1");
    if (c.b.size() != d) throw Error(ErrorCode::Config, at + ".b: length must be d");
    if (!(c.c >= 0.0)) throw Error(ErrorCode::Config, at + ".c: must be nonnegative");
    if (c.sigma.norm() > k0 || c.b.norm() > k0 || c.c > k0)
      throw Error(ErrorCode::Config, at + ": coefficient exceeds k0");
    if (c.f.q.rows() != d || c.f.l.size() != d) throw Error(ErrorCode::Config, at + ".f: dimension mismatch");
    for (const auto& x : samples)
      if (std::abs(c.f.value(x)) > k0) throw Error(ErrorCode::Config, at + ".f: sup over D exceeds k0");
  }
  if (g.q.rows() != d || g.l.size() != d) throw Error(ErrorCode::Config, "g: dimension mismatch");
  // Boundedness on the box and the boundary gradient condition.
  std::mt19937_64 rng(5);
  const Vec lo = domain.box_lo(), hi = domain.box_hi();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    Vec x(d);
    for (int i = 0; i < d; ++i) x(i) = lo(i) + u01(rng) * (hi(i) - lo(i));
    const int face = k % (2 * d);
    x(face / 2) = face % 2 ? hi(face / 2) : lo(face / 2);
    if (domain.psi(x) > 1e-12 * domain.scale())
      throw Error(ErrorCode::Config, "domain: psi > 0 on the bounding box, D not certified bounded");
  }
  for (int k = 0; k < 64; ++k) {
    const Vec u = random_unit(rng, d);
    const Vec y = ray_level_point(domain, domain.anchor(), u, 0.0);
    if (domain.eval(y).grad.norm() / domain.scale() < 1.0 - 1e-9)
      throw Error(ErrorCode::Config, "domain: |grad psi| < 1 on the boundary");
  }
}

std::vector<Vec> sample_domain(const ProblemSpec& problem, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Vec lo = problem.domain.box_lo(), hi = problem.domain.box_hi();
  std::vector<Vec> out;
  out.reserve(n);
  long attempts = 0;
  while (static_cast<int>(out.size()) < n) {
    if (++attempts > 1000L * (n + 1)) throw Error(ErrorCode::Domain, "sample_domain: domain appears empty");
    Vec x(problem.d);
    for (int i = 0; i < problem.d; ++i) x(i) = lo(i) + u01(rng) * (hi(i) - lo(i));
    if (problem.domain.psi(x) > 0.0) out.push_back(x);
  }
  return out;
}

DriftReport check_drift_condition(const ProblemSpec& problem, const std::vector<Vec>& samples) {
  DriftReport rep;
  rep.max_drift = -std::numeric_limits<double>::infinity();
  rep.n_samples = static_cast<int>(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const Geometry g = problem.domain.eval(samples[k]);
    if (!(g.psi > 0.0)) throw Error(ErrorCode::Domain, "check_drift_condition: sample " + std::to_string(k) + " outside D");
    for (const auto& c : problem.controls) rep.max_drift = std::max(rep.max_drift, c.generator(g));
  }
  rep.pass = rep.max_drift <= -1.0;
  return rep;
}

ProblemSpec normalize_domain_scale(const ProblemSpec& problem, const std::vector<Vec>& samples_in) {
  const auto samples = samples_in.empty() ? sample_domain(problem, 2000, 7) : samples_in;
  const DriftReport rep = check_drift_condition(problem, samples);
  if (!rep.pass) throw Error(ErrorCode::InvalidArgument, "normalize_domain_scale: drift condition fails, cannot normalize");
  double s2 = 0.0, b2 = 0.0;
  for (const auto& c : problem.controls) {
    s2 = std::max(s2, c.sigma.squaredNorm());
    b2 = std::max(b2, c.b.squaredNorm());
  }
  const double target = 4.0 * (s2 + b2);
  if (!(target > 0.0)) throw Error(ErrorCode::InvalidArgument, "normalize_domain_scale: zero scale factor");
  double min_abs = std::numeric_limits<double>::infinity();
  for (const auto& x : samples) {
    const Geometry g = problem.domain.eval(x);
    for (const auto& c : problem.controls) min_abs = std::min(min_abs, std::abs(c.generator(g)));
  }
  const double factor = target / min_abs;
  if (factor <= 1.0) return problem;
  return problem.with_domain(problem.domain.with_scale(problem.domain.scale() * factor));
}

InvarianceReport check_orthogonal_invariance(const ProblemSpec& problem, const std::vector<Mat>& rotations, double tol) {
  InvarianceReport rep;
  std::vector<Mat> as;
  for (const auto& c : problem.controls) as.push_back(c.a());
  for (const auto& o : rotations) {
    if (o.rows() != problem.d || o.cols() != problem.d)
      throw Error(ErrorCode::InvalidArgument, "check_orthogonal_invariance: rotation has wrong shape");
    if ((matmul(o, Mat(o.transpose())) - Mat::Identity(problem.d, problem.d)).norm() > tol)
      throw Error(ErrorCode::InvalidArgument, "check_orthogonal_invariance: matrix is not orthogonal");
    for (const auto& a : as) {
      const Mat rot = matmul(matmul(o, a), Mat(o.transpose()));
      double best = std::numeric_limits<double>::infinity();
      for (const auto& bm : as) best = std::min(best, (rot - bm).norm());
      rep.max_defect = std::max(rep.max_defect, best);
    }
  }
  rep.pass = rep.max_defect <= tol;
  return rep;
}

namespace {

double max_quadratic(const std::vector<Mat>& as, const Vec& z) {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& a : as) m = std::max(m, dot(z, matvec(a, z)));
  return m;
}

template <class F>
double golden_min(F&& f, double lo, double hi, int iters, double* argmin) {
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters; ++i) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  if (argmin) *argmin = x;
  return f(x);
}

}  // namespace

double mu_of_direction(const ProblemSpec& problem, const Vec& xi) {
  const int d = problem.d;
  if (xi.size() != d) throw Error(ErrorCode::InvalidArgument, "nondegeneracy: probe dimension mismatch");
  const double n2 = xi.squaredNorm();
  if (!(n2 > 0.0)) throw Error(ErrorCode::InvalidArgument, "nondegeneracy: zero probe");
  std::vector<Mat> as;
  for (const auto& c : problem.controls) as.push_back(c.a());
  if (as.size() == 1) {
    const Eigen::MatrixXd a0 = as[0];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a0);
    const auto& lam = es.eigenvalues();
    const double lmax = std::max(0.0, lam.maxCoeff());
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
      const double ci = es.eigenvectors().col(i).dot(Eigen::VectorXd(xi));
      if (lam(i) <= 1e-14 * lmax || lam(i) <= 0.0) {
        if (std::abs(ci) > 1e-12 * std::sqrt(n2)) return 0.0;
        continue;
      }
      s += ci * ci / lam(i);
    }
    return s > 0.0 ? 1.0 / s : 0.0;
  }
  const Vec base = xi / n2;
  if (d == 1) return max_quadratic(as, base);
  // Orthonormal basis of the complement of xi.
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(d, d);
  m.col(0) = Eigen::VectorXd(xi) / std::sqrt(n2);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  Eigen::MatrixXd qm = qr.householderQ();
  const double span = 100.0 / std::sqrt(n2);
  if (d == 2) {
    const Vec n1 = Vec(qm.col(1));
    return golden_min([&](double t) { return max_quadratic(as, Vec(base + t * n1)); }, -span, span, 160, nullptr);
  }
  const Vec n1 = Vec(qm.col(1)), n2v = Vec(qm.col(2));
  auto inner = [&](double s) {
    return golden_min([&](double t) { return max_quadratic(as, Vec(base + s * n1 + t * n2v)); }, -span, span, 100,
                      nullptr);
  };
  return golden_min(inner, -span, span, 100, nullptr);
}

NondegeneracyReport nondegeneracy(const ProblemSpec& problem, int n_dirs, const std::vector<Vec>& probes) {
  if (n_dirs < 8) throw Error(ErrorCode::InvalidArgument, "nondegeneracy: n_dirs must be >= 8");
  for (const auto& p : probes)
    if (!(p.squaredNorm() > 0.0)) throw Error(ErrorCode::InvalidArgument, "nondegeneracy: zero probe");
  std::vector<Mat> as;
  for (const auto& c : problem.controls) as.push_back(c.a());
  NondegeneracyReport rep;
  const int d = problem.d;
  std::vector<Vec> dirs;
  if (d == 1) {
    dirs.push_back(Vec::Ones(1));
  } else if (d == 2) {
    for (int k = 0; k < n_dirs; ++k) {
      const double t = M_PI * k / n_dirs;
      Vec z(2);
      z << std::cos(t), std::sin(t);
      dirs.push_back(z);
    }
  } else {
    const double ga = M_PI * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < n_dirs; ++k) {
      const double zc = 1.0 - 2.0 * (k + 0.5) / n_dirs;
      const double r = std::sqrt(std::max(0.0, 1.0 - zc * zc));
      Vec z(3);
      z << r * std::cos(ga * k), r * std::sin(ga * k), zc;
      dirs.push_back(z);
    }
  }
  rep.direction_grid_size = static_cast<int>(dirs.size());
  rep.mu = std::numeric_limits<double>::infinity();
  for (const auto& z : dirs) rep.mu = std::min(rep.mu, max_quadratic(as, z));
  rep.mu = std::max(0.0, rep.mu);
  for (const auto& p : probes) rep.mu_of_xi.emplace_back(p, mu_of_direction(problem, p));
  return rep;
}

RegionLabel region_of_psi(double psi, double delta, double lambda) {
  if (!(0.0 < delta && delta < lambda * lambda && lambda * lambda < lambda && lambda < 1.0))
    throw Error(ErrorCode::InvalidArgument, "region: require 0 < delta < lambda^2 < lambda < 1");
  if (psi <= delta) return RegionLabel::OutsideDelta;
  if (psi <= lambda * lambda) return RegionLabel::BoundaryStrip;
  if (psi < lambda) return RegionLabel::Overlap;
  return RegionLabel::Interior;
}

RegionLabel region(const DomainFn& domain, const Vec& x, double delta, double lambda) {
  return region_of_psi(domain.psi(x), delta, lambda);
}

const char* region_name(RegionLabel r) {
  switch (r) {
    case RegionLabel::BoundaryStrip: return "BOUNDARY_STRIP";
    case RegionLabel::Overlap: return "OVERLAP";
    case RegionLabel::Interior: return "INTERIOR";
    case RegionLabel::OutsideDelta: return "OUTSIDE_D_DELTA";
  }
  return "?";
}

Mat rotation2(double t) {
  Mat o(2, 2);
  o << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
  return o;
}

}  // namespace bql
