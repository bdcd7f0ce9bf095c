#pragma once

#include "bql/common.hpp"

#include "json.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bql {

// Scalar field with closed-form first and second derivatives.
// value = x'Qx + l.x + c0 (the "one"/"zero" names are constant special cases).
struct Field {
  std::string name = "zero";
  Mat q;
  Vec l;
  double c0 = 0.0;

  static Field constant(int d, double value);
  static Field quadratic(const Mat& q, const Vec& l, double c0);

  double value(const Vec& x) const;
  Vec grad(const Vec& x) const;
  Mat hess(const Vec& x) const;
  double directional(const Vec& x, const Vec& u) const { return dot(grad(x), u); }
  double second_directional(const Vec& x, const Vec& u) const { return dot(u, matvec(hess(x), u)); }
  bool is_constant() const { return q.isZero(0.0) && l.isZero(0.0); }
};

struct Geometry {
  Vec x;
  double psi = 0.0;
  Vec grad;
  Mat hess;
};

// Domain {psi > 0}. Built-ins: ball (R^2 - |x - c|^2), ellipse
// (1 - sum (x_i/a_i)^2), quartic (1 - sum (x_i/a_i)^4). All values are
// multiplied by `scale`.
class DomainFn {
 public:
  enum class Kind { Ball, Ellipse, Quartic };

  static DomainFn ball(int d, double radius, const Vec& center);
  static DomainFn levelset(const std::string& expr, const Vec& axes);
  static std::vector<std::string> registered_levelsets();

  int dim() const { return d_; }
  Kind kind() const { return kind_; }
  double scale() const { return scale_; }
  DomainFn with_scale(double s) const;

  double psi(const Vec& x) const;
  Geometry eval(const Vec& x) const;
  // sum_i u_i * d/dx_i of the Hessian, i.e. the third derivative contracted once.
  Mat third(const Vec& x, const Vec& u) const;
  // Central-difference fallback (step 1e-5 * diameter) for cross-checks.
  Geometry eval_fd(const Vec& x) const;

  const Vec& box_lo() const { return lo_; }
  const Vec& box_hi() const { return hi_; }
  void set_box(const Vec& lo, const Vec& hi) { lo_ = lo; hi_ = hi; }
  double diameter() const { return (hi_ - lo_).norm(); }
  // A point with the largest psi among the shape's natural centres.
  Vec anchor() const { return center_; }
  double radius() const { return radius_; }
  const Vec& axes() const { return axes_; }

 private:
  Kind kind_ = Kind::Ball;
  int d_ = 0;
  double scale_ = 1.0;
  double radius_ = 1.0;
  Vec center_;
  Vec axes_;
  Vec lo_, hi_;
};

struct ControlPoint {
  Mat sigma;  // d x d1
  Vec b;
  double c = 0.0;
  Field f;

  Mat a() const { return 0.5 * matmul(sigma, Mat(sigma.transpose())); }
  // tr(a H) + b . grad
  double generator(const Geometry& g) const;
};

struct ProblemSpec {
  std::string name;
  int d = 0;
  int d1 = 0;
  double k0 = 1.0;
  std::vector<ControlPoint> controls;
  Field g;
  DomainFn domain;
  std::optional<Field> exact_value;

  void validate() const;
  bool inside(const Vec& x) const { return domain.psi(x) > 0.0; }
  ProblemSpec with_domain(const DomainFn& dom) const {
    ProblemSpec p = *this;
    p.domain = dom;
    return p;
  }
};

// Deterministic interior sample set (uniform rejection sampling in the box).
std::vector<Vec> sample_domain(const ProblemSpec& problem, int n, std::uint64_t seed);

struct DriftReport {
  double max_drift = 0.0;
  bool pass = true;
  int n_samples = 0;
};
DriftReport check_drift_condition(const ProblemSpec& problem, const std::vector<Vec>& samples);

// Multiplies the domain scale so that 4 (sup |sigma|_F^2 + sup |b|^2) <= min |L psi|
// over the samples. Uses sample_domain(problem, 2000, 7) when samples is empty.
ProblemSpec normalize_domain_scale(const ProblemSpec& problem, const std::vector<Vec>& samples = {});

struct InvarianceReport {
  double max_defect = 0.0;
  bool pass = true;
};
InvarianceReport check_orthogonal_invariance(const ProblemSpec& problem, const std::vector<Mat>& rotations,
                                             double tol);

struct NondegeneracyReport {
  double mu = 0.0;
  std::vector<std::pair<Vec, double>> mu_of_xi;
  int direction_grid_size = 0;
};
NondegeneracyReport nondegeneracy(const ProblemSpec& problem, int n_dirs, const std::vector<Vec>& probes);
// mu(xi) for a single probe.
double mu_of_direction(const ProblemSpec& problem, const Vec& xi);

enum class RegionLabel { BoundaryStrip, Overlap, Interior, OutsideDelta };
RegionLabel region(const DomainFn& domain, const Vec& x, double delta, double lambda);
RegionLabel region_of_psi(double psi, double delta, double lambda);
const char* region_name(RegionLabel r);

// JSON problem documents. Errors carry the offending field path.
ProblemSpec problem_from_json(const nlohmann::json& j);
ProblemSpec load_problem_file(const std::string& path);
nlohmann::json problem_to_json(const ProblemSpec& p);

// Planar rotation by angle t (d = 2).
Mat rotation2(double t);

}  // namespace bql
