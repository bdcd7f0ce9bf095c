#include "bql/hjb.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <ostream>

namespace bql {

Vec Grid::point(int i, int j) const {
  Vec x(d);
  x(0) = lo(0) + i * h;
  if (d == 2) x(1) = lo(1) + j * h;
  return x;
}

Grid make_grid(const ProblemSpec& problem, double h) {
  if (problem.d < 1 || problem.d > 2) throw Error(ErrorCode::Capability, "hjb: grids support d = 1 or 2 only");
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "hjb: grid spacing must be positive");
  Grid g;
  g.d = problem.d;
  g.h = h;
  g.lo = problem.domain.box_lo();
  const Vec hi = problem.domain.box_hi();
  for (int k = 0; k < g.d; ++k) {
    const double cells = (hi(k) - g.lo(k)) / h;
    if (cells > 1e5) throw Error(ErrorCode::InvalidArgument, "hjb: grid too fine for the domain box");
    g.n[static_cast<std::size_t>(k)] = static_cast<int>(std::floor(cells + 1e-9)) + 1;
  }
  const long nn = g.n_nodes();
  g.psi.resize(static_cast<std::size_t>(nn));
  g.unknown.assign(static_cast<std::size_t>(nn), -1);
  for (long k = 0; k < nn; ++k) {
    const double p = problem.domain.psi(g.point(k));
    g.psi[static_cast<std::size_t>(k)] = p;
    if (p > 0.0) {
      g.unknown[static_cast<std::size_t>(k)] = static_cast<int>(g.node_of.size());
      g.node_of.push_back(k);
    }
  }
  if (g.node_of.empty()) throw Error(ErrorCode::InvalidArgument, "hjb: grid has no interior nodes");
  return g;
}

Mat regularized_a(const Mat& a, double eps_reg, RegConvention convention) {
  const double iso = convention == RegConvention::Generator ? 0.5 * eps_reg * eps_reg : eps_reg;
  Mat out = a;
  for (int i = 0; i < a.rows(); ++i) out(i, i) += iso;
  return out;
}

namespace {

std::vector<std::array<int, 2>> primitive_directions(int r) {
  std::vector<std::array<int, 2>> out;
  for (int i = 0; i <= r; ++i)
    for (int j = -r; j <= r; ++j) {
      if (i == 0 && j <= 0) continue;
      if (std::gcd(i, std::abs(j)) != 1) continue;
      out.push_back({i, j});
    }
  return out;
}

double norm4(const std::array<int, 2>& v) {
  const double n2 = double(v[0]) * v[0] + double(v[1]) * v[1];
  return n2 * n2;
}

}  // namespace

LatticeDecomposition decompose_lattice(const Mat& a, int d, int max_radius) {
  LatticeDecomposition out;
  if (d == 1) {
    if (a(0, 0) >= 0.0) {
      out.dirs = {{1, 0}};
      out.weights = {a(0, 0)};
      out.radius = 1;
      out.ok = true;
    }
    return out;
  }
  const double scale = std::abs(a(0, 0)) + std::abs(a(1, 1)) + std::abs(a(0, 1));
  if (scale == 0.0) {
    out.ok = true;
    return out;
  }
  const double tol = 1e-13 * scale;
  for (int r = 1; r <= max_radius; ++r) {
    const auto dirs = primitive_directions(r);
    const std::size_t m = dirs.size();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t q = p + 1; q < m; ++q)
        for (std::size_t s = q + 1; s < m; ++s) {
          const std::array<std::array<int, 2>, 3> v{dirs[p], dirs[q], dirs[s]};
          Eigen::Matrix3d mm;
          for (int k = 0; k < 3; ++k) {
            mm(0, k) = double(v[k][0]) * v[k][0];
            mm(1, k) = double(v[k][0]) * v[k][1];
            mm(2, k) = double(v[k][1]) * v[k][1];
          }
          const Eigen::Vector3d w = mm.partialPivLu().solve(Eigen::Vector3d(a(0, 0), a(0, 1), a(1, 1)));
          if (w.minCoeff() < -tol) continue;
          double cost = 0.0;
          for (int k = 0; k < 3; ++k) cost += std::max(w(k), 0.0) * norm4(v[k]);
          if (cost < best) {
            best = cost;
            out.dirs.clear();
            out.weights.clear();
            for (int k = 0; k < 3; ++k)
              if (w(k) > tol) {
                out.dirs.push_back(v[k]);
                out.weights.push_back(w(k));
              }
            out.radius = r;
            out.ok = true;
          }
        }
    if (out.ok) return out;
  }
  return out;
}

double lattice_defect(const Mat& a, int d, int max_radius) {
  if (decompose_lattice(a, d, max_radius).ok) return 0.0;
  double lo = 0.0, hi = std::max(a.trace(), 1e-12);
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    Mat am = a;
    for (int i = 0; i < d; ++i) am(i, i) += mid;
    if (decompose_lattice(am, d, max_radius).ok)
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

Discretization discretize(const ProblemSpec& problem, const Grid& grid, double eps_reg, RegConvention convention) {
  if (!(eps_reg >= 0.0)) throw Error(ErrorCode::InvalidArgument, "discretize: eps_reg must be >= 0");
  if (grid.d != problem.d) throw Error(ErrorCode::InvalidArgument, "discretize: grid dimension mismatch");
  Discretization disc;
  disc.problem = &problem;
  disc.grid = &grid;
  disc.eps_reg = eps_reg;
  disc.convention = convention;
  for (std::size_t k = 0; k < problem.controls.size(); ++k) {
    const ControlPoint& c = problem.controls[k];
    const Mat ar = regularized_a(c.a(), eps_reg, convention);
    ControlStencil st;
    st.second = decompose_lattice(ar, problem.d, kMaxStencilRadius);
    if (!st.second.ok) {
      const double extra = lattice_defect(ar, problem.d, kMaxStencilRadius);
      const double iso = (convention == RegConvention::Generator ? 0.5 * eps_reg * eps_reg : eps_reg) + extra;
      const double need = convention == RegConvention::Generator ? std::sqrt(2.0 * iso) : iso;
      const auto cell = grid.coords(grid.node_of.front());
      throw Error(ErrorCode::Numeric, "discretize: no monotone stencil for control " + std::to_string(k) + " at cell (" +
                                          std::to_string(cell[0]) + "," + std::to_string(cell[1]) +
                                          "); requires eps_reg >= " + std::to_string(need));
    }
    for (double w : st.second.weights)
      if (!(w >= 0.0)) throw Error(ErrorCode::Internal, "discretize: negative stencil weight");
    st.b = c.b;
    st.c = c.c;
    st.f = c.f;
    disc.controls.push_back(std::move(st));
  }
  return disc;
}

namespace {

struct Arm {
  double t = 1.0;
  int col = -1;      // unknown index, or -1 for a boundary point
  double g = 0.0;    // boundary value when col < 0
};

Arm make_arm(const Discretization& disc, int i, int j, int di, int dj) {
  const Grid& G = *disc.grid;
  Arm a;
  const int qi = i + di, qj = j + dj;
  if (G.in_grid(qi, qj)) {
    const int col = G.unknown[static_cast<std::size_t>(G.index(qi, qj))];
    if (col >= 0) {
      a.col = col;
      return a;
    }
  }
  const DomainFn& dom = disc.problem->domain;
  const Vec x0 = G.point(i, j);
  Vec step(G.d);
  step(0) = di * G.h;
  if (G.d == 2) step(1) = dj * G.h;
  if (dom.psi(Vec(x0 + step)) > 0.0) throw Error(ErrorCode::Domain, "hjb: domain box does not contain D (stencil leaves the grid)");
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (dom.psi(Vec(x0 + mid * step)) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  a.t = 0.5 * (lo + hi);
  a.g = disc.problem->g.value(Vec(x0 + a.t * step));
  return a;
}

void add_arm(StencilRow& row, const Arm& arm, double coef) {
  if (arm.col >= 0) {
    row.interior.emplace_back(arm.col, coef);
  } else {
    row.boundary_coef += coef;
    row.boundary_value += coef * arm.g;
  }
}

}  // namespace

StencilRow stencil_row(const Discretization& disc, long unknown, int control) {
  const Grid& G = *disc.grid;
  const ControlStencil& st = disc.controls[static_cast<std::size_t>(control)];
  const long node = G.node_of[static_cast<std::size_t>(unknown)];
  const auto p = G.coords(node);
  StencilRow row;
  const double h2 = G.h * G.h;
  for (std::size_t k = 0; k < st.second.dirs.size(); ++k) {
    const auto& v = st.second.dirs[k];
    const double w = st.second.weights[k];
    const Arm ap = make_arm(disc, p[0], p[1], v[0], v[1]);
    const Arm am = make_arm(disc, p[0], p[1], -v[0], -v[1]);
    const double tsum = ap.t + am.t;
    add_arm(row, ap, 2.0 * w / (ap.t * tsum * h2));
    add_arm(row, am, 2.0 * w / (am.t * tsum * h2));
  }
  for (int ax = 0; ax < G.d; ++ax) {
    const double b = st.b(ax);
    if (b == 0.0) continue;
    const int s = b > 0.0 ? 1 : -1;
    const Arm a = make_arm(disc, p[0], p[1], ax == 0 ? s : 0, ax == 1 ? s : 0);
    add_arm(row, a, std::abs(b) / (a.t * G.h));
  }
  row.c = st.c;
  row.f = st.f.value(G.point(node));
  return row;
}

namespace {

// L u + f at one row and the row's diagonal magnitude.
std::pair<double, double> apply_row(const StencilRow& row, const std::vector<double>& u, int self) {
  const double us = u[static_cast<std::size_t>(self)];
  double acc = 0.0, diag = row.boundary_coef + row.c;
  for (const auto& [col, coef] : row.interior) {
    acc += coef * (u[static_cast<std::size_t>(col)] - us);
    diag += coef;
  }
  acc += row.boundary_value - row.boundary_coef * us - row.c * us + row.f;
  return {acc, diag};
}

}  // namespace

double DiscreteSolution::residual_sup() const {
  double m = 0.0;
  for (double r : residual) m = std::max(m, std::abs(r));
  return m;
}

double DiscreteSolution::node_value(const ProblemSpec& problem, int i, int j) const {
  const Grid& G = *grid;
  const int ii = std::clamp(i, 0, G.n[0] - 1), jj = std::clamp(j, 0, G.n[1] - 1);
  const int col = G.unknown[static_cast<std::size_t>(G.index(ii, jj))];
  if (col >= 0) return u[static_cast<std::size_t>(col)];
  return problem.g.value(G.point(ii, jj));
}

double DiscreteSolution::value_at(const ProblemSpec& problem, const Vec& x) const {
  const Grid& G = *grid;
  if (x.size() != G.d) throw Error(ErrorCode::InvalidArgument, "value_at: dimension mismatch");
  const double sx = (x(0) - G.lo(0)) / G.h;
  const int i0 = std::clamp(static_cast<int>(std::floor(sx)), 0, std::max(G.n[0] - 2, 0));
  const double fx = sx - i0;
  if (G.d == 1) return (1 - fx) * node_value(problem, i0, 0) + fx * node_value(problem, i0 + 1, 0);
  const double sy = (x(1) - G.lo(1)) / G.h;
  const int j0 = std::clamp(static_cast<int>(std::floor(sy)), 0, std::max(G.n[1] - 2, 0));
  const double fy = sy - j0;
  return (1 - fx) * (1 - fy) * node_value(problem, i0, j0) + fx * (1 - fy) * node_value(problem, i0 + 1, j0) +
         (1 - fx) * fy * node_value(problem, i0, j0 + 1) + fx * fy * node_value(problem, i0 + 1, j0 + 1);
}

DiscreteSolution policy_iteration(const Discretization& disc, const HowardOptions& options) {
  const Grid& G = *disc.grid;
  const long n = G.n_unknowns();
  const int nc = static_cast<int>(disc.controls.size());
  DiscreteSolution sol;
  sol.grid = std::make_shared<const Grid>(G);
  sol.eps_reg = disc.eps_reg;
  sol.convention = disc.convention;
  std::vector<int> policy = options.initial_policy;
  if (policy.empty()) policy.assign(static_cast<std::size_t>(n), 0);
  if (static_cast<long>(policy.size()) != n) throw Error(ErrorCode::InvalidArgument, "policy_iteration: initial policy size mismatch");
  // Rows are fixed per (unknown, control); build them once.
  std::vector<std::vector<StencilRow>> rows(static_cast<std::size_t>(n));
  for (long r = 0; r < n; ++r) {
    rows[static_cast<std::size_t>(r)].reserve(static_cast<std::size_t>(nc));
    for (int a = 0; a < nc; ++a) rows[static_cast<std::size_t>(r)].push_back(stencil_row(disc, r, a));
  }
  std::vector<double> u(static_cast<std::size_t>(n), 0.0), prev;
  std::vector<double> residual(static_cast<std::size_t>(n), 0.0);
  for (int it = 1; it <= options.max_iters; ++it) {
    std::vector<Eigen::Triplet<double>> trips;
    Eigen::VectorXd rhs(n);
    for (long r = 0; r < n; ++r) {
      const StencilRow& row = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(policy[static_cast<std::size_t>(r)])];
      double diag = row.boundary_coef + row.c;
      for (const auto& [col, coef] : row.interior) {
        trips.emplace_back(r, col, coef);
        diag += coef;
      }
      trips.emplace_back(r, r, -diag);
      rhs(r) = -row.f - row.boundary_value;
    }
    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw Error(ErrorCode::Numeric, "policy_iteration: sparse factorization failed");
    const Eigen::VectorXd x = lu.solve(rhs);
    if (lu.info() != Eigen::Success || !x.allFinite()) throw Error(ErrorCode::Numeric, "policy_iteration: linear solve failed");
    prev = u;
    for (long r = 0; r < n; ++r) u[static_cast<std::size_t>(r)] = x(r);
    if (it > 1)
      for (long r = 0; r < n; ++r)
        if (u[static_cast<std::size_t>(r)] < prev[static_cast<std::size_t>(r)] - 1e-10 * (1.0 + std::abs(prev[static_cast<std::size_t>(r)])))
          sol.monotone = false;
    bool changed = false;
    for (long r = 0; r < n; ++r) {
      const auto ur = static_cast<std::size_t>(r);
      const auto [cur, dcur] = apply_row(rows[ur][static_cast<std::size_t>(policy[ur])], u, static_cast<int>(r));
      double best = cur;
      int arg = policy[ur];
      for (int a = 0; a < nc; ++a) {
        if (a == policy[ur]) continue;
        const auto [val, dg] = apply_row(rows[ur][static_cast<std::size_t>(a)], u, static_cast<int>(r));
        (void)dg;
        if (val > best + 1e-12 * dcur * (1.0 + std::abs(u[ur]))) {
          best = val;
          arg = a;
        }
      }
      residual[ur] = best / dcur;
      if (arg != policy[ur]) {
        policy[ur] = arg;
        changed = true;
      }
    }
    double rs = 0.0;
    for (double v : residual) rs = std::max(rs, std::abs(v));
    sol.residual_history.push_back(rs);
    sol.iterations = it;
    if (!changed) {
      if (rs > options.tol)
        throw Error(ErrorCode::Numeric, "policy_iteration: policy stable but residual " + std::to_string(rs) + " above tolerance");
      sol.u = std::move(u);
      sol.control = std::move(policy);
      sol.residual = std::move(residual);
      return sol;
    }
  }
  std::string hist;
  for (double r : sol.residual_history) hist += (hist.empty() ? "" : ", ") + std::to_string(r);
  throw Error(ErrorCode::Numeric, "policy_iteration: max_iters exceeded; residual history: " + hist);
}

DiscreteSolution solve_hjb(const ProblemSpec& problem, double h, double eps_reg, RegConvention convention,
                           const HowardOptions& options) {
  const Grid grid = make_grid(problem, h);
  const Discretization disc = discretize(problem, grid, eps_reg, convention);
  return policy_iteration(disc, options);
}

Continuation continuation_in_eps(const ProblemSpec& problem, double h, const std::vector<double>& eps_list,
                                 RegConvention convention, const HowardOptions& options) {
  if (eps_list.empty()) throw Error(ErrorCode::InvalidArgument, "continuation_in_eps: empty eps list");
  for (std::size_t k = 0; k < eps_list.size(); ++k) {
    if (!(eps_list[k] > 0.0)) throw Error(ErrorCode::InvalidArgument, "continuation_in_eps: eps must be positive");
    if (k > 0 && !(eps_list[k] < eps_list[k - 1])) throw Error(ErrorCode::InvalidArgument, "continuation_in_eps: eps list must decrease");
  }
  const Grid grid = make_grid(problem, h);
  Continuation out;
  HowardOptions opt = options;
  for (double e : eps_list) {
    const Discretization disc = discretize(problem, grid, e, convention);
    out.solutions.push_back(policy_iteration(disc, opt));
    opt.initial_policy = out.solutions.back().control;
  }
  for (std::size_t k = 0; k + 1 < out.solutions.size(); ++k) {
    double m = 0.0;
    const auto& a = out.solutions[k].u;
    const auto& b = out.solutions[k + 1].u;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    out.deltas.push_back(m);
  }
  return out;
}

DerivativeFields derivative_fields(const ProblemSpec& problem, const DiscreteSolution& solution) {
  const Grid& G = *solution.grid;
  const long n = G.n_unknowns();
  const double h = G.h;
  DerivativeFields out;
  out.grad.resize(static_cast<std::size_t>(n));
  out.hess.resize(static_cast<std::size_t>(n));
  out.one_sided.assign(static_cast<std::size_t>(n), 0);
  out.boundary_distance.resize(static_cast<std::size_t>(n));
  auto val = [&](int i, int j, double& v) {
    if (!G.in_grid(i, j)) return false;
    const int col = G.unknown[static_cast<std::size_t>(G.index(i, j))];
    if (col < 0) return false;
    v = solution.u[static_cast<std::size_t>(col)];
    return true;
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (long r = 0; r < n; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    const auto p = G.coords(G.node_of[ur]);
    const double u0 = solution.u[ur];
    Vec gr(G.d);
    Mat H(G.d, G.d);
    bool flag = false;
    for (int ax = 0; ax < G.d; ++ax) {
      const int di = ax == 0 ? 1 : 0, dj = ax == 1 ? 1 : 0;
      double up, um, u2;
      if (val(p[0] + di, p[1] + dj, up) && val(p[0] - di, p[1] - dj, um)) {
        gr(ax) = (up - um) / (2 * h);
        H(ax, ax) = (up - 2 * u0 + um) / (h * h);
      } else if (val(p[0] + di, p[1] + dj, up) && val(p[0] + 2 * di, p[1] + 2 * dj, u2)) {
        gr(ax) = (-3 * u0 + 4 * up - u2) / (2 * h);
        H(ax, ax) = (u0 - 2 * up + u2) / (h * h);
        flag = true;
      } else if (val(p[0] - di, p[1] - dj, um) && val(p[0] - 2 * di, p[1] - 2 * dj, u2)) {
        gr(ax) = (3 * u0 - 4 * um + u2) / (2 * h);
        H(ax, ax) = (u0 - 2 * um + u2) / (h * h);
        flag = true;
      } else {
        gr(ax) = nan;
        H(ax, ax) = nan;
        flag = true;
      }
    }
    if (G.d == 2) {
      double a, b, c, e;
      if (val(p[0] + 1, p[1] + 1, a) && val(p[0] + 1, p[1] - 1, b) && val(p[0] - 1, p[1] + 1, c) &&
          val(p[0] - 1, p[1] - 1, e)) {
        H(0, 1) = (a - b - c + e) / (4 * h * h);
      } else {
        H(0, 1) = nan;
        flag = true;
        for (int s1 : {1, -1})
          for (int s2 : {1, -1}) {
            double q11, q10, q01;
            if (std::isnan(H(0, 1)) && val(p[0] + s1, p[1] + s2, q11) && val(p[0] + s1, p[1], q10) &&
                val(p[0], p[1] + s2, q01))
              H(0, 1) = s1 * s2 * (q11 - q10 - q01 + u0) / (h * h);
          }
      }
      H(1, 0) = H(0, 1);
    }
    out.grad[ur] = gr;
    out.hess[ur] = H;
    out.one_sided[ur] = flag ? 1 : 0;
    const Geometry g = problem.domain.eval(G.point(G.node_of[ur]));
    out.boundary_distance[ur] = g.psi / std::max(g.grad.norm(), 1e-300);
  }
  return out;
}

EstimateReport estimate_checks(const ProblemSpec& problem, const DiscreteSolution& solution,
                               const DerivativeFields& fields, double e2_kappa, double n_e2_fixed) {
  if (!(e2_kappa > 0.0)) throw Error(ErrorCode::InvalidArgument, "estimate_checks: kappa must be positive");
  const Grid& G = *solution.grid;
  std::vector<Vec> dirs;
  if (G.d == 1) {
    dirs.push_back(Vec::Ones(1));
  } else {
    const double s = std::sqrt(0.5);
    Vec a(2), b(2), c(2), d(2);
    a << 1, 0;
    b << 0, 1;
    c << s, s;
    d << s, -s;
    dirs = {a, b, c, d};
  }
  EstimateReport rep;
  std::vector<double> mu;
  for (const auto& xi : dirs) {
    const double m = mu_of_direction(problem, xi);
    mu.push_back(m);
    rep.mu_used.emplace_back(xi, m);
    if (!(m > 0.0)) rep.e3_upper_applicable = false;
  }
  struct E2Node {
    Mat H, C;
  };
  std::vector<E2Node> e2;
  for (long r = 0; r < G.n_unknowns(); ++r) {
    const auto ur = static_cast<std::size_t>(r);
    const Vec& gu = fields.grad[ur];
    const Mat& H = fields.hess[ur];
    if (!gu.allFinite() || !H.allFinite()) continue;
    const Geometry g = problem.domain.eval(G.point(G.node_of[ur]));
    for (std::size_t k = 0; k < dirs.size(); ++k) {
      const Vec& xi = dirs[k];
      const double uxi = dot(gu, xi), uxx = dot(xi, matvec(H, xi)), pxi = dot(g.grad, xi);
      rep.n_e1 = std::max(rep.n_e1, std::abs(uxi) / (1.0 + std::abs(pxi) / std::sqrt(g.psi)));
      rep.n_e3_lower = std::max(rep.n_e3_lower, -uxx / (1.0 + pxi * pxi / g.psi));
      if (rep.e3_upper_applicable) rep.n_e3_upper = std::max(rep.n_e3_upper, uxx * g.psi * mu[k]);
    }
    if (g.psi <= e2_kappa) {
      Mat C = g.hess * std::log(g.psi / e2_kappa);
      for (int i = 0; i < G.d; ++i) C(i, i) += 2.0;
      for (int i = 0; i < G.d; ++i)
        for (int j = 0; j < G.d; ++j) C(i, j) += g.grad(i) * g.grad(j) / g.psi;
      e2.push_back({H, C});
    }
  }
  rep.e2_nodes = static_cast<long>(e2.size());
  if (!rep.e3_upper_applicable) rep.n_e3_upper = std::numeric_limits<double>::quiet_NaN();
  double n2 = 0.0;
  if (n_e2_fixed >= 0.0) {
    n2 = n_e2_fixed;
  } else {
    for (const auto& node : e2) {
      const Eigen::MatrixXd Cd = node.C, Hd = -Eigen::MatrixXd(node.H);
      Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(Hd, Cd);
      if (es.info() != Eigen::Success) {
        n2 = std::numeric_limits<double>::infinity();
        break;
      }
      n2 = std::max(n2, es.eigenvalues().maxCoeff());
    }
  }
  rep.n_e2 = n2;
  rep.e2_min_eig = std::numeric_limits<double>::infinity();
  for (const auto& node : e2) {
    const Eigen::MatrixXd M = Eigen::MatrixXd(node.H) + n2 * Eigen::MatrixXd(node.C);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    rep.e2_min_eig = std::min(rep.e2_min_eig, es.eigenvalues().minCoeff());
  }
  return rep;
}

FeedbackTable feedback_table(const DiscreteSolution& solution) {
  const Grid& G = *solution.grid;
  FeedbackTable t;
  t.lo = G.lo;
  t.h = G.h;
  t.n.assign(G.n.begin(), G.n.begin() + G.d);
  const long nn = G.n_nodes();
  t.index.assign(static_cast<std::size_t>(nn), -1);
  std::deque<long> q;
  for (long r = 0; r < G.n_unknowns(); ++r) {
    t.index[static_cast<std::size_t>(G.node_of[static_cast<std::size_t>(r)])] = solution.control[static_cast<std::size_t>(r)];
    q.push_back(G.node_of[static_cast<std::size_t>(r)]);
  }
  while (!q.empty()) {
    const long k = q.front();
    q.pop_front();
    const auto p = G.coords(k);
    const int nb[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (const auto& o : nb) {
      const int i = p[0] + o[0], j = p[1] + o[1];
      if (!G.in_grid(i, j)) continue;
      const long m = G.index(i, j);
      if (t.index[static_cast<std::size_t>(m)] >= 0) continue;
      t.index[static_cast<std::size_t>(m)] = t.index[static_cast<std::size_t>(k)];
      q.push_back(m);
    }
  }
  return t;
}

void write_solution_csv(std::ostream& os, const DiscreteSolution& solution) {
  const Grid& G = *solution.grid;
  os << "i,j,x1,x2,u,control_index,residual\n";
  char buf[256];
  for (long r = 0; r < G.n_unknowns(); ++r) {
    const auto ur = static_cast<std::size_t>(r);
    const long k = G.node_of[ur];
    const auto p = G.coords(k);
    const Vec x = G.point(k);
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%d,%.17g\n", p[0], p[1], x(0), G.d == 2 ? x(1) : 0.0,
                  solution.u[ur], solution.control[ur], solution.residual[ur]);
    os << buf;
  }
}

}  // namespace bql
