#pragma once

#include "bql/sde.hpp"

#include <array>
#include <iosfwd>
#include <memory>
#include <vector>

namespace bql {

// Regular grid on the domain box (d = 1 or 2). Node k has integer
// coordinates (i, j); unknowns are the nodes with psi > 0.
struct Grid {
  int d = 0;
  double h = 0.0;
  Vec lo;
  std::array<int, 2> n{1, 1};
  std::vector<double> psi;      // per node
  std::vector<int> unknown;     // per node: index into the unknown vector, or -1 outside D
  std::vector<long> node_of;    // per unknown: node index
  long n_nodes() const { return static_cast<long>(n[0]) * n[1]; }
  long n_unknowns() const { return static_cast<long>(node_of.size()); }
  long index(int i, int j) const { return static_cast<long>(j) * n[0] + i; }
  std::array<int, 2> coords(long k) const { return {static_cast<int>(k % n[0]), static_cast<int>(k / n[0])}; }
  Vec point(int i, int j) const;
  Vec point(long k) const {
    const auto c = coords(k);
    return point(c[0], c[1]);
  }
  bool in_grid(int i, int j) const { return i >= 0 && j >= 0 && i < n[0] && j < n[1]; }
};
Grid make_grid(const ProblemSpec& problem, double h);

enum class RegConvention { Generator, Remark };  // a + (eps^2/2) I  or  a + eps I
Mat regularized_a(const Mat& a, double eps_reg, RegConvention convention);

// a = sum_k weight_k v_k v_k' with integer lattice directions v_k.
struct LatticeDecomposition {
  std::vector<std::array<int, 2>> dirs;
  std::vector<double> weights;
  int radius = 0;  // max |v|_inf used
  bool ok = false;
};
LatticeDecomposition decompose_lattice(const Mat& a, int d, int max_radius);
// Smallest t >= 0 such that a + t I has a lattice decomposition within max_radius.
double lattice_defect(const Mat& a, int d, int max_radius);

struct ControlStencil {
  LatticeDecomposition second;
  Vec b;
  double c = 0.0;
  Field f;
};
struct Discretization {
  const ProblemSpec* problem = nullptr;
  const Grid* grid = nullptr;
  double eps_reg = 0.0;
  RegConvention convention = RegConvention::Generator;
  std::vector<ControlStencil> controls;
};
inline constexpr int kMaxStencilRadius = 8;
Discretization discretize(const ProblemSpec& problem, const Grid& grid, double eps_reg, RegConvention convention);

// One discrete row: sum coef_j (u_j - u) + bc_sum - diag_extra u + f, where
// boundary neighbours contribute coef_j (g_j - u).
struct StencilRow {
  std::vector<std::pair<int, double>> interior;  // unknown index, coefficient
  double boundary_coef = 0.0;                    // sum of coefficients of boundary neighbours
  double boundary_value = 0.0;                   // sum coef_j g_j over boundary neighbours
  double c = 0.0;
  double f = 0.0;
};
StencilRow stencil_row(const Discretization& disc, long unknown, int control);

struct DiscreteSolution {
  std::shared_ptr<const Grid> grid;
  std::vector<double> u;        // per unknown
  std::vector<int> control;     // per unknown
  std::vector<double> residual; // per unknown: max_a [L^a u + f^a]
  double eps_reg = 0.0;
  RegConvention convention = RegConvention::Generator;
  int iterations = 0;
  std::vector<double> residual_history;
  bool monotone = true;  // values nondecreasing across Howard steps
  double residual_sup() const;
  double value_at(const ProblemSpec& problem, const Vec& x) const;
  double node_value(const ProblemSpec& problem, int i, int j) const;
};

struct HowardOptions {
  double tol = 1e-9;
  int max_iters = 50;
  std::vector<int> initial_policy;  // per unknown; empty = control 0
};
DiscreteSolution policy_iteration(const Discretization& disc, const HowardOptions& options = {});

DiscreteSolution solve_hjb(const ProblemSpec& problem, double h, double eps_reg, RegConvention convention,
                           const HowardOptions& options = {});

struct Continuation {
  std::vector<DiscreteSolution> solutions;
  std::vector<double> deltas;  // sup |u_k - u_k+1| over common unknowns
};
Continuation continuation_in_eps(const ProblemSpec& problem, double h, const std::vector<double>& eps_list,
                                 RegConvention convention, const HowardOptions& options = {});

struct DerivativeFields {
  std::vector<Vec> grad;  // per unknown
  std::vector<Mat> hess;  // per unknown
  std::vector<char> one_sided;
  std::vector<double> boundary_distance;  // psi / |grad psi|
};
DerivativeFields derivative_fields(const ProblemSpec& problem, const DiscreteSolution& solution);

struct EstimateReport {
  double n_e1 = 0.0;
  double n_e3_lower = 0.0;
  double n_e3_upper = 0.0;
  bool e3_upper_applicable = true;
  double n_e2 = 0.0;
  double e2_min_eig = 0.0;  // min eigenvalue of the corrected Hessian on {psi <= kappa} at n_e2
  long e2_nodes = 0;
  std::vector<std::pair<Vec, double>> mu_used;
};
// Smallest constants for the gradient, Hessian and convexity estimates over
// all unknowns and the unit directions e1, e2, (e1 +- e2)/sqrt2.
// n_e2_fixed >= 0 evaluates the convexity certificate with that constant
// instead of fitting it.
EstimateReport estimate_checks(const ProblemSpec& problem, const DiscreteSolution& solution,
                               const DerivativeFields& fields, double e2_kappa, double n_e2_fixed = -1.0);

FeedbackTable feedback_table(const DiscreteSolution& solution);

// CSV i,j,x1,x2,u,control_index,residual over unknowns.
void write_solution_csv(std::ostream& os, const DiscreteSolution& solution);

}  // namespace bql
