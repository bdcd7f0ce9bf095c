#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bql/hjb.hpp"
#include "support.hpp"

#include <cmath>
#include <map>
#include <random>
#include <sstream>

using namespace bql;
using doctest::Approx;

namespace {

std::map<std::pair<int, int>, double> interior_coefs(const Discretization& disc, long unknown, int control) {
  const StencilRow row = stencil_row(disc, unknown, control);
  const auto c0 = disc.grid->coords(disc.grid->node_of[static_cast<std::size_t>(unknown)]);
  std::map<std::pair<int, int>, double> out;
  for (const auto& [k, w] : row.interior) {
    const auto c = disc.grid->coords(disc.grid->node_of[static_cast<std::size_t>(k)]);
    out[{c[0] - c0[0], c[1] - c0[1]}] += w;
  }
  return out;
}

long unknown_at(const Grid& g, int i, int j) { return g.unknown[static_cast<std::size_t>(g.index(i, j))]; }

long centre_unknown(const Grid& g) {
  const int i = g.n[0] / 2, j = g.n[1] / 2;
  return unknown_at(g, i, j);
}

}  // namespace

TEST_CASE("grid construction") {
  const ProblemSpec tp1 = load_config("tp1.json");
  const Grid g = make_grid(tp1, 0.25);
  CHECK(g.n[0] == 9);
  CHECK(g.n[1] == 9);
  for (long k = 0; k < g.n_unknowns(); ++k) CHECK(g.psi[static_cast<std::size_t>(g.node_of[static_cast<std::size_t>(k)])] > 0.0);
  CHECK_THROWS_AS(make_grid(tp1, 0.0), Error);
  const ProblemSpec p3 = parse_problem(R"({"dimension": 3, "noise_dimension": 3, "k0": 4, "domain": {"type": "ball", "radius": 1},
      "controls": [{"sigma": [1, 0, 0, 0, 1, 0, 0, 0, 1]}]})");
  CHECK_THROWS_AS(make_grid(p3, 0.25), Error);
}

TEST_CASE("regularized diffusion") {
  const Mat a = Mat::Zero(2, 2);
  CHECK(regularized_a(a, 0.1, RegConvention::Generator)(0, 0) == Approx(0.005));
  CHECK(regularized_a(a, 0.1, RegConvention::Remark)(1, 1) == Approx(0.1));
  CHECK(regularized_a(a, 0.1, RegConvention::Remark)(0, 1) == 0.0);
}

TEST_CASE("lattice decomposition") {
  const LatticeDecomposition id = decompose_lattice(Mat::Identity(2, 2), 2, 8);
  REQUIRE(id.ok);
  CHECK(id.radius == 1);
  Mat rebuilt = Mat::Zero(2, 2);
  for (std::size_t k = 0; k < id.dirs.size(); ++k) {
    Vec v = vec2(id.dirs[k][0], id.dirs[k][1]);
    rebuilt += id.weights[k] * v * v.transpose();
    CHECK(id.weights[k] >= 0.0);
  }
  CHECK((rebuilt - Mat::Identity(2, 2)).norm() < 1e-13);
  Mat diag(2, 2);
  diag << 0.5, 0.5, 0.5, 0.5;
  const LatticeDecomposition dd = decompose_lattice(diag, 2, 8);
  REQUIRE(dd.ok);
  CHECK(dd.radius == 1);
  // A rank-one matrix along an irrational direction has no exact decomposition.
  const Vec e = vec2(std::cos(0.3), std::sin(0.3));
  const Mat ee = e * e.transpose();
  CHECK_FALSE(decompose_lattice(ee, 2, 8).ok);
  const double t = lattice_defect(ee, 2, 8);
  CHECK(t > 0.0);
  CHECK(decompose_lattice(Mat(ee + 1.01 * t * Mat::Identity(2, 2)), 2, 8).ok);
  // Random positive definite matrices reconstruct exactly.
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    Mat m(2, 2);
    m << n(rng), n(rng), n(rng), n(rng);
    const Mat a = m * m.transpose() + 0.3 * Mat::Identity(2, 2);
    const LatticeDecomposition ld = decompose_lattice(a, 2, 8);
    if (!ld.ok) continue;
    Mat r = Mat::Zero(2, 2);
    for (std::size_t q = 0; q < ld.dirs.size(); ++q) {
      Vec v = vec2(ld.dirs[q][0], ld.dirs[q][1]);
      r += ld.weights[q] * v * v.transpose();
      CHECK(ld.weights[q] >= 0.0);
    }
    CHECK((r - a).norm() <= 1e-12 * (1.0 + a.norm()));
  }
}

TEST_CASE("identity diffusion gives the five point Laplacian") {
  const ProblemSpec tp1 = load_config("tp1.json");
  const double h = 1.0 / 16;
  const Grid g = make_grid(tp1, h);
  const Discretization disc = discretize(tp1, g, 0.0, RegConvention::Generator);
  const auto c = interior_coefs(disc, centre_unknown(g), 0);
  CHECK(c.size() == 4);
  for (auto off : {std::pair{1, 0}, std::pair{-1, 0}, std::pair{0, 1}, std::pair{0, -1}})
    CHECK(c.at(off) == Approx(1.0 / (h * h)));
}

TEST_CASE("rank one diagonal diffusion is monotone") {
  const ProblemSpec p = parse_problem(R"({"dimension": 2, "noise_dimension": 1, "k0": 4, "domain": {"type": "ball", "radius": 1},
      "controls": [{"sigma": [1, 1]}]})");
  const double h = 1.0 / 16;
  const Grid g = make_grid(p, h);
  const Discretization disc = discretize(p, g, 0.0, RegConvention::Generator);
  const auto c = interior_coefs(disc, centre_unknown(g), 0);
  CHECK(c.size() == 2);
  CHECK(c.at({1, 1}) == Approx(0.5 / (h * h)));
  CHECK(c.at({-1, -1}) == Approx(0.5 / (h * h)));
}

TEST_CASE("upwind drift") {
  const ProblemSpec p = parse_problem(R"({"dimension": 2, "noise_dimension": 2, "k0": 4, "domain": {"type": "ball", "radius": 1},
      "controls": [{"sigma": [1.4142135623730951, 0, 0, 1.4142135623730951], "b": [1, 0]}]})");
  const double h = 1.0 / 16;
  const Grid g = make_grid(p, h);
  const Discretization disc = discretize(p, g, 0.0, RegConvention::Generator);
  const auto c = interior_coefs(disc, centre_unknown(g), 0);
  CHECK(c.at({1, 0}) == Approx(1.0 / (h * h) + 1.0 / h));
  CHECK(c.at({-1, 0}) == Approx(1.0 / (h * h)));
  for (const auto& [off, w] : c) CHECK(w >= 0.0);
}

TEST_CASE("monotone stencils on every row") {
  const ProblemSpec tp2 = load_config("tp2.json");
  const Grid g = make_grid(tp2, 1.0 / 16);
  const Discretization disc = discretize(tp2, g, 0.05, RegConvention::Generator);
  for (long k = 0; k < g.n_unknowns(); k += 7)
    for (int a = 0; a < 32; a += 5) {
      const StencilRow r = stencil_row(disc, k, a);
      double sum = r.boundary_coef;
      for (const auto& [j, w] : r.interior) {
        CHECK(w >= 0.0);
        CHECK(j != k);
        sum += w;
      }
      CHECK(r.boundary_coef >= 0.0);
      CHECK(sum > 0.0);
    }
}

TEST_CASE("discretize names the cell and the required regularization") {
  const ProblemSpec tp2 = load_config("tp2.json");
  const Grid g = make_grid(tp2, 1.0 / 16);
  try {
    discretize(tp2, g, 0.0, RegConvention::Generator);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(e.code() == ErrorCode::Numeric);
    CHECK(msg.find("at cell (") != std::string::npos);
    CHECK(msg.find("requires eps_reg >=") != std::string::npos);
  }
}

TEST_CASE("TP1 single control solve") {
  const ProblemSpec tp1 = load_config("tp1.json");
  const double h = 1.0 / 64;
  const DiscreteSolution s = solve_hjb(tp1, h, 0.0, RegConvention::Generator);
  CHECK(std::abs(s.value_at(tp1, vec2(0, 0)) - 0.25) <= 2 * h * h);
  CHECK(s.residual_sup() <= 1e-9);
  CHECK(s.iterations <= 2);
  const DerivativeFields df = derivative_fields(tp1, s);
  long checked = 0;
  for (long k = 0; k < s.grid->n_unknowns(); ++k) {
    if (df.one_sided[static_cast<std::size_t>(k)] || !df.hess[static_cast<std::size_t>(k)].allFinite()) continue;
    CHECK((df.hess[static_cast<std::size_t>(k)] + 0.5 * Mat::Identity(2, 2)).norm() <= 5 * h * h);
    ++checked;
  }
  CHECK(checked > 1000);
  const EstimateReport er = estimate_checks(tp1, s, df, 1.0);
  CHECK(er.n_e1 <= 1.0);
  CHECK(er.n_e1 > 0.0);
  std::ostringstream os;
  write_solution_csv(os, s);
  CHECK(os.str().rfind("i,j,x1,x2,u,control_index,residual\n", 0) == 0);
}

TEST_CASE("zero data gives zero solution") {
  const ProblemSpec p = disk_problem("\"zero\"", "\"zero\"");
  const DiscreteSolution s = solve_hjb(p, 1.0 / 32, 0.0, RegConvention::Generator);
  for (double v : s.u) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("constant solution") {
  const ProblemSpec p = disk_problem(R"({"name": "constant", "value": 3.0})", R"({"name": "constant", "value": 2.0})", 1.5);
  for (double eps : {0.2, 0.1}) {
    const DiscreteSolution s = solve_hjb(p, 1.0 / 16, eps, RegConvention::Remark);
    for (double v : s.u) CHECK(v == Approx(2.0).epsilon(1e-12));
  }
  const Continuation c = continuation_in_eps(p, 1.0 / 16, {0.2, 0.1, 0.05}, RegConvention::Remark);
  for (double d : c.deltas) CHECK(d <= 1e-12);
  CHECK_THROWS_AS(continuation_in_eps(p, 1.0 / 16, {0.1, 0.2}, RegConvention::Remark), Error);
  CHECK_THROWS_AS(continuation_in_eps(p, 1.0 / 16, {}, RegConvention::Remark), Error);
}

TEST_CASE("linear solution has zero Hessian") {
  const ProblemSpec p = disk_problem("\"zero\"", R"({"name": "quadratic", "l": [0.7, -0.2], "c": 0.1})");
  const DiscreteSolution s = solve_hjb(p, 1.0 / 32, 0.0, RegConvention::Generator);
  const DerivativeFields df = derivative_fields(p, s);
  for (long k = 0; k < s.grid->n_unknowns(); ++k) {
    const Mat& hs = df.hess[static_cast<std::size_t>(k)];
    if (!hs.allFinite()) continue;
    CHECK(hs.cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((df.grad[static_cast<std::size_t>(k)] - vec2(0.7, -0.2)).norm() <= 1e-10);
  }
}

TEST_CASE("discrete maximum principle on random sign-definite problems") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 6; ++trial) {
    nlohmann::json j = {{"dimension", 2}, {"noise_dimension", 2}, {"k0", 100}, {"domain", {{"type", "ball"}, {"radius", 1}}}};
    j["controls"] = nlohmann::json::array();
    for (int a = 0; a < 3; ++a) {
      const double q1 = u(rng), q2 = u(rng);
      j["controls"].push_back({{"sigma", {n(rng), n(rng), n(rng), n(rng)}},
                               {"b", {n(rng), n(rng)}},
                               {"c", u(rng)},
                               {"f", {{"name", "quadratic"}, {"q", {-q1, 0, 0, -q2}}, {"c", -u(rng)}}}});
    }
    j["g"] = {{"name", "constant"}, {"value", -u(rng)}};
    const ProblemSpec p = problem_from_json(j);
    const DiscreteSolution s = solve_hjb(p, 1.0 / 16, 0.3, RegConvention::Remark);
    for (double v : s.u) CHECK(v <= 1e-12);
    CHECK(s.monotone);
  }
}

TEST_CASE("TP2 solve") {
  const ProblemSpec tp2 = load_config("tp2.json");
  const double h = 1.0 / 32;
  const DiscreteSolution s = solve_hjb(tp2, h, 0.05, RegConvention::Generator);
  CHECK(std::abs(s.value_at(tp2, vec2(0, 0)) - 0.5) <= 0.02);
  const DerivativeFields df = derivative_fields(tp2, s);
  for (long k = 0; k < s.grid->n_unknowns(); ++k) {
    const Mat& hs = df.hess[static_cast<std::size_t>(k)];
    if (df.one_sided[static_cast<std::size_t>(k)] || !hs.allFinite()) continue;
    const Eigen::Matrix2d h2 = hs;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(h2);
    CHECK(es.eigenvalues().maxCoeff() == Approx(-1.0).epsilon(0.05));
  }
  const FeedbackTable ft = feedback_table(s);
  for (const Vec& x : {vec2(0, 0), vec2(0.5, 0.3), vec2(-0.7, 0.1)}) {
    const int a = ft.lookup(x);
    CHECK(a >= 0);
    CHECK(a < 32);
  }
}

TEST_CASE("Howard iteration with a spatially varying policy") {
  // Isotropic diffusion with running cost 1 against weak diffusion paying x1 + 1.
  const ProblemSpec p = parse_problem(R"({"dimension": 2, "noise_dimension": 2, "k0": 4,
      "domain": {"type": "ball", "radius": 1},
      "controls": [{"sigma": [1.4142135623730951, 0, 0, 1.4142135623730951], "f": "one"},
                   {"sigma": [0.5, 0, 0, 0.5], "c": 0.5, "f": {"name": "quadratic", "l": [1.5, 0], "c": 0.5}}]})");
  const DiscreteSolution s = solve_hjb(p, 1.0 / 32, 0.0, RegConvention::Generator);
  CHECK(s.monotone);
  CHECK(s.iterations >= 2);
  CHECK(s.residual_sup() <= 1e-9);
  int used[2] = {0, 0};
  for (int a : s.control) ++used[a];
  CHECK(used[0] > 0);
  CHECK(used[1] > 0);
  HowardOptions tight;
  tight.max_iters = 1;
  try {
    solve_hjb(p, 1.0 / 32, 0.0, RegConvention::Generator, tight);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("residual history") != std::string::npos);
  }
}

TEST_CASE("TP2 regularization continuation") {
  const ProblemSpec tp2 = load_config("tp2.json");
  const Continuation c = continuation_in_eps(tp2, 1.0 / 16, {0.2, 0.1, 0.05}, RegConvention::Remark);
  REQUIRE(c.deltas.size() == 2);
  CHECK(c.deltas[1] < c.deltas[0]);
  for (std::size_t k = 0; k < 3; ++k) {
    const double eps = 0.2 / std::pow(2.0, static_cast<double>(k));
    CHECK(c.solutions[k].value_at(tp2, vec2(0, 0)) == Approx(1.0 / (2 * (1 + 2 * eps))).epsilon(1e-9));
  }
}
