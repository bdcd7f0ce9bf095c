#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "support.hpp"

#include <cmath>
#include <limits>

using namespace bql;
using doctest::Approx;

TEST_CASE("ball psi and derivatives") {
  const DomainFn ball = DomainFn::ball(2, 1.0, Vec::Zero(2));
  const Geometry g = ball.eval(vec2(0.5, 0));
  CHECK(g.psi == Approx(0.75));
  CHECK(g.grad(0) == Approx(-1.0));
  CHECK(g.grad(1) == Approx(0.0));
  CHECK(g.hess(0, 0) == Approx(-2.0));
  CHECK(g.hess(1, 1) == Approx(-2.0));
  CHECK(g.hess(0, 1) == Approx(0.0));
  CHECK(ball.psi(vec2(0.6, 0.8)) == Approx(0.0).epsilon(1e-15));
  const Geometry s = ball.with_scale(4.0).eval(vec2(0.5, 0));
  CHECK(s.psi == Approx(3.0));
  CHECK(s.grad(0) == Approx(-4.0));
}

TEST_CASE("levelset domains agree with their finite-difference derivatives") {
  for (const auto& name : DomainFn::registered_levelsets()) {
    const DomainFn dom = DomainFn::levelset(name, vec2(1.0, 0.7));
    for (const Vec& x : {vec2(0.1, 0.2), vec2(-0.4, 0.1), vec2(0.3, -0.3)}) {
      const Geometry a = dom.eval(x), b = dom.eval_fd(x);
      CHECK(a.psi == Approx(b.psi));
      for (int i = 0; i < 2; ++i) {
        CHECK(a.grad(i) == Approx(b.grad(i)).epsilon(1e-6));
        for (int j = 0; j < 2; ++j) CHECK(a.hess(i, j) == Approx(b.hess(i, j)).epsilon(1e-4).scale(1.0));
      }
      CHECK(a.hess(0, 1) == a.hess(1, 0));
    }
  }
  CHECK_THROWS_AS(DomainFn::levelset("no-such-shape", vec2(1, 1)), Error);
}

TEST_CASE("drift condition") {
  const ProblemSpec tp1 = load_config("tp1.json");
  const auto xs = sample_domain(tp1, 200, 3);
  const DriftReport r = check_drift_condition(tp1, xs);
  CHECK(r.pass);
  CHECK(r.max_drift == Approx(-4.0));
  const ProblemSpec small = tp1.with_domain(tp1.domain.with_scale(1.0 / 8));
  const DriftReport s = check_drift_condition(small, xs);
  CHECK_FALSE(s.pass);
  CHECK(s.max_drift == Approx(-0.5));
  const DriftReport e = check_drift_condition(tp1, {});
  CHECK(e.pass);
  CHECK(e.max_drift == -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(check_drift_condition(tp1, {vec2(2, 0)}), Error);
}

TEST_CASE("normalize domain scale") {
  const ProblemSpec tp1 = load_config("tp1.json");
  const ProblemSpec n = normalize_domain_scale(tp1);
  CHECK(n.domain.scale() == Approx(4.0));
  // Membership unchanged, margin reached, idempotent.
  for (const auto& x : sample_domain(tp1, 100, 9)) CHECK(n.inside(x));
  const DriftReport r = check_drift_condition(n, sample_domain(n, 200, 4));
  CHECK(r.max_drift <= -16.0 + 1e-12);
  CHECK(normalize_domain_scale(n).domain.scale() == Approx(4.0));
  // Drift condition violated: cannot normalize.
  const ProblemSpec small = tp1.with_domain(tp1.domain.with_scale(1.0 / 8));
  CHECK_THROWS_AS(normalize_domain_scale(small), Error);
}

TEST_CASE("orthogonal invariance") {
  const ProblemSpec tp1 = load_config("tp1.json");
  const ProblemSpec tp2 = load_config("tp2.json");
  CHECK(check_orthogonal_invariance(tp1, {rotation2(0.3), rotation2(1.7)}, 1e-12).max_defect == Approx(0.0).epsilon(1e-14));
  const InvarianceReport step = check_orthogonal_invariance(tp2, {rotation2(2 * M_PI / 32)}, 1e-9);
  CHECK(step.pass);
  CHECK(step.max_defect < 1e-12);
  const InvarianceReport half = check_orthogonal_invariance(tp2, {rotation2(M_PI / 32)}, 1e-9);
  CHECK_FALSE(half.pass);
  CHECK(half.max_defect > 1e-3);
  Mat bad(2, 2);
  bad << 1, 0.1, 0, 1;
  CHECK_THROWS_AS(check_orthogonal_invariance(tp1, {bad}, 1e-9), Error);
}

TEST_CASE("nondegeneracy") {
  const ProblemSpec tp1 = load_config("tp1.json");
  const NondegeneracyReport r1 = nondegeneracy(tp1, 64, {vec2(2, 0)});
  CHECK(r1.mu == Approx(1.0));
  CHECK(r1.mu_of_xi[0].second == Approx(0.25));
  const ProblemSpec tp2 = load_config("tp2.json");
  const NondegeneracyReport r2 = nondegeneracy(tp2, 256, {vec2(1, 0), vec2(0.3, 0.4)});
  CHECK(r2.mu >= std::pow(std::cos(M_PI / 32), 2) - 1e-9);
  CHECK(r2.mu <= 1.0 + 1e-12);
  // mu(xi) |xi|^2 stays within the grid band and is homogeneous of degree -2.
  for (const Vec& xi : {vec2(1, 0), vec2(0.3, 0.4), vec2(-1, 2)}) {
    const double m = mu_of_direction(tp2, xi);
    CHECK(m * xi.squaredNorm() >= std::pow(std::cos(M_PI / 32), 2) - 1e-6);
    CHECK(m * xi.squaredNorm() <= 1.0 + 1e-6);
    for (double t : {0.5, 2.0}) CHECK(mu_of_direction(tp2, Vec(t * xi)) == Approx(m / (t * t)).epsilon(1e-6));
  }
  const ProblemSpec zero = parse_problem(R"({"dimension": 2, "noise_dimension": 2, "k0": 2, "domain": {"type": "ball", "radius": 1},
      "controls": [{"sigma": [0, 0, 0, 0]}]})");
  CHECK(nondegeneracy(zero, 16, {}).mu == 0.0);
  CHECK_THROWS_AS(nondegeneracy(tp1, 64, {vec2(0, 0)}), Error);
  CHECK_THROWS_AS(nondegeneracy(tp1, 4, {}), Error);
}

TEST_CASE("diffusion matrices are positive semidefinite") {
  const ProblemSpec tp2 = load_config("tp2.json");
  for (const auto& c : tp2.controls) {
    const Eigen::MatrixXd a = c.a();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);
    CHECK((a - a.transpose()).norm() == 0.0);
  }
}

TEST_CASE("region labels") {
  const DomainFn ball = DomainFn::ball(2, 1.0, Vec::Zero(2)).with_scale(4.0);
  const double lam = 1.0 / 8, delta = lam * lam / 16;
  CHECK(region(ball, Vec::Zero(2), delta, lam) == RegionLabel::Interior);
  CHECK(region_of_psi(lam / 2, delta, lam) == RegionLabel::Overlap);
  CHECK(region_of_psi(delta / 2, delta, lam) == RegionLabel::OutsideDelta);
  CHECK(region_of_psi(lam * lam, delta, lam) == RegionLabel::BoundaryStrip);
  CHECK(region_of_psi(lam, delta, lam) == RegionLabel::Interior);
  CHECK_THROWS_AS(region_of_psi(0.5, 0.1, 0.2), Error);
  // Exactly one label per sample of D_delta.
  int counts[4] = {0, 0, 0, 0};
  for (int k = 1; k <= 2000; ++k) {
    const double psi = delta * std::pow(4.0 / delta, k / 2000.0);
    ++counts[static_cast<int>(region_of_psi(psi, delta, lam))];
  }
  CHECK(counts[0] + counts[1] + counts[2] == 2000);
  CHECK(counts[3] == 0);
}

TEST_CASE("config errors name the field") {
  try {
    parse_problem(R"({"dimension": 2, "noise_dimension": 2, "k0": 2, "domain": {"type": "ball", "radius": 1},
        "controls": [{"sigma": [1, 0, 0]}]})");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
    CHECK(std::string(e.what()).find("controls[0].sigma") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_problem(R"({"dimension": 2, "noise_dimension": 2, "k0": 2, "domain": {"type": "ball", "radius": 1},
      "controls": [{"sigma": [1, 0, 0, 1], "c": -1}]})"), Error);
  CHECK_THROWS_AS(parse_problem(R"({"dimension": 2, "noise_dimension": 2, "k0": 2, "domain": {"type": "ball", "radius": 1},
      "controls": []})"), Error);
  CHECK_THROWS_AS(parse_problem(R"({"dimension": 2, "noise_dimension": 2, "k0": 1, "domain": {"type": "ball", "radius": 1},
      "controls": [{"sigma": [3, 0, 0, 3]}]})"), Error);
}

TEST_CASE("problem json round trip") {
  const ProblemSpec tp2 = load_config("tp2.json");
  const ProblemSpec back = problem_from_json(problem_to_json(tp2));
  CHECK(back.controls.size() == 32);
  CHECK(back.controls[5].sigma.isApprox(tp2.controls[5].sigma));
}

TEST_CASE("levelset json round trip keeps psi") {
  const ProblemSpec p = parse_problem(R"({"dimension": 2, "noise_dimension": 2, "k0": 4, "domain": {"type": "levelset",
      "expression": "quartic", "axes": [1.0, 0.5], "scale": 3}, "controls": [{"sigma": [1, 0, 0, 1]}]})");
  const ProblemSpec back = problem_from_json(problem_to_json(p));
  CHECK(back.domain.psi(vec2(0.2, 0.1)) == Approx(p.domain.psi(vec2(0.2, 0.1))));
  CHECK(back.domain.scale() == 3.0);
}
