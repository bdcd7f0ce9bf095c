#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bql/value_mc.hpp"
#include "support.hpp"

#include <cmath>
#include <sstream>

using namespace bql;
using doctest::Approx;

namespace {

McConfig mc(std::uint64_t seed, double dt = 1e-3) {
  McConfig c;
  c.seed = seed;
  c.sim.dt = dt;
  c.threads = 1;
  return c;
}

QuasiRunConfig qrun(std::uint64_t seed) {
  QuasiRunConfig q;
  q.dt = 1e-3;
  q.params = BarrierParams::make(std::pow(2.0, -26), 0.25, 16.0);
  q.seed = seed;
  q.threads = 1;
  return q;
}

}  // namespace

TEST_CASE("make_estimate") {
  const Estimate e = make_estimate({1.0, 2.0, 3.0, 4.0});
  CHECK(e.mean == Approx(2.5));
  CHECK(e.stderr_ == Approx(std::sqrt(5.0 / 3.0) / 2.0));
  CHECK(e.n_paths == 4);
  CHECK_THROWS_AS(make_estimate({1.0}), Error);
}

TEST_CASE("constant payoff one") {
  const ProblemSpec p = disk_problem("\"zero\"", "\"one\"");
  const Estimate e = estimate_value(p, {PolicyRef::constant(0)}, vec2(0.2, 0.3), 500, mc(3));
  CHECK(e.mean == 1.0);
  CHECK(e.stderr_ == 0.0);
  CHECK_THROWS_AS(estimate_value(p, {PolicyRef::constant(0)}, vec2(2, 0), 100, mc(3)), Error);
  CHECK_THROWS_AS(estimate_value(p, {}, vec2(0, 0), 100, mc(3)), Error);
}

TEST_CASE("zero regularization matches the plain estimate") {
  const ProblemSpec tp1 = load_config("tp1.json");
  const Estimate a = estimate_value(tp1, {PolicyRef::constant(0)}, vec2(0.1, 0), 300, mc(8));
  const Estimate b = estimate_value_regularized(tp1, 0.0, {PolicyRef::constant(0)}, vec2(0.1, 0), 300, mc(8));
  CHECK(a.mean == b.mean);
  CHECK(a.stderr_ == b.stderr_);
}

TEST_CASE("TP1 value at a probe") {
  const ProblemSpec tp1 = load_config("tp1.json");
  const Vec x = vec2(0.4, -0.3);
  const Estimate e = estimate_value(tp1, {PolicyRef::constant(0)}, x, 10000, mc(21));
  const double exact = (1.0 - x.squaredNorm()) / 4.0;
  CHECK(std::abs(e.mean - exact) <= 3 * e.stderr_ + 0.01);
  CHECK(e.bias_bound >= 0.0);
}

TEST_CASE("adding policies never lowers the estimate") {
  const ProblemSpec tp2 = load_config("tp2.json");
  const Estimate one = estimate_value(tp2, {PolicyRef::constant(0)}, vec2(0.1, 0.1), 300, mc(5));
  const Estimate more = estimate_value(tp2, {PolicyRef::constant(0), PolicyRef::constant(8), PolicyRef::constant(16)},
                                       vec2(0.1, 0.1), 300, mc(5));
  CHECK(more.mean >= one.mean);
  CHECK_FALSE(more.caveat.empty());
}

TEST_CASE("finite differences") {
  const ProblemSpec tp1 = load_config("tp1.json");
  const std::vector<PolicySpec> pol{PolicyRef::constant(0)};
  const auto z = fd_directional(tp1, pol, vec2(0, 0), vec2(0, 0), {0.1}, 200, mc(2), FdOrder::First);
  CHECK(z[0].mean == 0.0);
  const auto z2 = fd_directional(tp1, pol, vec2(0, 0), vec2(0, 0), {0.1}, 200, mc(2), FdOrder::Second);
  CHECK(z2[0].mean == 0.0);
  const auto d1 = fd_directional(tp1, pol, vec2(0, 0), vec2(1, 0), {0.1}, 20000, mc(2), FdOrder::First);
  CHECK(std::abs(d1[0].mean - (-0.025)) <= 3 * d1[0].stderr_ + 0.01);
  CHECK_THROWS_AS(fd_directional(tp1, pol, vec2(0.95, 0), vec2(1, 0), {0.1}, 10, mc(2), FdOrder::First), Error);
  CHECK_THROWS_AS(fd_directional(tp1, pol, vec2(0, 0), vec2(1, 0), {0.0}, 10, mc(2), FdOrder::First), Error);
}

TEST_CASE("second difference of a linear value vanishes") {
  // f = 0, g = x1: v = x1.
  const ProblemSpec p = disk_problem("\"zero\"", R"({"name": "quadratic", "l": [1, 0]})");
  const auto d2 = fd_directional(p, {PolicyRef::constant(0)}, vec2(0.1, 0.2), vec2(0.6, 0.8), {0.2}, 4000, mc(6),
                                 FdOrder::Second);
  CHECK(std::abs(d2[0].mean) <= 3 * d2[0].stderr_ + 1e-12);
}

TEST_CASE("common random numbers reduce the variance of differences") {
  const ProblemSpec tp1 = load_config("tp1.json");
  const std::vector<PolicySpec> pol{PolicyRef::constant(0)};
  const auto crn = fd_directional(tp1, pol, vec2(0.2, 0), vec2(1, 0), {0.1}, 2000, mc(4), FdOrder::First, true);
  const auto ind = fd_directional(tp1, pol, vec2(0.2, 0), vec2(1, 0), {0.1}, 2000, mc(4), FdOrder::First, false);
  CHECK(crn[0].stderr_ < ind[0].stderr_);
}

TEST_CASE("coupling errors vanish without auxiliaries or displacement") {
  const ProblemSpec tp1 = normalize_domain_scale(load_config("tp1.json"));
  StopSpec stop;
  stop.T = 1.0;
  stop.delta = 0.5;
  QuasiRunConfig off = qrun(3);
  off.disable_aux = true;
  const auto e = coupling_first(tp1, vec2(0.2, 0.1), vec2(0, 1), {0.2, 0.1}, stop, 200, off);
  for (const auto& est : e) CHECK(est.mean <= 1e-10);
  const auto e2 = coupling_second(tp1, vec2(0.2, 0.1), vec2(0, 1), vec2(0, 0), {0.2, 0.1}, stop, 200, off);
  for (const auto& est : e2) CHECK(est.mean <= 1e-8);
  const auto z = coupling_first(tp1, vec2(0.2, 0.1), vec2(0, 0), {0.2}, stop, 200, qrun(3));
  CHECK(z[0].mean == 0.0);
}

TEST_CASE("representation at zero displacement is the Dynkin identity") {
  const ProblemSpec tp1 = normalize_domain_scale(load_config("tp1.json"));
  StopSpec stop;
  stop.T = 5.0;
  stop.delta = 0.5;
  const Field v = *tp1.exact_value;
  const RepresentationReport r = representation_first(tp1, vec2(0.3, 0), vec2(0, 1), 0.0, stop, 4000, qrun(9), &v);
  CHECK(r.lhs == Approx(v.value(vec2(0.3, 0))));
  CHECK(r.abs_diff <= r.tolerance);
  CHECK(r.pass);
  CHECK_THROWS_AS(representation_first(tp1, vec2(0.3, 0), vec2(0, 1), 0.1, stop, 10, qrun(9), nullptr), Error);
  QuasiRunConfig off = qrun(9);
  off.disable_aux = true;
  const RepresentationReport s = representation_first(tp1, vec2(0.3, 0), vec2(0, 1), 0.1, stop, 4000, off, &v);
  CHECK(s.pass);
}

TEST_CASE("exit moments near the boundary") {
  const ProblemSpec p = load_config("tp1_d1.json");
  const auto m = exit_moments(p, vec1(0.999), {1, 2}, 2000, mc(1, 1e-5));
  CHECK(m[0].bound == Approx(1.0 - 0.999 * 0.999));
  CHECK(m[0].moment.mean <= m[0].bound + 3 * m[0].moment.stderr_);
  CHECK(m[1].moment.mean <= m[1].bound + 3 * m[1].moment.stderr_);
}

TEST_CASE("results csv") {
  std::ostringstream os;
  ResultRow row;
  row.experiment = "value";
  row.x = vec2(0.5, -0.25);
  row.xi = vec2(1, 0);
  row.estimate = make_estimate({1.0, 3.0});
  row.seed = 7;
  write_results_csv(os, {row});
  const std::string s = os.str();
  CHECK(s.rfind("experiment,x,xi,eps,mean,stderr,bias_bound,n_paths,seed\n", 0) == 0);
  CHECK(s.find("0.5;-0.25") != std::string::npos);
}
