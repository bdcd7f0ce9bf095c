#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bql/quasi.hpp"
#include "support.hpp"

#include <cmath>
#include <random>

using namespace bql;
using doctest::Approx;

namespace {

ControlPoint brownian2() {
  ControlPoint c;
  c.sigma = Mat::Identity(2, 2) * std::sqrt(2.0);
  c.b = Vec::Zero(2);
  c.f = Field::constant(2, 1.0);
  return c;
}

// Level-set geometry with the given psi, normal e1 and a ball-like Hessian.
Geometry at_level(double psi) {
  Geometry g;
  g.x = vec2(0.5, 0);
  g.psi = psi;
  g.grad = vec2(-1, 0);
  g.hess = -2.0 * Mat::Identity(2, 2);
  return g;
}

}  // namespace

TEST_CASE("nu formula") {
  CHECK(BarrierParams::nu_of(1.0 / 6) == Approx(2.0 / 27));
  const BarrierParams p = BarrierParams::make(0.125, 1.0 / 6, 1.0);
  CHECK(p.delta == Approx(0.125 * 0.125 / 16));
  CHECK(p.nu == Approx(2.0 / 27));
  CHECK_THROWS_AS(BarrierParams::make(0.125, 0.4, 1.0), Error);
  CHECK_THROWS_AS(BarrierParams::make(0.125, 1.0 / 6, 0.5), Error);
  CHECK_THROWS_AS(BarrierParams::make(0.125, 1.0 / 6, 1.0, 0.5), Error);
}

TEST_CASE("boundary auxiliaries") {
  const DomainFn ball = DomainFn::ball(2, 1.0, Vec::Zero(2));
  const Geometry g = ball.eval(vec2(0.5, 0));
  const BarrierParams p = BarrierParams::make(0.125, 1.0 / 6, 1.0);
  const AuxProcesses a = aux_boundary(g, brownian2(), vec2(0, 1), 0.0, p);
  CHECK(a.r == Approx(0.0));
  CHECK(a.r_hat == Approx(0.0));
  CHECK(a.P(0, 1) == Approx(-2.0));
  CHECK(a.P(1, 0) == Approx(2.0));
  CHECK(a.P(0, 0) == 0.0);
  CHECK(a.regime == Regime::Boundary);
  const AuxProcesses b = aux_boundary(g, brownian2(), vec2(1, 0), 0.0, p);
  CHECK(b.r == Approx(-10.0 / 3));
  CHECK(b.r_hat == Approx(1.0 / (0.75 * 0.75)));
  CHECK(b.P.norm() == Approx(0.0));
  const AuxProcesses z = aux_boundary(g, brownian2(), vec2(0, 0), 0.0, p);
  CHECK(z.r == 0.0);
  CHECK(z.pi.norm() == 0.0);
  CHECK(z.P.norm() == 0.0);
  CHECK_THROWS_AS(aux_boundary(ball.eval(vec2(0, 0)), brownian2(), vec2(1, 0), 0.0, p), Error);
}

TEST_CASE("interior auxiliaries") {
  const DomainFn ball = DomainFn::ball(2, 1.0, Vec::Zero(2));
  const Geometry g = ball.eval(vec2(0.5, 0));
  const BarrierParams p = BarrierParams::make(0.125, 1.0 / 6, 1.0);
  const AuxProcesses a = aux_interior(g, brownian2(), vec2(1, 0), 0.5, p);
  CHECK(a.r == Approx(-2.0 / 9));
  CHECK(a.r_hat == 0.0);
  CHECK(a.pi(0) == Approx((2.0 / 27) * 1.75 * std::sqrt(2.0) / 0.5625));
  CHECK(a.pi(1) == Approx(0.0));
  CHECK(a.pi_hat(0) == Approx(-2.0 * 0.5 * a.pi(0)));
  CHECK(a.P.norm() == 0.0);
  CHECK(a.P_hat.norm() == 0.0);
  CHECK(a.regime == Regime::Interior);
  // psi_(xi) = 0 and (xi, sigma_k) = 0 for all k.
  ControlPoint c = brownian2();
  c.sigma = Mat::Zero(2, 2);
  c.sigma(0, 0) = 1.0;
  const AuxProcesses t = aux_interior(g, c, vec2(0, 1), 0.0, p);
  CHECK(t.r == 0.0);
  CHECK(t.pi.norm() == 0.0);
}

TEST_CASE("auxiliaries are linear in xi") {
  const ProblemSpec tp2 = normalize_domain_scale(load_config("tp2.json"));
  const BarrierParams p = BarrierParams::make(0.125, 0.25, 4.0);
  std::mt19937_64 rng(3);
  for (const auto& x : sample_domain(tp2, 30, 8)) {
    const Geometry g = tp2.domain.eval(x);
    const Vec u = random_unit_vector(rng, 2), v = random_unit_vector(rng, 2);
    const ControlPoint& c = tp2.controls[static_cast<std::size_t>(rng() % 32)];
    for (int boundary = 0; boundary < 2; ++boundary) {
      auto f = [&](const Vec& xi) {
        return boundary ? aux_boundary(g, c, xi, 0.0, p) : aux_interior(g, c, xi, 0.0, p);
      };
      const AuxProcesses au = f(u), av = f(v), a2 = f(Vec(2.0 * u)), auv = f(Vec(u + v));
      CHECK(a2.r == Approx(2.0 * au.r).scale(1.0));
      CHECK(auv.r == Approx(au.r + av.r).scale(1.0));
      CHECK((a2.pi - 2.0 * au.pi).norm() <= 1e-10 * (1.0 + au.pi.norm()));
      CHECK((auv.pi - au.pi - av.pi).norm() <= 1e-10 * (1.0 + au.pi.norm() + av.pi.norm()));
      CHECK((auv.P - au.P - av.P).norm() <= 1e-10 * (1.0 + au.P.norm()));
      CHECK((au.P + au.P.transpose()).norm() == 0.0);
    }
  }
}

TEST_CASE("boundary rotation identity") {
  for (const char* cfg : {"tp1.json", "tp2.json"}) {
    const ProblemSpec prob = normalize_domain_scale(load_config(cfg));
    const BarrierParams p = BarrierParams::make(0.125, 0.25, 4.0);
    std::mt19937_64 rng(17);
    for (const auto& x : sample_domain(prob, 50, 2)) {
      const Geometry g = prob.domain.eval(x);
      if (g.grad.norm() < 1e-3) continue;
      const Vec xi = 3.0 * random_unit_vector(rng, 2);
      for (const auto& c : prob.controls) {
        const AuxProcesses a = aux_boundary(g, c, xi, 0.0, p);
        for (int k = 0; k < c.sigma.cols(); ++k)
          CHECK(std::abs(pproperty_residual(g, c, xi, a, k)) <= 1e-10 * (1 + xi.norm()) * c.sigma.norm());
      }
    }
  }
}

TEST_CASE("step_quasi") {
  ControlPoint c = brownian2();
  c.b = vec2(1, 0);
  QuasiState s = QuasiState::start(vec2(1, 0), vec2(0, 0));
  AuxProcesses a = AuxProcesses::zero(2, 2);
  a.r = 1.0;
  const QuasiState o = step_quasi(s, a, c, vec2(0, 0), 0.0, vec2(0, 0), 0.1);
  CHECK(o.xi(0) == Approx(1.2));
  CHECK(o.xi(1) == Approx(0.0));

  // Zero auxiliaries leave xi, eta and the adjoint scalars unchanged.
  c.f = Field::quadratic(Mat::Identity(2, 2), vec2(0.5, 0), 0.0);
  const AuxProcesses z = AuxProcesses::zero(2, 2);
  const QuasiState s2 = QuasiState::start(vec2(0.3, 0.4), vec2(0.1, 0));
  const QuasiState o2 = step_quasi(s2, z, c, vec2(0.2, 0.1), 0.7, vec2(0.03, -0.02), 0.01);
  CHECK(o2.xi == s2.xi);
  CHECK(o2.eta == s2.eta);
  CHECK(o2.xi_tilde == 0.0);
  CHECK(o2.eta_tilde == 0.0);
  CHECK(o2.xi_d3 == Approx(std::exp(-0.7) * c.f.directional(vec2(0.2, 0.1), s2.xi) * 0.01));
}

TEST_CASE("adjoint scalar cancellation") {
  ControlPoint c = brownian2();
  QuasiState s = QuasiState::start(vec2(1, 0), vec2(0, 0));
  s.xi_tilde = 0.37;
  s.xi_d2 = 0.37;
  AuxProcesses a = AuxProcesses::zero(2, 2);
  a.pi = vec2(0.4, -1.1);
  a.pi_hat = -2.0 * s.xi_tilde * a.pi;
  const QuasiState o = step_quasi(s, a, c, vec2(0, 0), 0.0, vec2(0.05, 0.02), 0.001);
  CHECK(o.eta_tilde == Approx(0.0).epsilon(1e-15));
  CHECK(o.eta_d2 == Approx(0.0).epsilon(1e-15));
  CHECK(o.xi_d2 == o.xi_tilde);
}

TEST_CASE("adjoint scalars stay null along glued paths") {
  const ProblemSpec tp1 = normalize_domain_scale(load_config("tp1.json"));
  const BarrierParams p = BarrierParams::make(std::pow(2.0, -6), 0.25, 16.0);
  const double dt = 1e-4;
  for (int k = 0; k < 20; ++k) {
    GluedPath g(tp1, 0, p, vec2(0.3, 0.2), vec2(0, 1), vec2(0, 0));
    NoiseStream ns(77, k);
    for (int s = 0; s < 2000; ++s) {
      if (tp1.domain.psi(g.x) <= p.delta) break;
      g.prepare();
      g.advance(ns.increments(2, dt), dt);
      CHECK(g.q.xi_d2 == g.q.xi_tilde);
    }
    CHECK(std::abs(g.q.eta_tilde) <= 10 * dt);
    CHECK(std::abs(g.q.eta_d2) <= 10 * dt);
  }
}

TEST_CASE("regime hysteresis") {
  const BarrierParams p = BarrierParams::make(0.125, 1.0 / 6, 1.0);
  SwitchAutomaton a;
  update_regime(a, 0.125 * 0.125 / 2, p, 0.3);
  CHECK(a.regime == Regime::Boundary);
  REQUIRE(a.switch_times.size() == 1);
  CHECK(a.switch_times[0] == 0.3);
  update_regime(a, (0.125 * 0.125 + 0.125) / 2, p, 0.4);
  CHECK(a.regime == Regime::Boundary);
  CHECK(a.switch_times.size() == 1);
  update_regime(a, 0.125, p, 0.5);
  CHECK(a.regime == Regime::Interior);
  update_regime(a, 0.05, p, 0.6);
  CHECK(a.regime == Regime::Interior);
  SwitchAutomaton b;
  update_regime(b, 0.001, p, 0.0);
  CHECK(b.regime == Regime::Boundary);
  CHECK(b.switch_times == std::vector<double>{0.0});
}

TEST_CASE("barrier values") {
  const double lam = 0.125;
  const BarrierParams p = BarrierParams::make(lam, 1.0 / 6, 1.0);
  const Vec tangent = vec2(0, 1);
  CHECK(barrier_B1(at_level(lam), vec2(0, 0), p) == 0.0);
  CHECK(barrier_B1(at_level(lam), tangent, p) == Approx(lam * (0.75 + lam) * 35.0 / 32));
  CHECK(barrier_B1(at_level(lam), tangent, p) == Approx(0.11963).epsilon(1e-4));
  CHECK(barrier_B1(at_level(lam * lam), tangent, p) ==
        Approx(lam * lam * (2 - lam / 4) * (1 + (lam - lam * lam / 4) / 8)));
  CHECK(barrier_B2(at_level(lam), vec2(0, 0), p) == 0.0);
  const Vec xi = vec2(0.6, 0.8);
  const double q1 = 1.0 * 1.0 + 0.36 / lam, q2 = 1.0 + 0.36 / (lam * lam);
  CHECK(barrier_B2(at_level(lam), xi, p) == Approx(std::pow(lam, 1 + 1.0 / 6) * q1));
  CHECK(barrier_B2(at_level(lam * lam), xi, p) == Approx(std::pow(lam, 2 - 1.0 / 6) * q2));
  CHECK_THROWS_AS(barrier_B1(at_level(0.0), xi, p), Error);
  // gamma * beta range on (0, lambda).
  for (int k = 1; k < 100; ++k) {
    const double psi = lam * k / 100.0;
    const double gb = barrier_B1(at_level(psi), tangent, p);
    CHECK(gb > lam * lam);
    CHECK(gb <= (lam * lam + 0.75 * lam) * 35.0 / 32 + 1e-15);
  }
}

TEST_CASE("barrier envelopes") {
  const double lam = 0.125;
  const BarrierParams p = BarrierParams::make(lam, 1.0 / 6, 1.0);
  const Vec xi = vec2(0.6, 0.8);
  const Geometry strip = at_level(lam * lam / 2), inner = at_level(0.5), mid = at_level(lam / 2);
  const Envelopes es = barrier_envelopes(strip, xi, p);
  CHECK(es.upper == barrier_B1(strip, xi, p));
  CHECK(es.lower == barrier_B1(strip, xi, p));
  const Envelopes ei = barrier_envelopes(inner, xi, p);
  CHECK(ei.upper == barrier_B2(inner, xi, p));
  CHECK(ei.lower == barrier_B2(inner, xi, p));
  const Envelopes em = barrier_envelopes(mid, xi, p);
  const double b1 = barrier_B1(mid, xi, p), b2 = barrier_B2(mid, xi, p);
  CHECK(em.upper == Approx(b1 + b2));
  CHECK(em.lower == std::min(b1, b2));
  CHECK_THROWS_AS(barrier_envelopes(at_level(p.delta / 2), xi, p), Error);
}

TEST_CASE("generator drift") {
  const ProblemSpec tp1 = normalize_domain_scale(load_config("tp1.json"));
  const BarrierParams p = BarrierParams::make(0.125, 0.25, 16.0);
  const ControlPoint& c = tp1.controls[0];
  for (Barrier b : {Barrier::B1, Barrier::B2}) {
    const Regime r = b == Barrier::B1 ? Regime::Boundary : Regime::Interior;
    CHECK(std::abs(generator_drift(tp1, c, tp1.domain, vec2(0.3, 0.2), vec2(0, 0), 0.0, r, p, b, 1.0)) <= 1e-8);
  }
  // Exact jets agree with finite differences at interior points.
  std::mt19937_64 rng(4);
  for (const auto& x : sample_domain(tp1, 20, 5)) {
    const Vec xi = random_unit_vector(rng, 2);
    const double psi = tp1.domain.psi(x);
    if (psi < 0.5) continue;
    const double exact = generator_drift(tp1, c, tp1.domain, x, xi, 0.0, Regime::Interior, p, Barrier::B2, 1.0);
    const double fd = generator_drift_fd(c, tp1.domain, x, xi, Regime::Interior, p, Barrier::B2, 1.0, 1e-4);
    CHECK(fd == Approx(exact).epsilon(1e-4).scale(1e-6));
  }
}

TEST_CASE("switching example at lambda = 1/8 fails") {
  const DomainFn ball = DomainFn::ball(2, 1.0, Vec::Zero(2));
  const BarrierParams p = BarrierParams::make(0.125, 1.0 / 6, 1.0);
  const SwitchingReport r = switching_check(ball, p, 50, 1);
  CHECK_FALSE(r.pass);
  CHECK(r.min_b1_minus_4b2 <= 0.11963 - 4 * std::pow(0.125, 7.0 / 6) + 1e-4);
}

TEST_CASE("calibration") {
  const ProblemSpec tp1 = normalize_domain_scale(load_config("tp1.json"));
  CHECK_THROWS_AS(calibrate_lambda(tp1, 0, 1), Error);
  CalibrationGrid grid;
  grid.lambda_log2_min = 20;
  grid.lambda_log2_max = 30;
  const Calibration cal = calibrate_lambda(tp1, 200, 5, grid);
  CHECK(cal.switching.pass);
  CHECK(cal.strip.violations == 0);
  CHECK(cal.interior.violations == 0);
  CHECK(cal.params.lambda >= std::pow(2.0, -30));
  const auto cert = cal.certificate();
  for (const char* key : {"lambda", "theta", "k1", "nu", "drift_max_strip", "drift_max_interior", "switching_margins",
                          "n_samples", "seed"})
    CHECK(cert.contains(key));
  // Drift condition violated: calibration fails.
  const ProblemSpec small = tp1.with_domain(tp1.domain.with_scale(1.0 / 32));
  CalibrationGrid coarse;
  coarse.lambda_log2_max = 10;
  CHECK_THROWS_AS(calibrate_lambda(small, 100, 5, coarse), Error);
}
