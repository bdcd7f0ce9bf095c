#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "support.hpp"

#include <cmath>

using namespace bql;
using nlohmann::json;

namespace {

Estimate est(double mean, double se, long n = 100) {
  Estimate e;
  e.mean = mean;
  e.stderr_ = se;
  e.n_paths = n;
  return e;
}

}  // namespace

TEST_CASE("one sided bound test") {
  CHECK(one_sided_bound_test(est(0.5, 0.01), 1.0, 0.0).pass);
  CHECK_FALSE(one_sided_bound_test(est(1.2, 0.01), 1.0, 0.05).pass);
  const CheckResult tie = one_sided_bound_test(est(1.375, 0.125), 1.0, 0.0);
  CHECK(tie.statistic == tie.threshold);
  CHECK(tie.pass);
  CHECK(tie.kind == CheckKind::Statistical);
  CHECK(tie.n == 100);
  try {
    one_sided_bound_test(est(0.5, 0.01, 29), 1.0, 0.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Underpowered);
  }
  CHECK_THROWS_AS(one_sided_bound_test(std::vector<double>(29, 0.0), 1.0, 0.0), Error);
  CHECK(one_sided_bound_test(std::vector<double>(30, 0.0), 0.0, 0.0).pass);
}

TEST_CASE("trend test") {
  CHECK(trend_test({0.3, 0.2, 0.1}, 0).pass);
  CHECK_FALSE(trend_test({0.3, 0.35, 0.1}, 0, 0.01).pass);
  CHECK(trend_test({0.3, 0.301, 0.1}, 0, 0.005).pass);
  CHECK(trend_test({0.3, 0.35, 0.1}, 1, 0.01).pass);
  CHECK(trend_test({0.3, 0.301, 0.1}, {0.004, 0.004, 0.004}, 0).pass);
  CHECK_FALSE(trend_test({0.3, 0.35, 0.1}, {0.01, 0.01, 0.01}, 0).pass);
  CHECK_THROWS_AS(trend_test({0.3, 0.2}, 0), Error);
  CHECK_THROWS_AS(trend_test({0.3, 0.2, 0.1}, {0.1, 0.1}, 0), Error);
  CHECK(trend_test({0.3, 0.2, 0.1}, 0).kind == CheckKind::Trend);
}

TEST_CASE("suite configuration") {
  const SuiteConfig c = SuiteConfig::from_json(json{{"master_seed", 7}, {"checks", {"hjb_oracle", {{"id", "value_oracle"}}}}});
  CHECK(c.master_seed == 7);
  CHECK(c.checks.size() == 2);
  CHECK(c.checks[0].at("id") == "hjb_oracle");
  CHECK_THROWS_AS(SuiteConfig::from_json(json{{"checks", 3}}), Error);
  CHECK_THROWS_AS(SuiteConfig::from_json(json{{"checks", {{{"paths", 3}}}}}), Error);
  CHECK_THROWS_AS(SuiteConfig::from_json(json::array()), Error);
}

TEST_CASE("unknown check and empty suite") {
  const ProblemSpec tp1 = load_config("tp1.json");
  SuiteConfig bad;
  bad.checks = json::array({json{{"id", "hjb_oracle"}}, json{{"id", "no_such_check"}}});
  try {
    run_suite(tp1, bad);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownCheck);
  }
  const auto none = run_suite(tp1, SuiteConfig{});
  CHECK(none.empty());
  CHECK(summary_line(none) == "no checks");
  CHECK_FALSE(all_pass(none));
  CHECK(suite_report(none) == json::array());
}

TEST_CASE("registered checks") {
  const auto ids = registered_checks();
  for (const char* id : {"value_oracle", "exit_moments", "value_bound", "drift_certificate", "switching_certificate",
                         "pproperty_identity", "girsanov_normalization", "representation_first", "coupling_first",
                         "coupling_second", "eta_tilde_nullity", "hjb_oracle", "regularization_trend",
                         "mc_pde_crossval", "estimate_fitting", "supermartingale_mc"})
    CHECK(std::find(ids.begin(), ids.end(), id) != ids.end());
}

TEST_CASE("suite runs are reproducible and never abort on a failing check") {
  const ProblemSpec tp1 = load_config("tp1.json");
  SuiteConfig c;
  c.master_seed = 42;
  c.checks = json::array({json{{"id", "hjb_oracle"}, {"h", -1.0}},
                          json{{"id", "switching_certificate"}, {"samples", 100}},
                          json{{"id", "hjb_oracle"}, {"h", 0.0625}, {"eps_reg", 0.0}, {"convention", "generator"},
                               {"tol", 0.005}}});
  const auto a = run_suite(tp1, c);
  const auto b = run_suite(tp1, c);
  REQUIRE(a.size() >= 3);
  CHECK_FALSE(a[0].pass);
  CHECK(a[0].detail.contains("error"));
  CHECK(a[0].check_id == "hjb_oracle");
  CHECK(a.back().pass);
  CHECK(suite_report(a).dump() == suite_report(b).dump());
  CHECK_FALSE(all_pass(a));
  long passed = 0;
  for (const auto& r : a) {
    passed += r.pass;
    CHECK_FALSE(r.provenance.empty());
    const json j = r.to_json();
    for (const char* key : {"check_id", "kind", "statistic", "threshold", "pass", "seed", "provenance"})
      CHECK(j.contains(key));
    if (r.kind == CheckKind::Statistical) {
      CHECK(j.contains("stderr"));
      CHECK(j.contains("n"));
    }
    if (r.kind == CheckKind::Deterministic) CHECK(j.contains("tolerance"));
  }
  CHECK(summary_line(a) == "PASS " + std::to_string(passed) + "/" + std::to_string(a.size()));
  // Seeds derive from the master seed and the check id.
  CHECK(a.back().seed == derive_seed(42, "hjb_oracle"));
  SuiteConfig other = c;
  other.master_seed = 43;
  CHECK(run_suite(tp1, other).back().seed != a.back().seed);
}
