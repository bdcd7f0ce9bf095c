#pragma once

#include "bql/hjb.hpp"
#include "bql/value_mc.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace bql {

enum class CheckKind { Deterministic, Statistical, Trend };
const char* check_kind_name(CheckKind k);

// pass iff statistic <= threshold ("le"), >= threshold ("ge") or < threshold ("lt").
struct CheckResult {
  std::string check_id;
  CheckKind kind = CheckKind::Deterministic;
  double statistic = 0.0;
  double threshold = 0.0;
  std::string relation = "le";
  bool pass = false;
  std::uint64_t seed = 0;
  std::string provenance;
  double stderr_ = 0.0;     // statistical checks
  long n = 0;               // statistical checks: samples
  double tolerance = 0.0;   // deterministic checks: machine tolerance used
  nlohmann::json detail = nlohmann::json::object();
  double wall_seconds = 0.0;  // not serialized
  nlohmann::json to_json() const;
};

// pass iff mean <= bound + 3 stderr + slack.
CheckResult one_sided_bound_test(const std::vector<double>& samples, double bound, double slack);
CheckResult one_sided_bound_test(const Estimate& estimate, double bound, double slack);

// pass iff at most tolerance_inversions adjacent increases exceed stderr.
CheckResult trend_test(const std::vector<double>& values, int tolerance_inversions, double stderr_ = 0.0);
CheckResult trend_test(const std::vector<double>& values, const std::vector<double>& stderrs, int tolerance_inversions);

struct SuiteConfig {
  std::uint64_t master_seed = 42;
  int threads = 0;
  nlohmann::json checks = nlohmann::json::array();  // [{"id": ..., params...}]
  static SuiteConfig from_json(const nlohmann::json& j);
};

std::vector<std::string> registered_checks();

// Runs every configured check in order. A check that throws is reported as a
// failed result carrying the error message; unknown ids throw UnknownCheck
// before anything runs.
std::vector<CheckResult> run_suite(const ProblemSpec& problem, const SuiteConfig& config);

nlohmann::json suite_report(const std::vector<CheckResult>& results);
std::string summary_line(const std::vector<CheckResult>& results);  // "PASS k/n" or "no checks"
bool all_pass(const std::vector<CheckResult>& results);

}  // namespace bql
