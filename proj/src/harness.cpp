#include "bql/harness.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <tuple>

namespace bql {

using nlohmann::json;

const char* check_kind_name(CheckKind k) {
  switch (k) {
    case CheckKind::Deterministic: return "DETERMINISTIC";
    case CheckKind::Statistical: return "STATISTICAL";
    case CheckKind::Trend: return "TREND";
  }
  return "?";
}

json CheckResult::to_json() const {
  json j;
  j["check_id"] = check_id;
  j["kind"] = check_kind_name(kind);
  j["statistic"] = statistic;
  j["relation"] = relation;
  j["threshold"] = threshold;
  j["pass"] = pass;
  j["seed"] = seed;
  j["provenance"] = provenance;
  if (kind == CheckKind::Statistical) {
    j["stderr"] = stderr_;
    j["n"] = n;
  } else {
    j["tolerance"] = tolerance;
  }
  j["detail"] = detail;
  return j;
}

namespace {

void decide(CheckResult& r) {
  r.pass = r.relation == "ge" ? r.statistic >= r.threshold : r.statistic <= r.threshold;
  if (std::isnan(r.statistic) || std::isnan(r.threshold)) r.pass = false;
}

}  // namespace

CheckResult one_sided_bound_test(const Estimate& e, double bound, double slack) {
  if (e.n_paths < 30) throw Error(ErrorCode::Underpowered, "one_sided_bound_test: n < 30");
  CheckResult r;
  r.kind = CheckKind::Statistical;
  r.statistic = e.mean;
  r.threshold = bound + 3.0 * e.stderr_ + slack;
  r.stderr_ = e.stderr_;
  r.n = e.n_paths;
  r.detail = {{"bound", bound}, {"slack", slack}};
  decide(r);
  return r;
}

CheckResult one_sided_bound_test(const std::vector<double>& samples, double bound, double slack) {
  if (samples.size() < 30) throw Error(ErrorCode::Underpowered, "one_sided_bound_test: n < 30");
  return one_sided_bound_test(make_estimate(samples), bound, slack);
}

CheckResult trend_test(const std::vector<double>& values, const std::vector<double>& stderrs, int tolerance_inversions) {
  if (values.size() < 3) throw Error(ErrorCode::InvalidArgument, "trend_test: need at least 3 values");
  if (stderrs.size() != values.size()) throw Error(ErrorCode::InvalidArgument, "trend_test: stderr list length mismatch");
  int inversions = 0;
  for (std::size_t k = 0; k + 1 < values.size(); ++k) {
    const double noise = std::sqrt(stderrs[k] * stderrs[k] + stderrs[k + 1] * stderrs[k + 1]);
    if (values[k + 1] > values[k] + noise) ++inversions;
  }
  CheckResult r;
  r.kind = CheckKind::Trend;
  r.statistic = inversions;
  r.threshold = tolerance_inversions;
  r.detail = {{"values", values}, {"stderrs", stderrs}, {"direction", "decreasing"}};
  decide(r);
  return r;
}

CheckResult trend_test(const std::vector<double>& values, int tolerance_inversions, double stderr_) {
  if (values.size() < 3) throw Error(ErrorCode::InvalidArgument, "trend_test: need at least 3 values");
  int inversions = 0;
  for (std::size_t k = 0; k + 1 < values.size(); ++k)
    if (values[k + 1] > values[k] + stderr_) ++inversions;
  CheckResult r;
  r.kind = CheckKind::Trend;
  r.statistic = inversions;
  r.threshold = tolerance_inversions;
  r.stderr_ = stderr_;
  r.detail = {{"values", values}, {"stderr", stderr_}, {"direction", "decreasing"}};
  decide(r);
  return r;
}

SuiteConfig SuiteConfig::from_json(const json& j) {
  SuiteConfig c;
  if (!j.is_object()) throw Error(ErrorCode::Config, "suite: must be an object");
  if (j.contains("master_seed")) c.master_seed = j.at("master_seed").get<std::uint64_t>();
  if (j.contains("threads")) c.threads = j.at("threads").get<int>();
  if (j.contains("checks")) {
    if (!j.at("checks").is_array()) throw Error(ErrorCode::Config, "suite.checks: must be an array");
    c.checks = j.at("checks");
  }
  for (std::size_t k = 0; k < c.checks.size(); ++k) {
    auto& e = c.checks[k];
    if (e.is_string()) e = json{{"id", e}};
    if (!e.is_object() || !e.contains("id") || !e.at("id").is_string())
      throw Error(ErrorCode::Config, "suite.checks[" + std::to_string(k) + "].id: missing or not a string");
  }
  return c;
}

namespace {

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Ctx {
  ProblemSpec problem;
  std::uint64_t master = 42;
  int threads = 0;
  std::optional<Calibration> calibration;
  std::map<std::tuple<double, double, int>, DiscreteSolution> hjb_cache;

  const Calibration& cal() {
    if (!calibration) calibration = calibrate_lambda(problem, 1000, derive_seed(master, "calibration"));
    return *calibration;
  }
  const DiscreteSolution& hjb(double h, double eps, RegConvention conv) {
    const auto key = std::make_tuple(h, eps, static_cast<int>(conv));
    auto it = hjb_cache.find(key);
    if (it == hjb_cache.end()) it = hjb_cache.emplace(key, solve_hjb(problem, h, eps, conv, {})).first;
    return it->second;
  }
};

double num(const json& p, const char* key, double def) { return p.contains(key) ? p.at(key).get<double>() : def; }
long count(const json& p, const char* key, long def) { return p.contains(key) ? p.at(key).get<long>() : def; }
std::string str(const json& p, const char* key, const std::string& def) {
  return p.contains(key) ? p.at(key).get<std::string>() : def;
}
std::vector<double> nums(const json& p, const char* key, std::vector<double> def) {
  return p.contains(key) ? p.at(key).get<std::vector<double>>() : def;
}
Vec vec(const json& p, const char* key, const Vec& def) {
  if (!p.contains(key)) return def;
  const auto v = p.at(key).get<std::vector<double>>();
  if (static_cast<int>(v.size()) != def.size())
    throw Error(ErrorCode::Config, std::string("suite check parameter ") + key + ": dimension mismatch");
  Vec out(def.size());
  for (int i = 0; i < out.size(); ++i) out(i) = v[static_cast<std::size_t>(i)];
  return out;
}
json to_j(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}
Vec last_axis(int d) {
  Vec e = Vec::Zero(d);
  e(d - 1) = 1.0;
  return e;
}
RegConvention convention(const json& p, RegConvention def) {
  const std::string s = str(p, "convention", def == RegConvention::Generator ? "generator" : "remark");
  if (s == "generator") return RegConvention::Generator;
  if (s == "remark") return RegConvention::Remark;
  throw Error(ErrorCode::Config, "suite check parameter convention: expected generator or remark");
}

CheckResult make(const std::string& id, CheckKind kind, double stat, const std::string& rel, double thr) {
  CheckResult r;
  r.check_id = id;
  r.kind = kind;
  r.statistic = stat;
  r.relation = rel;
  r.threshold = thr;
  decide(r);
  return r;
}

std::vector<PolicySpec> policies(Ctx& ctx, const json& p) {
  const std::string which = str(p, "policies", "constants");
  std::vector<PolicySpec> out;
  if (which == "constants" || which == "constants+feedback")
    for (std::size_t k = 0; k < ctx.problem.controls.size(); ++k) out.push_back(PolicyRef::constant(static_cast<int>(k)));
  if (which == "feedback" || which == "constants+feedback") {
    const auto& sol = ctx.hjb(num(p, "h", 1.0 / 64), num(p, "eps_reg", 0.05), convention(p, RegConvention::Generator));
    out.push_back(PolicyRef::feedback(std::make_shared<const FeedbackTable>(feedback_table(sol))));
  }
  if (out.empty()) throw Error(ErrorCode::Config, "suite check parameter policies: expected constants, feedback or constants+feedback");
  return out;
}

McConfig mc_config(Ctx& ctx, const json& p, std::uint64_t seed) {
  McConfig mc;
  mc.sim.dt = num(p, "dt", 1e-3);
  mc.seed = seed;
  mc.threads = ctx.threads;
  return mc;
}

QuasiRunConfig quasi_config(Ctx& ctx, const json& p, std::uint64_t seed) {
  QuasiRunConfig qc;
  qc.dt = num(p, "dt", 1e-3);
  qc.params = ctx.cal().params;
  qc.seed = seed;
  qc.threads = ctx.threads;
  return qc;
}

StopSpec stop_spec(const json& p, double T) {
  StopSpec st;
  st.T = num(p, "T", T);
  st.delta = num(p, "delta", 0.5);
  st.n_cap = num(p, "n_cap", 1e3);
  return st;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

using CheckFn = std::function<std::vector<CheckResult>(Ctx&, const json&, std::uint64_t)>;

struct Registered {
  std::string provenance;
  CheckFn fn;
};

std::vector<CheckResult> check_value_oracle(Ctx& ctx, const json& p, std::uint64_t seed) {
  if (!ctx.problem.exact_value) throw Error(ErrorCode::Capability, "value_oracle: problem has no exact value");
  const Vec x = vec(p, "x", Vec::Zero(ctx.problem.d));
  const Estimate e = estimate_value(ctx.problem, policies(ctx, p), x, count(p, "paths", 100000), mc_config(ctx, p, seed));
  const double exact = ctx.problem.exact_value->value(x);
  CheckResult r = make("value_oracle", CheckKind::Statistical, std::abs(e.mean - exact), "le",
                       3.0 * e.stderr_ + num(p, "slack", 0.01));
  r.stderr_ = e.stderr_;
  r.n = e.n_paths;
  r.detail = {{"x", to_j(x)}, {"mean", e.mean}, {"exact", exact}, {"bias_bound", e.bias_bound}, {"caveat", e.caveat}};
  return {r};
}

std::vector<CheckResult> check_exit_moments(Ctx& ctx, const json& p, std::uint64_t seed) {
  const Vec x = vec(p, "x", Vec::Zero(ctx.problem.d));
  const auto targets = nums(p, "targets", {});
  const int n_max = static_cast<int>(count(p, "n_max", static_cast<long>(std::max<std::size_t>(targets.size(), 2))));
  std::vector<int> ns;
  for (int n = 1; n <= n_max; ++n) ns.push_back(n);
  const auto m = exit_moments(ctx.problem, x, ns, count(p, "paths", 100000), mc_config(ctx, p, seed));
  std::vector<CheckResult> out;
  for (std::size_t k = 0; k < m.size(); ++k) {
    const auto& me = m[k];
    const std::string tag = "n=" + std::to_string(me.n);
    if (k < targets.size()) {
      CheckResult r = make("exit_moments/oracle_" + tag, CheckKind::Statistical, std::abs(me.moment.mean - targets[k]), "le",
                           3.0 * me.moment.stderr_ + num(p, "slack", 0.01));
      r.stderr_ = me.moment.stderr_;
      r.n = me.moment.n_paths;
      r.detail = {{"mean", me.moment.mean}, {"target", targets[k]}};
      out.push_back(r);
    }
    CheckResult b = one_sided_bound_test(me.moment, me.bound, 0.0);
    b.check_id = "exit_moments/bound_" + tag;
    b.detail["mean"] = me.moment.mean;
    out.push_back(b);
  }
  return out;
}

std::vector<CheckResult> check_value_bound(Ctx& ctx, const json& p, std::uint64_t seed) {
  const int n_probes = static_cast<int>(count(p, "probes", 16));
  const auto xs = sample_domain(ctx.problem, n_probes, derive_seed(seed, "probes"));
  const auto pol = policies(ctx, p);
  const ProblemBounds pb = problem_bounds(ctx.problem);
  const long paths = count(p, "paths", 4000);
  double worst = -std::numeric_limits<double>::infinity();
  long n_min = std::numeric_limits<long>::max();
  json probes = json::array();
  for (int k = 0; k < n_probes; ++k) {
    const Vec& x = xs[static_cast<std::size_t>(k)];
    const Estimate e = estimate_value(ctx.problem, pol, x, paths, mc_config(ctx, p, derive_seed(seed, "probe-" + std::to_string(k))));
    if (e.n_paths < 30) throw Error(ErrorCode::Underpowered, "value_bound: n < 30");
    const double bound = pb.g_sup + ctx.problem.domain.psi(x) * pb.f_sup;
    const double excess = std::abs(e.mean) - bound - 3.0 * e.stderr_;
    worst = std::max(worst, excess);
    n_min = std::min(n_min, e.n_paths);
    probes.push_back({{"x", to_j(x)}, {"mean", e.mean}, {"stderr", e.stderr_}, {"bound", bound}});
  }
  CheckResult r = make("value_bound", CheckKind::Statistical, worst, "le", 0.0);
  r.n = n_min;
  r.detail = {{"statistic", "max over probes of |mean| - bound - 3 stderr"}, {"probes", probes}};
  return {r};
}

std::vector<CheckResult> check_drift(Ctx& ctx, const json& p, std::uint64_t seed) {
  const auto& bp = ctx.cal().params;
  const int n = static_cast<int>(count(p, "samples", 1000));
  const double tol = num(p, "tol", 1e-8);
  const double psi_top = ctx.problem.domain.psi(ctx.problem.domain.anchor());
  std::vector<CheckResult> out;
  const auto one = [&](const char* id, Barrier b, double lo, double hi, const char* tag) {
    const DriftCertificate c = drift_certificate(ctx.problem, bp, b, bp.kappa, lo, hi, n, derive_seed(seed, tag), tol);
    CheckResult r = make(id, CheckKind::Deterministic, c.normalized_max, "le", tol);
    r.tolerance = tol;
    r.detail = {{"drift_max", c.drift_max}, {"violations", c.violations}, {"evaluations", c.n_evaluations},
                {"worst_psi", c.worst_psi}, {"psi_range", {lo, hi}}, {"lambda", bp.lambda}, {"theta", bp.theta}, {"k1", bp.k1}};
    out.push_back(r);
  };
  one("drift_certificate/strip", Barrier::B1, bp.delta, bp.lambda, "strip");
  one("drift_certificate/interior", Barrier::B2, bp.lambda * bp.lambda, 0.999 * psi_top, "interior");
  return out;
}

std::vector<CheckResult> check_switching(Ctx& ctx, const json& p, std::uint64_t seed) {
  const auto& bp = ctx.cal().params;
  const SwitchingReport s = switching_check(ctx.problem.domain, bp, static_cast<int>(count(p, "samples", 1000)), seed);
  CheckResult a = make("switching_certificate/level_lambda", CheckKind::Deterministic, s.min_b1_minus_4b2, "ge", 0.0);
  CheckResult b = make("switching_certificate/level_lambda2", CheckKind::Deterministic, s.min_b2_minus_4b1, "ge", 0.0);
  a.detail = {{"samples", s.n_samples}, {"lambda", bp.lambda}};
  b.detail = a.detail;
  return {a, b};
}

std::vector<CheckResult> check_pproperty(Ctx& ctx, const json& p, std::uint64_t seed) {
  const auto& bp = ctx.cal().params;
  const int n = static_cast<int>(count(p, "samples", 1000));
  const double tol = num(p, "tol", 1e-10);
  const ProblemSpec& pr = ctx.problem;
  const double psi_top = pr.domain.psi(pr.domain.anchor());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double worst = 0.0;
  long evals = 0;
  for (int k = 0; k < n; ++k) {
    // psi log-uniform over [delta, psi_top) so the strip is well represented.
    const double level = bp.delta * std::pow(0.999 * psi_top / bp.delta, u01(rng));
    const Geometry g = sample_level_point(pr.domain, level, random_unit_vector(rng, pr.d));
    const Vec xi = random_unit_vector(rng, pr.d);
    for (const auto& c : pr.controls) {
      const AuxProcesses aux = aux_boundary(g, c, xi, 0.0, bp);
      for (int col = 0; col < pr.d1; ++col) {
        worst = std::max(worst, std::abs(pproperty_residual(g, c, xi, aux, col)));
        ++evals;
      }
    }
  }
  CheckResult r = make("pproperty_identity", CheckKind::Deterministic, worst, "le", tol);
  r.tolerance = tol;
  r.detail = {{"samples", n}, {"evaluations", evals}};
  return {r};
}

std::vector<CheckResult> check_girsanov(Ctx& ctx, const json& p, std::uint64_t seed) {
  const Vec x = vec(p, "x", Vec::Zero(ctx.problem.d));
  const Vec xi = vec(p, "xi", last_axis(ctx.problem.d));
  const double eps = num(p, "eps", 0.1);
  const Estimate e = girsanov_normalization(ctx.problem, x, xi, eps, stop_spec(p, 1.0), count(p, "paths", 100000),
                                            quasi_config(ctx, p, seed));
  CheckResult r = make("girsanov_normalization", CheckKind::Statistical, std::abs(e.mean - 1.0), "le", 3.0 * e.stderr_);
  r.stderr_ = e.stderr_;
  r.n = e.n_paths;
  r.detail = {{"mean", e.mean}, {"eps", eps}, {"delta", num(p, "delta", 0.5)}};
  return {r};
}

std::vector<CheckResult> check_representation(Ctx& ctx, const json& p, std::uint64_t seed) {
  if (!ctx.problem.exact_value) throw Error(ErrorCode::Capability, "representation_first: problem has no exact value");
  const Vec x = vec(p, "x", Vec::Zero(ctx.problem.d));
  const Vec xi = vec(p, "xi", last_axis(ctx.problem.d));
  std::vector<CheckResult> out;
  for (double eps : nums(p, "eps", {0.1, 0.0})) {
    const auto rep = representation_first(ctx.problem, x, xi, eps, stop_spec(p, 5.0), count(p, "paths", 20000),
                                          quasi_config(ctx, p, derive_seed(seed, "eps=" + fmt(eps))),
                                          &*ctx.problem.exact_value, num(p, "slack", 0.01));
    CheckResult r = make("representation_first/eps=" + fmt(eps), CheckKind::Statistical, rep.abs_diff, "le", rep.tolerance);
    r.stderr_ = rep.rhs.stderr_;
    r.n = rep.rhs.n_paths;
    r.detail = {{"lhs", rep.lhs}, {"rhs", rep.rhs.mean}};
    out.push_back(r);
  }
  return out;
}

std::vector<CheckResult> coupling_results(const std::string& id, const std::vector<Estimate>& es, double scale,
                                          const json& p, const std::vector<double>& eps) {
  std::vector<double> means, ses;
  for (const auto& e : es) {
    means.push_back(e.mean);
    ses.push_back(e.stderr_);
  }
  CheckResult t = trend_test(means, ses, static_cast<int>(count(p, "inversions", 1)));
  t.check_id = id + "/trend";
  t.detail["eps"] = eps;
  const double ratio = num(p, "terminal_ratio", 0.1);
  CheckResult f = make(id + "/terminal", CheckKind::Statistical, means.back(), "le", ratio * scale);
  f.stderr_ = ses.back();
  f.n = es.back().n_paths;
  f.detail = {{"initial_scale", scale}, {"ratio", ratio}};
  return {t, f};
}

std::vector<CheckResult> check_coupling_first(Ctx& ctx, const json& p, std::uint64_t seed) {
  const Vec x = vec(p, "x", Vec::Zero(ctx.problem.d));
  const Vec xi = vec(p, "xi", last_axis(ctx.problem.d));
  const auto eps = nums(p, "eps", {0.2, 0.1, 0.05});
  const auto es = coupling_first(ctx.problem, x, xi, eps, stop_spec(p, 5.0), count(p, "paths", 2000), quasi_config(ctx, p, seed));
  return coupling_results("coupling_first", es, xi.norm(), p, eps);
}

std::vector<CheckResult> check_coupling_second(Ctx& ctx, const json& p, std::uint64_t seed) {
  const Vec x = vec(p, "x", Vec::Zero(ctx.problem.d));
  const Vec xi = vec(p, "xi", last_axis(ctx.problem.d));
  const Vec eta = vec(p, "eta", Vec::Zero(ctx.problem.d));
  const auto eps = nums(p, "eps", {0.2, 0.1, 0.05});
  const auto es = coupling_second(ctx.problem, x, xi, eta, eps, stop_spec(p, 5.0), count(p, "paths", 2000),
                                  quasi_config(ctx, p, seed));
  return coupling_results("coupling_second", es, xi.squaredNorm() + eta.norm(), p, eps);
}

std::vector<CheckResult> check_nullity(Ctx& ctx, const json& p, std::uint64_t seed) {
  const Vec x = vec(p, "x", Vec::Zero(ctx.problem.d));
  const Vec xi = vec(p, "xi", last_axis(ctx.problem.d));
  const QuasiRunConfig qc = quasi_config(ctx, p, seed);
  const NullityReport n = eta_tilde_nullity(ctx.problem, x, xi, stop_spec(p, 5.0), count(p, "paths", 1000), qc);
  CheckResult r = make("eta_tilde_nullity", CheckKind::Deterministic, std::max(n.max_eta_tilde, n.max_eta_d2), "le", 10.0 * qc.dt);
  r.tolerance = 10.0 * qc.dt;
  r.detail = {{"max_eta_tilde", n.max_eta_tilde}, {"max_eta_d2", n.max_eta_d2}, {"max_eta_tilde_ito", n.max_eta_tilde_ito},
              {"paths", n.n_paths}, {"steps", n.total_steps}};
  return {r};
}

std::vector<CheckResult> check_hjb_oracle(Ctx& ctx, const json& p, std::uint64_t) {
  const double h = num(p, "h", 1.0 / 64);
  const double eps = num(p, "eps_reg", 0.0);
  const Vec x = vec(p, "x", Vec::Zero(ctx.problem.d));
  double target;
  if (p.contains("target"))
    target = p.at("target").get<double>();
  else if (ctx.problem.exact_value)
    target = ctx.problem.exact_value->value(x);
  else
    throw Error(ErrorCode::Capability, "hjb_oracle: no target and no exact value");
  const auto& sol = ctx.hjb(h, eps, convention(p, RegConvention::Generator));
  const double u = sol.value_at(ctx.problem, x);
  const double tol = num(p, "tol", 0.005);
  CheckResult a = make("hjb_oracle/value", CheckKind::Deterministic, std::abs(u - target), "le", tol);
  a.tolerance = tol;
  a.detail = {{"u", u}, {"target", target}, {"h", h}, {"eps_reg", eps}, {"residual_sup", sol.residual_sup()},
              {"unknowns", sol.grid->n_unknowns()}};
  CheckResult b = make("hjb_oracle/howard_steps", CheckKind::Deterministic, sol.iterations, "le",
                       static_cast<double>(count(p, "max_howard", 50)));
  b.detail = {{"monotone", sol.monotone}, {"residual_history", sol.residual_history}};
  return {a, b};
}

std::vector<CheckResult> check_regularization(Ctx& ctx, const json& p, std::uint64_t) {
  const auto eps = nums(p, "eps", {0.2, 0.1, 0.05, 0.025});
  const Continuation c =
      continuation_in_eps(ctx.problem, num(p, "h", 1.0 / 64), eps, convention(p, RegConvention::Remark), {});
  CheckResult r = trend_test(c.deltas, static_cast<int>(count(p, "inversions", 0)), 0.0);
  r.check_id = "regularization_trend";
  r.detail["eps"] = eps;
  return {r};
}

std::vector<CheckResult> check_crossval(Ctx& ctx, const json& p, std::uint64_t seed) {
  const double h = num(p, "h", 1.0 / 64);
  const auto& sol = ctx.hjb(h, num(p, "eps_reg", 0.05), convention(p, RegConvention::Generator));
  const int n_probes = static_cast<int>(count(p, "probes", 10));
  const double psi_top = ctx.problem.domain.psi(ctx.problem.domain.anchor());
  const double min_frac = num(p, "min_psi_fraction", 0.25);
  std::vector<Vec> xs;
  for (const auto& x : sample_domain(ctx.problem, 50 * n_probes, derive_seed(seed, "probes"))) {
    if (ctx.problem.domain.psi(x) >= min_frac * psi_top) xs.push_back(x);
    if (static_cast<int>(xs.size()) == n_probes) break;
  }
  if (static_cast<int>(xs.size()) < n_probes) throw Error(ErrorCode::Domain, "mc_pde_crossval: not enough interior probes");
  const auto pol = policies(ctx, p);
  const double slack = num(p, "slack_h", 5.0) * h;
  double worst = -std::numeric_limits<double>::infinity();
  long n_min = std::numeric_limits<long>::max();
  json probes = json::array();
  for (int k = 0; k < n_probes; ++k) {
    const Vec& x = xs[static_cast<std::size_t>(k)];
    const Estimate e = estimate_value(ctx.problem, pol, x, count(p, "paths", 1000),
                                      mc_config(ctx, p, derive_seed(seed, "probe-" + std::to_string(k))));
    const double u = sol.value_at(ctx.problem, x);
    worst = std::max(worst, std::abs(e.mean - u) - 3.0 * e.stderr_ - slack);
    n_min = std::min(n_min, e.n_paths);
    probes.push_back({{"x", to_j(x)}, {"mc", e.mean}, {"stderr", e.stderr_}, {"pde", u}});
  }
  CheckResult r = make("mc_pde_crossval", CheckKind::Statistical, worst, "le", 0.0);
  r.n = n_min;
  r.detail = {{"statistic", "max over probes of |mc - pde| - 3 stderr - slack"}, {"slack", slack}, {"probes", probes}};
  return {r};
}

std::vector<CheckResult> check_estimates(Ctx& ctx, const json& p, std::uint64_t) {
  const double h = num(p, "h", 1.0 / 64);
  const double eps = num(p, "eps_reg", 0.05);
  const double kappa = num(p, "kappa", 1.0);
  const RegConvention conv = convention(p, RegConvention::Generator);
  const auto& coarse = ctx.hjb(h, eps, conv);
  const EstimateReport rc = estimate_checks(ctx.problem, coarse, derivative_fields(ctx.problem, coarse), kappa);
  const auto& fine = ctx.hjb(h / 2, eps, conv);
  const auto ffine = derivative_fields(ctx.problem, fine);
  const EstimateReport rf = estimate_checks(ctx.problem, fine, ffine, kappa);
  // e2: constant fitted on the coarse grid, certified on the fine grid.
  const EstimateReport rcert = estimate_checks(ctx.problem, fine, ffine, kappa, rc.n_e2);
  const double max_ratio = num(p, "max_ratio", 2.0);
  std::vector<CheckResult> out;
  const auto stability = [&](const std::string& id, double a, double b) {
    const double ratio = a == b ? 1.0 : std::max(a, b) / std::min(a, b);
    CheckResult r = make(id, CheckKind::Deterministic, ratio, "lt", max_ratio);
    r.pass = a == b || ratio < max_ratio;
    r.detail = {{"n_h", a}, {"n_h2", b}, {"h", h}};
    out.push_back(r);
  };
  stability("estimate_fitting/e1", rc.n_e1, rf.n_e1);
  stability("estimate_fitting/e3_lower", rc.n_e3_lower, rf.n_e3_lower);
  if (rc.e3_upper_applicable && rf.e3_upper_applicable) {
    stability("estimate_fitting/e3_upper", rc.n_e3_upper, rf.n_e3_upper);
  } else {
    CheckResult r = make("estimate_fitting/e3_upper", CheckKind::Deterministic, 0.0, "le", 0.0);
    r.detail = {{"inapplicable", "mu = 0 in a tested direction"}};
    out.push_back(r);
  }
  // mu at the tested directions, taken from the nondegeneracy report.
  std::vector<Vec> dirs;
  json mus = json::array();
  for (const auto& [xi, m] : rc.mu_used) dirs.push_back(xi);
  const NondegeneracyReport nd = nondegeneracy(ctx.problem, static_cast<int>(count(p, "mu_dirs", 256)), dirs);
  double mismatch = 0.0;
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    mismatch = std::max(mismatch, std::abs(nd.mu_of_xi[k].second - rc.mu_used[k].second));
    mus.push_back({{"xi", to_j(dirs[k])}, {"mu", nd.mu_of_xi[k].second}});
  }
  const double mu_lo = num(p, "mu_lower", std::pow(std::cos(M_PI / 32), 2));
  CheckResult m = make("estimate_fitting/mu_range", CheckKind::Deterministic, nd.mu, "ge", mu_lo - 1e-9);
  m.pass = m.pass && nd.mu <= 1.0 + 1e-9 && mismatch <= 1e-9;
  m.tolerance = 1e-9;
  m.detail = {{"mu_hat", nd.mu}, {"upper", 1.0}, {"tested_directions", mus}, {"mismatch", mismatch}};
  out.push_back(m);
  const double eig_tol = num(p, "eig_factor", 10.0) * (h / 2);
  CheckResult c = make("estimate_fitting/e2_convexity", CheckKind::Deterministic, rcert.e2_min_eig, "ge", -eig_tol);
  c.tolerance = eig_tol;
  c.detail = {{"n_e2", rc.n_e2}, {"kappa", kappa}, {"nodes", rcert.e2_nodes}, {"fit_h", h}, {"certify_h", h / 2}};
  if (rcert.e2_nodes == 0) c.pass = false;
  out.push_back(c);
  return out;
}

std::vector<CheckResult> check_supermartingale(Ctx& ctx, const json& p, std::uint64_t seed) {
  const auto& bp = ctx.cal().params;
  const int n_starts = static_cast<int>(count(p, "starts", 32));
  const auto xs = sample_domain(ctx.problem, n_starts, derive_seed(seed, "starts"));
  std::mt19937_64 rng(derive_seed(seed, "directions"));
  BarrierRunConfig bc;
  bc.dt_factor = num(p, "dt_factor", 1e-3);
  bc.max_steps = count(p, "max_steps", 2000);
  bc.threads = ctx.threads;
  const double growth = num(p, "growth", 1.05), env_factor = num(p, "envelope_factor", 2.0),
               env_slack = num(p, "envelope_slack", 0.05);
  double worst_sm = -std::numeric_limits<double>::infinity(), worst_env = worst_sm;
  long n_min = std::numeric_limits<long>::max();
  json starts = json::array();
  for (int k = 0; k < n_starts; ++k) {
    const Vec xi = random_unit_vector(rng, ctx.problem.d);
    bc.seed = derive_seed(seed, "start-" + std::to_string(k));
    const BarrierRunReport r = barrier_run(ctx.problem, static_cast<int>(k % ctx.problem.controls.size()), bp,
                                           xs[static_cast<std::size_t>(k)], xi, count(p, "paths", 2000), bc);
    const CheckResult sm = one_sided_bound_test(r.b_stop, growth * r.b_start, 0.0);
    const CheckResult env = one_sided_bound_test(r.lower_stop, env_factor * r.upper_start, env_slack * r.upper_start);
    worst_sm = std::max(worst_sm, sm.statistic - sm.threshold);
    worst_env = std::max(worst_env, env.statistic - env.threshold);
    n_min = std::min(n_min, r.b_stop.n_paths);
    starts.push_back({{"x", to_j(r.x0)}, {"psi", r.psi0}, {"regime", r.regime == Regime::Interior ? "interior" : "boundary"},
                      {"b_start", r.b_start}, {"b_stop", r.b_stop.mean}, {"b_stop_stderr", r.b_stop.stderr_},
                      {"upper_start", r.upper_start}, {"lower_stop", r.lower_stop.mean}});
  }
  CheckResult a = make("supermartingale_mc", CheckKind::Statistical, worst_sm, "le", 0.0);
  a.n = n_min;
  a.detail = {{"statistic", "max over starts of mean(B stop) - growth B start - 3 stderr"}, {"growth", growth}, {"starts", starts}};
  CheckResult b = make("envelope_mc", CheckKind::Statistical, worst_env, "le", 0.0);
  b.n = n_min;
  b.detail = {{"statistic", "max over starts of mean(lower stop) - factor upper start - 3 stderr - slack"},
              {"factor", env_factor}, {"slack_fraction", env_slack}};
  return {a, b};
}

const std::map<std::string, Registered>& registry() {
  static const std::map<std::string, Registered> r = {
      {"value_oracle", {"value function representation against the exact solution", check_value_oracle}},
      {"exit_moments", {"exit-time moment bound", check_exit_moments}},
      {"value_bound", {"sup-norm bound of the value by g and psi sup f", check_value_bound}},
      {"drift_certificate", {"barrier generator drift nonpositive", check_drift}},
      {"switching_certificate", {"barrier switching inequalities on the gluing levels", check_switching}},
      {"pproperty_identity", {"boundary rotation identity", check_pproperty}},
      {"girsanov_normalization", {"likelihood ratio has unit mean", check_girsanov}},
      {"representation_first", {"first-order perturbed payoff representation", check_representation}},
      {"coupling_first", {"first-order coupling error vanishes with eps", check_coupling_first}},
      {"coupling_second", {"second-order coupling error vanishes with eps", check_coupling_second}},
      {"eta_tilde_nullity", {"adjoint second-order companion vanishes", check_nullity}},
      {"hjb_oracle", {"discrete Bellman solution against the exact solution", check_hjb_oracle}},
      {"regularization_trend", {"regularized values converge as eps decreases", check_regularization}},
      {"mc_pde_crossval", {"Monte Carlo value agrees with the discrete Bellman solution", check_crossval}},
      {"estimate_fitting", {"first and second derivative estimates and the convexity correction", check_estimates}},
      {"supermartingale_mc", {"barrier supermartingale and envelope bound", check_supermartingale}},
  };
  return r;
}

}  // namespace

std::vector<std::string> registered_checks() {
  std::vector<std::string> out;
  for (const auto& [k, v] : registry()) out.push_back(k);
  return out;
}

std::vector<CheckResult> run_suite(const ProblemSpec& problem, const SuiteConfig& config) {
  const auto& reg = registry();
  for (const auto& c : config.checks) {
    const std::string id = c.at("id").get<std::string>();
    if (!reg.count(id)) throw Error(ErrorCode::UnknownCheck, "run_suite: unknown check '" + id + "'");
  }
  problem.validate();
  Ctx ctx;
  ctx.problem = normalize_domain_scale(problem);
  ctx.master = config.master_seed;
  ctx.threads = config.threads;
  std::vector<CheckResult> out;
  for (const auto& c : config.checks) {
    const std::string id = c.at("id").get<std::string>();
    const Registered& entry = reg.at(id);
    const std::uint64_t seed = derive_seed(config.master_seed, id);
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<CheckResult> rs;
    try {
      rs = entry.fn(ctx, c, seed);
    } catch (const std::exception& e) {
      CheckResult r = make(id, CheckKind::Deterministic, std::numeric_limits<double>::quiet_NaN(), "le", 0.0);
      r.pass = false;
      r.detail = {{"error", e.what()}};
      rs = {r};
    }
    const double wall = elapsed(t0);
    for (auto& r : rs) {
      r.seed = seed;
      r.provenance = entry.provenance;
      r.wall_seconds = wall;
      out.push_back(std::move(r));
    }
  }
  return out;
}

json suite_report(const std::vector<CheckResult>& results) {
  json a = json::array();
  for (const auto& r : results) a.push_back(r.to_json());
  return a;
}

bool all_pass(const std::vector<CheckResult>& results) {
  if (results.empty()) return false;
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

std::string summary_line(const std::vector<CheckResult>& results) {
  if (results.empty()) return "no checks";
  long k = 0;
  for (const auto& r : results) k += r.pass ? 1 : 0;
  return "PASS " + std::to_string(k) + "/" + std::to_string(results.size());
}

}  // namespace bql
