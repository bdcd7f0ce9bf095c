#include "bql/bql.h"

#include "bql/harness.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <new>
#include <sstream>

struct bql_problem {
  bql::ProblemSpec spec;
  nlohmann::json raw;
};

struct bql_hjb {
  bql::ProblemSpec problem;
  bql::DiscreteSolution solution;
};

namespace {

thread_local std::string g_last_error;

template <class F>
int guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return BQL_OK;
  } catch (const bql::Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("$: ") + e.what();
    return BQL_E_CONFIG;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return BQL_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return BQL_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return BQL_E_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) throw bql::Error(bql::ErrorCode::InvalidArgument, std::string(what) + " is null");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

bql::Vec point(const double* x, int d) {
  need(x, "x");
  bql::Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = x[i];
  return v;
}

nlohmann::json parse(const char* text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw bql::Error(bql::ErrorCode::Config, std::string("$: invalid JSON: ") + e.what());
  }
}

bql_problem* make_problem(nlohmann::json raw) {
  auto p = std::make_unique<bql_problem>();
  p->spec = bql::problem_from_json(raw);
  p->raw = std::move(raw);
  return p.release();
}

bql::Vec vec_opt(const nlohmann::json& j, const char* key, const bql::Vec& def) {
  if (!j.contains(key)) return def;
  const auto v = j.at(key).get<std::vector<double>>();
  if (static_cast<int>(v.size()) != def.size())
    throw bql::Error(bql::ErrorCode::Config, std::string("$.") + key + ": dimension mismatch");
  bql::Vec out(def.size());
  for (int i = 0; i < out.size(); ++i) out(i) = v[static_cast<std::size_t>(i)];
  return out;
}

}  // namespace

extern "C" {

const char* bql_version(void) { return "1.0.0"; }

const char* bql_last_error(void) { return g_last_error.c_str(); }

const char* bql_status_name(int status) {
  switch (status) {
    case BQL_OK: return "ok";
    case BQL_E_INVALID_ARGUMENT: return "invalid_argument";
    case BQL_E_CONFIG: return "config";
    case BQL_E_DOMAIN: return "domain";
    case BQL_E_NUMERIC: return "numeric";
    case BQL_E_CALIBRATION: return "calibration";
    case BQL_E_CAPABILITY: return "capability";
    case BQL_E_UNDERPOWERED: return "underpowered";
    case BQL_E_IO: return "io";
    case BQL_E_UNKNOWN_CHECK: return "unknown_check";
    case BQL_E_INTERNAL: return "internal";
  }
  return "unknown";
}

void bql_string_free(char* s) { std::free(s); }

int bql_problem_load(const char* path, bql_problem** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    std::ifstream in(path);
    if (!in) throw bql::Error(bql::ErrorCode::Io, std::string("cannot open '") + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    *out = make_problem(parse(ss.str().c_str()));
  });
}

int bql_problem_parse(const char* json_text, bql_problem** out) {
  return guard([&] {
    need(json_text, "json_text");
    need(out, "out");
    *out = make_problem(parse(json_text));
  });
}

void bql_problem_free(bql_problem* p) { delete p; }

int bql_problem_dim(const bql_problem* p, int* d) {
  return guard([&] {
    need(p, "problem");
    need(d, "d");
    *d = p->spec.d;
  });
}

int bql_problem_controls(const bql_problem* p, int* n) {
  return guard([&] {
    need(p, "problem");
    need(n, "n");
    *n = static_cast<int>(p->spec.controls.size());
  });
}

int bql_problem_psi(const bql_problem* p, const double* x, double* psi) {
  return guard([&] {
    need(p, "problem");
    need(psi, "psi");
    *psi = p->spec.domain.psi(point(x, p->spec.d));
  });
}

int bql_problem_normalize(const bql_problem* p, bql_problem** out) {
  return guard([&] {
    need(p, "problem");
    need(out, "out");
    auto q = std::make_unique<bql_problem>(*p);
    q->spec = bql::normalize_domain_scale(p->spec);
    *out = q.release();
  });
}

int bql_value(const bql_problem* p, const double* x, long n_paths, double dt, double eps, int policy, uint64_t seed,
              int threads, bql_estimate* out) {
  return guard([&] {
    need(p, "problem");
    need(out, "out");
    const int nc = static_cast<int>(p->spec.controls.size());
    if (policy < -1 || policy >= nc) throw bql::Error(bql::ErrorCode::InvalidArgument, "policy out of range");
    std::vector<bql::PolicySpec> pol;
    if (policy >= 0)
      pol.push_back(bql::PolicyRef::constant(policy));
    else
      for (int k = 0; k < nc; ++k) pol.push_back(bql::PolicyRef::constant(k));
    bql::McConfig mc;
    mc.sim.dt = dt;
    mc.seed = seed;
    mc.threads = threads;
    const bql::Vec x0 = point(x, p->spec.d);
    const bql::Estimate e = eps < 0.0 ? bql::estimate_value(p->spec, pol, x0, n_paths, mc)
                                      : bql::estimate_value_regularized(p->spec, eps, pol, x0, n_paths, mc);
    *out = bql_estimate{e.mean, e.stderr_, e.bias_bound, e.n_paths};
  });
}

int bql_simulate(const bql_problem* p, const double* x, int n_paths, double dt, int control, uint64_t seed,
                 char** csv) {
  return guard([&] {
    need(p, "problem");
    need(csv, "csv");
    if (n_paths < 1) throw bql::Error(bql::ErrorCode::InvalidArgument, "n_paths must be >= 1");
    if (control < 0 || control >= static_cast<int>(p->spec.controls.size()))
      throw bql::Error(bql::ErrorCode::InvalidArgument, "control out of range");
    bql::SimConfig sc;
    sc.dt = dt;
    sc.trace = true;
    sc.policy = bql::PolicyRef::constant(control);
    sc.validate();
    const bql::Vec x0 = point(x, p->spec.d);
    std::ostringstream os;
    for (int i = 0; i < n_paths; ++i) {
      bql::NoiseStream noise(seed, static_cast<std::uint64_t>(i));
      const bql::PathRecord rec = bql::simulate_path(p->spec, sc, x0, noise);
      std::ostringstream one;
      bql::write_trace_csv(one, rec, p->spec.d);
      std::istringstream lines(one.str());
      std::string line;
      bool header = true;
      while (std::getline(lines, line)) {
        if (header) {
          if (i == 0) os << "path," << line << '\n';
          header = false;
          continue;
        }
        os << i << ',' << line << '\n';
      }
    }
    *csv = dup(os.str());
  });
}

int bql_quasicheck(const bql_problem* p, const char* options_json, uint64_t seed, int threads, char** csv) {
  return guard([&] {
    need(p, "problem");
    need(csv, "csv");
    const nlohmann::json o = options_json ? parse(options_json) : nlohmann::json::object();
    const bql::ProblemSpec prob = bql::normalize_domain_scale(p->spec);
    const int d = prob.d;
    bql::Vec xi_def = bql::Vec::Zero(d);
    xi_def(d - 1) = 1.0;
    const bql::Vec x = vec_opt(o, "x", bql::Vec::Zero(d));
    const bql::Vec xi = vec_opt(o, "xi", xi_def);
    const auto eps = o.value("eps", std::vector<double>{0.2, 0.1, 0.05});
    bql::StopSpec st;
    st.T = o.value("T", 5.0);
    st.delta = o.value("delta", 0.5);
    const long paths = o.value("paths", 2000L);
    const bql::Calibration cal = bql::calibrate_lambda(prob, 1000, bql::derive_seed(seed, "calibration"));
    bql::QuasiRunConfig qc;
    qc.dt = o.value("dt", 1e-3);
    qc.params = cal.params;
    qc.threads = threads;
    std::vector<bql::ResultRow> rows;
    qc.seed = bql::derive_seed(seed, "coupling_first");
    const auto c1 = bql::coupling_first(prob, x, xi, eps, st, paths, qc);
    for (std::size_t k = 0; k < eps.size(); ++k) rows.push_back({"coupling_first", x, xi, eps[k], c1[k], qc.seed});
    qc.seed = bql::derive_seed(seed, "coupling_second");
    const auto c2 = bql::coupling_second(prob, x, xi, bql::Vec::Zero(d), eps, st, paths, qc);
    for (std::size_t k = 0; k < eps.size(); ++k) rows.push_back({"coupling_second", x, xi, eps[k], c2[k], qc.seed});
    qc.seed = bql::derive_seed(seed, "girsanov_normalization");
    bql::StopSpec gst = st;
    gst.T = o.value("girsanov_T", 1.0);
    for (double e : eps)
      rows.push_back({"girsanov_normalization", x, xi, e, bql::girsanov_normalization(prob, x, xi, e, gst, paths, qc), qc.seed});
    if (prob.exact_value && prob.controls.size() == 1) {
      qc.seed = bql::derive_seed(seed, "representation_first");
      for (double e : eps) {
        const auto r = bql::representation_first(prob, x, xi, e, st, paths, qc, &*prob.exact_value);
        rows.push_back({"representation_first", x, xi, e, r.rhs, qc.seed});
        bql::Estimate lhs;
        lhs.mean = r.lhs;
        lhs.n_paths = 0;
        rows.push_back({"representation_exact", x, xi, e, lhs, qc.seed});
      }
    }
    std::ostringstream os;
    bql::write_results_csv(os, rows);
    *csv = dup(os.str());
  });
}

int bql_barriers(const bql_problem* p, int n_samples, uint64_t seed, char** json_out) {
  return guard([&] {
    need(p, "problem");
    need(json_out, "json_out");
    const bql::ProblemSpec prob = bql::normalize_domain_scale(p->spec);
    const bql::Calibration cal = bql::calibrate_lambda(prob, n_samples, seed);
    *json_out = dup(cal.certificate().dump(2));
  });
}

int bql_hjb_solve(const bql_problem* p, double h, double eps_reg, int convention, bql_hjb** out) {
  return guard([&] {
    need(p, "problem");
    need(out, "out");
    if (convention != BQL_REG_GENERATOR && convention != BQL_REG_REMARK)
      throw bql::Error(bql::ErrorCode::InvalidArgument, "unknown regularization convention");
    auto s = std::make_unique<bql_hjb>();
    s->problem = p->spec;
    s->solution = bql::solve_hjb(p->spec, h, eps_reg,
                                 convention == BQL_REG_GENERATOR ? bql::RegConvention::Generator : bql::RegConvention::Remark,
                                 {});
    *out = s.release();
  });
}

void bql_hjb_free(bql_hjb* s) { delete s; }

int bql_hjb_value_at(const bql_hjb* s, const double* x, double* out) {
  return guard([&] {
    need(s, "solution");
    need(out, "out");
    *out = s->solution.value_at(s->problem, point(x, s->problem.d));
  });
}

int bql_hjb_info(const bql_hjb* s, int* iterations, double* residual_sup, long* unknowns) {
  return guard([&] {
    need(s, "solution");
    if (iterations) *iterations = s->solution.iterations;
    if (residual_sup) *residual_sup = s->solution.residual_sup();
    if (unknowns) *unknowns = s->solution.grid->n_unknowns();
  });
}

int bql_hjb_csv(const bql_hjb* s, char** csv) {
  return guard([&] {
    need(s, "solution");
    need(csv, "csv");
    std::ostringstream os;
    bql::write_solution_csv(os, s->solution);
    *csv = dup(os.str());
  });
}

int bql_hjb_estimates(const bql_hjb* s, double kappa, char** json_out) {
  return guard([&] {
    need(s, "solution");
    need(json_out, "json_out");
    const auto f = bql::derivative_fields(s->problem, s->solution);
    const auto r = bql::estimate_checks(s->problem, s->solution, f, kappa);
    nlohmann::json mu = nlohmann::json::array();
    for (const auto& [xi, m] : r.mu_used) {
      std::vector<double> v(xi.data(), xi.data() + xi.size());
      mu.push_back({{"xi", v}, {"mu", m}});
    }
    const nlohmann::json j = {{"n_e1", r.n_e1},
                              {"n_e3_lower", r.n_e3_lower},
                              {"n_e3_upper", r.e3_upper_applicable ? nlohmann::json(r.n_e3_upper) : nlohmann::json("inapplicable")},
                              {"n_e2", r.n_e2},
                              {"e2_min_eig", r.e2_min_eig},
                              {"e2_nodes", r.e2_nodes},
                              {"kappa", kappa},
                              {"mu", mu}};
    *json_out = dup(j.dump(2));
  });
}

int bql_verify(const bql_problem* p, const char* suite_json, int64_t seed, int threads, char** report_json,
               char** summary, int* outcome) {
  return guard([&] {
    need(p, "problem");
    nlohmann::json sj;
    if (suite_json)
      sj = parse(suite_json);
    else if (p->raw.contains("suite"))
      sj = p->raw.at("suite");
    else
      throw bql::Error(bql::ErrorCode::Config, "$.suite: missing");
    bql::SuiteConfig sc = bql::SuiteConfig::from_json(sj);
    if (seed >= 0) sc.master_seed = static_cast<std::uint64_t>(seed);
    if (threads > 0) sc.threads = threads;
    const auto results = bql::run_suite(p->spec, sc);
    if (report_json) *report_json = dup(bql::suite_report(results).dump(2) + "\n");
    if (summary) *summary = dup(bql::summary_line(results));
    if (outcome) *outcome = results.empty() ? BQL_SUITE_EMPTY : bql::all_pass(results) ? BQL_SUITE_PASS : BQL_SUITE_FAIL;
  });
}

int bql_registered_checks(char** json_list) {
  return guard([&] {
    need(json_list, "json_list");
    *json_list = dup(nlohmann::json(bql::registered_checks()).dump());
  });
}

}  // extern "C"
