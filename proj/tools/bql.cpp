// Command-line front end. Uses only the C interface in bql/bql.h.
#include "bql/bql.h"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kChecksFailed = 1, kUsage = 2, kConfig = 3, kNoChecks = 4, kRuntime = 5 };

struct Failure {
  int status;
  std::string what;
};

void ok(int status) {
  if (status != BQL_OK) throw Failure{status, bql_last_error()};
}

struct CString {
  char* p = nullptr;
  ~CString() { bql_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

struct Problem {
  bql_problem* p = nullptr;
  ~Problem() { bql_problem_free(p); }
};

struct Options {
  std::string config;
  std::int64_t seed = 42;
  long paths = -1;
  double dt = 1e-3;
  double eps = -1.0;
  double grid_h = 1.0 / 64;
  std::string out = ".";
  int threads = 0;
  std::string convention = "generator";
  std::vector<double> x;
  int control = -1;
  double kappa = 1.0;
};

void write_file(const fs::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Failure{BQL_E_IO, "cannot write '" + path.string() + "'"};
  f << body;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_manifest(const Options& o, const std::string& sub, double wall, const std::string& started) {
  json m = {{"subcommand", sub},
            {"config", o.config},
            {"master_seed", o.seed},
            {"output_dir", o.out},
            {"tool_version", bql_version()},
            {"started_utc", started},
            {"wall_seconds", wall}};
  write_file(fs::path(o.out) / ("manifest_" + sub + ".json"), m.dump(2) + "\n");
}

std::vector<double> start_point(const Options& o, int d) {
  if (o.x.empty()) return std::vector<double>(static_cast<std::size_t>(d), 0.0);
  if (static_cast<int>(o.x.size()) != d) throw Failure{BQL_E_INVALID_ARGUMENT, "--x: expected " + std::to_string(d) + " coordinates"};
  return o.x;
}

void load(const Options& o, Problem& prob) {
  if (o.config.empty()) throw Failure{BQL_E_INVALID_ARGUMENT, "--config is required"};
  ok(bql_problem_load(o.config.c_str(), &prob.p));
}

int run_simulate(const Options& o) {
  Problem prob;
  load(o, prob);
  int d = 0;
  ok(bql_problem_dim(prob.p, &d));
  const auto x = start_point(o, d);
  CString csv;
  ok(bql_simulate(prob.p, x.data(), static_cast<int>(o.paths > 0 ? o.paths : 10), o.dt, o.control < 0 ? 0 : o.control,
                  static_cast<uint64_t>(o.seed), &csv.p));
  write_file(fs::path(o.out) / "paths.csv", csv.str());
  return kOk;
}

int run_value(const Options& o) {
  Problem prob;
  load(o, prob);
  int d = 0;
  ok(bql_problem_dim(prob.p, &d));
  const auto x = start_point(o, d);
  bql_estimate e{};
  ok(bql_value(prob.p, x.data(), o.paths > 0 ? o.paths : 100000, o.dt, o.eps, o.control, static_cast<uint64_t>(o.seed),
               o.threads, &e));
  std::printf("mean,stderr\n%.10g,%.10g\n", e.mean, e.stderr_);
  std::string xs;
  for (std::size_t i = 0; i < x.size(); ++i) xs += (i ? ";" : "") + num(x[i]);
  std::string body = "experiment,x,xi,eps,mean,stderr,bias_bound,n_paths,seed\n";
  body += "value," + xs + ",," + num(o.eps < 0 ? 0.0 : o.eps) + "," + num(e.mean) + "," + num(e.stderr_) + "," +
          num(e.bias_bound) + "," + std::to_string(e.n_paths) + "," + std::to_string(o.seed) + "\n";
  write_file(fs::path(o.out) / "value.csv", body);
  return kOk;
}

int run_hjb(const Options& o) {
  Problem prob;
  load(o, prob);
  int d = 0;
  ok(bql_problem_dim(prob.p, &d));
  if (o.convention != "generator" && o.convention != "remark")
    throw Failure{BQL_E_INVALID_ARGUMENT, "--convention: expected generator or remark"};
  const double eps = o.eps < 0 ? 0.05 : o.eps;
  bql_hjb* s = nullptr;
  ok(bql_hjb_solve(prob.p, o.grid_h, eps, o.convention == "generator" ? BQL_REG_GENERATOR : BQL_REG_REMARK, &s));
  std::unique_ptr<bql_hjb, void (*)(bql_hjb*)> guard(s, bql_hjb_free);
  const auto x = start_point(o, d);
  double u = 0.0, res = 0.0;
  int iters = 0;
  long unknowns = 0;
  ok(bql_hjb_value_at(s, x.data(), &u));
  ok(bql_hjb_info(s, &iters, &res, &unknowns));
  CString csv, est;
  ok(bql_hjb_csv(s, &csv.p));
  ok(bql_hjb_estimates(s, o.kappa, &est.p));
  write_file(fs::path(o.out) / "solution.csv", csv.str());
  json j = {{"x", x}, {"u", u}, {"h", o.grid_h}, {"eps_reg", eps}, {"convention", o.convention}, {"howard_iterations", iters},
            {"residual_sup", res}, {"unknowns", unknowns}, {"estimates", json::parse(est.str())}};
  write_file(fs::path(o.out) / "hjb.json", j.dump(2) + "\n");
  std::printf("u(x)=%.10g howard_iterations=%d residual=%.3g\n", u, iters, res);
  return kOk;
}

int run_quasicheck(const Options& o) {
  Problem prob;
  load(o, prob);
  int d = 0;
  ok(bql_problem_dim(prob.p, &d));
  json opts = {{"paths", o.paths > 0 ? o.paths : 2000}, {"dt", o.dt}};
  if (!o.x.empty()) opts["x"] = start_point(o, d);
  if (o.eps > 0) opts["eps"] = std::vector<double>{o.eps, o.eps / 2, o.eps / 4};
  CString csv;
  ok(bql_quasicheck(prob.p, opts.dump().c_str(), static_cast<uint64_t>(o.seed), o.threads, &csv.p));
  write_file(fs::path(o.out) / "quasicheck.csv", csv.str());
  std::fputs(csv.str().c_str(), stdout);
  return kOk;
}

int run_barriers(const Options& o) {
  Problem prob;
  load(o, prob);
  CString js;
  ok(bql_barriers(prob.p, static_cast<int>(o.paths > 0 ? o.paths : 1000), static_cast<uint64_t>(o.seed), &js.p));
  write_file(fs::path(o.out) / "barriers.json", js.str() + "\n");
  std::puts(js.str().c_str());
  return kOk;
}

int run_verify(const Options& o) {
  Problem prob;
  load(o, prob);
  CString report, summary;
  int outcome = 0;
  ok(bql_verify(prob.p, nullptr, o.seed, o.threads, &report.p, &summary.p, &outcome));
  write_file(fs::path(o.out) / "report.json", report.str());
  std::puts(summary.str().c_str());
  if (outcome == BQL_SUITE_EMPTY) return kNoChecks;
  return outcome == BQL_SUITE_PASS ? kOk : kChecksFailed;
}

// One row per scalar found in the known artifacts of the output directory.
int run_report(const Options& o) {
  const fs::path dir(o.out);
  std::string body = "source,key,value\n";
  const auto add = [&](const std::string& src, const std::string& key, const std::string& val) {
    body += src + "," + key + "," + val + "\n";
  };
  if (fs::exists(dir / "report.json")) {
    for (const auto& r : json::parse(read_file(dir / "report.json")))
      add("verify", r.at("check_id").get<std::string>(), r.at("pass").get<bool>() ? "pass" : "fail");
  }
  if (fs::exists(dir / "hjb.json")) {
    const json h = json::parse(read_file(dir / "hjb.json"));
    for (const char* k : {"u", "howard_iterations", "residual_sup"}) add("hjb", k, h.at(k).dump());
  }
  if (fs::exists(dir / "barriers.json")) {
    const json b = json::parse(read_file(dir / "barriers.json"));
    for (const char* k : {"lambda", "theta", "k1", "nu", "delta"})
      if (b.contains(k)) add("barriers", k, b.at(k).dump());
  }
  for (const char* csv : {"value.csv", "quasicheck.csv"}) {
    if (!fs::exists(dir / csv)) continue;
    std::istringstream in(read_file(dir / csv));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string c; std::getline(ls, c, ',');) f.push_back(c);
      if (f.size() >= 6) add(csv, f[0] + "@eps=" + f[3], f[4] + " +- " + f[5]);
    }
  }
  write_file(dir / "summary.csv", body);
  std::fputs(body.c_str(), stdout);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Verification tools for degenerate Bellman equations"};
  app.require_subcommand(1);
  Options o;
  const auto common = [&](CLI::App* s) {
    s->add_option("--config", o.config, "problem config JSON");
    s->add_option("--seed", o.seed, "master seed")->capture_default_str();
    s->add_option("--paths", o.paths, "number of paths (samples for barriers)");
    s->add_option("--dt", o.dt, "time step")->capture_default_str();
    s->add_option("--eps", o.eps, "perturbation or regularization level");
    s->add_option("--grid-h", o.grid_h, "grid spacing")->capture_default_str();
    s->add_option("--out", o.out, "output directory")->capture_default_str();
    s->add_option("--threads", o.threads, "worker threads (default: BQL_THREADS or 1)");
    s->add_option("--x", o.x, "start point (comma or space separated)")->delimiter(',');
    s->add_option("--control", o.control, "control index (value: -1 = all constants)");
    s->add_option("--convention", o.convention, "regularization: generator or remark")->capture_default_str();
    s->add_option("--kappa", o.kappa, "level of the convexity-corrected set")->capture_default_str();
  };
  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(const Options&);
  };
  const Sub subs[] = {{"simulate", "simulate paths to CSV", run_simulate},
                      {"value", "Monte Carlo value estimate", run_value},
                      {"hjb", "solve the discrete Bellman equation", run_hjb},
                      {"quasicheck", "coupling and representation experiments", run_quasicheck},
                      {"barriers", "calibrate barrier parameters and certificates", run_barriers},
                      {"verify", "run the verification suite", run_verify},
                      {"report", "merge outputs into one summary table", run_report}};
  std::vector<CLI::App*> apps;
  for (const auto& s : subs) {
    apps.push_back(app.add_subcommand(s.name, s.help));
    common(apps.back());
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return kOk;
    std::cerr << app.help();
    return kUsage;
  }
  const auto t0 = std::chrono::steady_clock::now();
  char started[32];
  const std::time_t now = std::time(nullptr);
  std::strftime(started, sizeof started, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  for (std::size_t k = 0; k < apps.size(); ++k) {
    if (!apps[k]->parsed()) continue;
    try {
      fs::create_directories(o.out);
      const int rc = subs[k].fn(o);
      write_manifest(o, subs[k].name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), started);
      return rc;
    } catch (const Failure& f) {
      std::fprintf(stderr, "error (%s): %s\n", bql_status_name(f.status), f.what.c_str());
      if (f.status == BQL_E_CONFIG || f.status == BQL_E_IO || f.status == BQL_E_UNKNOWN_CHECK) return kConfig;
      if (f.status == BQL_E_INVALID_ARGUMENT) return kUsage;
      return kRuntime;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kRuntime;
    }
  }
  std::cerr << app.help();
  return kUsage;
}
