#include "bql/problem.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace bql {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::Config, path + ": " + what);
}

const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) fail(path.empty() ? key : path + "." + key, "missing");
  return j.at(key);
}

double num(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(path, "expected a finite number");
  return v;
}

int integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<int>();
}

Vec vec(const json& j, int n, const std::string& path) {
  if (!j.is_array() || static_cast<int>(j.size()) != n) fail(path, "expected an array of " + std::to_string(n) + " numbers");
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = num(j[i], path + "[" + std::to_string(i) + "]");
  return v;
}

Mat mat(const json& j, int rows, int cols, const std::string& path) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows * cols)
    fail(path, "expected a row-major array of " + std::to_string(rows * cols) + " numbers");
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = num(j[r * cols + c], path + "[" + std::to_string(r * cols + c) + "]");
  return m;
}

Field field(const json& j, int d, const std::string& path) {
  std::string name;
  if (j.is_string())
    name = j.get<std::string>();
  else if (j.is_object() && j.contains("name") && j.at("name").is_string())
    name = j.at("name").get<std::string>();
  else
    fail(path, "expected a named field");
  if (name == "one") return Field::constant(d, 1.0);
  if (name == "zero") return Field::constant(d, 0.0);
  if (name == "constant") return Field::constant(d, num(require(j, "value", path), path + ".value"));
  if (name == "quadratic") {
    Mat q = j.contains("q") ? mat(j.at("q"), d, d, path + ".q") : Mat(Mat::Zero(d, d));
    Vec l = j.contains("l") ? vec(j.at("l"), d, path + ".l") : Vec(Vec::Zero(d));
    double c = j.contains("c") ? num(j.at("c"), path + ".c") : 0.0;
    return Field::quadratic(q, l, c);
  }
  fail(path + ".name", "unknown field '" + name + "'");
}

json field_json(const Field& f) {
  if (f.name == "one" || f.name == "zero") return json{{"name", f.name}};
  if (f.name == "constant") return json{{"name", "constant"}, {"value", f.c0}};
  json q = json::array(), l = json::array();
  for (int r = 0; r < f.q.rows(); ++r)
    for (int c = 0; c < f.q.cols(); ++c) q.push_back(f.q(r, c));
  for (int i = 0; i < f.l.size(); ++i) l.push_back(f.l(i));
  return json{{"name", "quadratic"}, {"q", q}, {"l", l}, {"c", f.c0}};
}

}  // namespace

ProblemSpec problem_from_json(const json& j) {
  if (!j.is_object()) fail("$", "problem document must be an object");
  ProblemSpec p;
  p.name = j.value("name", std::string("problem"));
  p.d = integer(require(j, "dimension", ""), "dimension");
  if (p.d < 1 || p.d > kMaxDim) fail("dimension", "must be in 1..3");
  p.d1 = integer(require(j, "noise_dimension", ""), "noise_dimension");
  if (p.d1 < 1 || p.d1 > kMaxNoise) fail("noise_dimension", "must be in 1..6");
  p.k0 = num(require(j, "k0", ""), "k0");

  const json& dj = require(j, "domain", "");
  const std::string dtype = require(dj, "type", "domain").is_string() ? dj.at("type").get<std::string>() : "";
  if (dtype == "ball") {
    const double r = num(require(dj, "radius", "domain"), "domain.radius");
    if (!(r > 0)) fail("domain.radius", "must be positive");
    Vec c = dj.contains("center") ? vec(dj.at("center"), p.d, "domain.center") : Vec(Vec::Zero(p.d));
    p.domain = DomainFn::ball(p.d, r, c);
  } else if (dtype == "levelset") {
    const json& ej = require(dj, "expression", "domain");
    if (!ej.is_string()) fail("domain.expression", "expected a string");
    Vec axes = dj.contains("axes") ? vec(dj.at("axes"), p.d, "domain.axes") : Vec(Vec::Ones(p.d));
    for (int i = 0; i < p.d; ++i)
      if (!(axes(i) > 0)) fail("domain.axes", "must be positive");
    try {
      p.domain = DomainFn::levelset(ej.get<std::string>(), axes);
    } catch (const Error& e) {
      fail("domain.expression", e.what());
    }
  } else {
    fail("domain.type", "expected \"ball\" or \"levelset\"");
  }
  if (dj.contains("scale")) {
    const double s = num(dj.at("scale"), "domain.scale");
    if (!(s > 0)) fail("domain.scale", "must be positive");
    p.domain = p.domain.with_scale(s);
  }
  if (dj.contains("box_lo") || dj.contains("box_hi"))
    p.domain.set_box(vec(require(dj, "box_lo", "domain"), p.d, "domain.box_lo"),
                     vec(require(dj, "box_hi", "domain"), p.d, "domain.box_hi"));

  if (j.contains("controls")) {
    const json& cj = j.at("controls");
    if (!cj.is_array()) fail("controls", "expected an array");
    for (std::size_t k = 0; k < cj.size(); ++k) {
      const std::string at = "controls[" + std::to_string(k) + "]";
      ControlPoint c;
      c.sigma = mat(require(cj[k], "sigma", at), p.d, p.d1, at + ".sigma");
      c.b = cj[k].contains("b") ? vec(cj[k].at("b"), p.d, at + ".b") : Vec(Vec::Zero(p.d));
      c.c = cj[k].contains("c") ? num(cj[k].at("c"), at + ".c") : 0.0;
      if (c.c < 0) fail(at + ".c", "must be nonnegative");
      c.f = cj[k].contains("f") ? field(cj[k].at("f"), p.d, at + ".f") : Field::constant(p.d, 0.0);
      p.controls.push_back(c);
    }
  }
  if (j.contains("control_family")) {
    // Rank-one family sigma = amplitude * e_k, e_k evenly spaced on the circle.
    const json& fj = j.at("control_family");
    const std::string at = "control_family";
    if (!fj.is_object() || fj.value("type", "") != "circle_directions") fail(at + ".type", "expected \"circle_directions\"");
    if (p.d != 2 || p.d1 != 1) fail(at, "requires dimension 2 and noise_dimension 1");
    const int count = integer(require(fj, "count", at), at + ".count");
    if (count < 1) fail(at + ".count", "must be positive");
    const double amp = num(require(fj, "amplitude", at), at + ".amplitude");
    const double cc = fj.contains("c") ? num(fj.at("c"), at + ".c") : 0.0;
    const Field f = fj.contains("f") ? field(fj.at("f"), p.d, at + ".f") : Field::constant(p.d, 0.0);
    for (int k = 0; k < count; ++k) {
      const double t = 2.0 * M_PI * k / count;
      ControlPoint c;
      c.sigma = Mat(2, 1);
      c.sigma << amp * std::cos(t), amp * std::sin(t);
      c.b = Vec::Zero(2);
      c.c = cc;
      c.f = f;
      p.controls.push_back(c);
    }
  }
  if (p.controls.empty()) fail("controls", "list must be non-empty");
  p.g = j.contains("g") ? field(j.at("g"), p.d, "g") : Field::constant(p.d, 0.0);
  if (j.contains("exact_value")) p.exact_value = field(j.at("exact_value"), p.d, "exact_value");
  p.validate();
  return p;
}

ProblemSpec load_problem_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("$: invalid JSON: ") + e.what());
  }
  return problem_from_json(j);
}

json problem_to_json(const ProblemSpec& p) {
  json j;
  j["name"] = p.name;
  j["dimension"] = p.d;
  j["noise_dimension"] = p.d1;
  j["k0"] = p.k0;
  json dom;
  const auto arr = [](const Vec& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
  };
  if (p.domain.kind() == DomainFn::Kind::Ball) {
    dom = json{{"type", "ball"}, {"radius", p.domain.radius()}, {"center", arr(p.domain.anchor())}};
  } else {
    dom = json{{"type", "levelset"},
               {"expression", p.domain.kind() == DomainFn::Kind::Ellipse ? "ellipse" : "quartic"},
               {"axes", arr(p.domain.axes())}};
  }
  dom["scale"] = p.domain.scale();
  dom["box_lo"] = arr(p.domain.box_lo());
  dom["box_hi"] = arr(p.domain.box_hi());
  j["domain"] = dom;
  json cs = json::array();
  for (const auto& c : p.controls) {
    json s = json::array(), b = json::array();
    for (int r = 0; r < c.sigma.rows(); ++r)
      for (int k = 0; k < c.sigma.cols(); ++k) s.push_back(c.sigma(r, k));
    for (int i = 0; i < c.b.size(); ++i) b.push_back(c.b(i));
    cs.push_back(json{{"sigma", s}, {"b", b}, {"c", c.c}, {"f", field_json(c.f)}});
  }
  j["controls"] = cs;
  j["g"] = field_json(p.g);
  if (p.exact_value) j["exact_value"] = field_json(*p.exact_value);
  return j;
}

}  // namespace bql
