#pragma once

#include "bql/harness.hpp"

#include "json.hpp"

#include <string>

inline bql::ProblemSpec load_config(const std::string& name) {
  return bql::load_problem_file(std::string(BQL_CONFIG_DIR) + "/" + name);
}

inline bql::ProblemSpec parse_problem(const std::string& text) {
  return bql::problem_from_json(nlohmann::json::parse(text));
}

inline bql::Vec vec2(double a, double b) {
  bql::Vec v(2);
  v << a, b;
  return v;
}

inline bql::Vec vec1(double a) {
  bql::Vec v(1);
  v << a;
  return v;
}

// Single Brownian control on the unit disk with the given payoffs.
inline bql::ProblemSpec disk_problem(const std::string& f, const std::string& g, double c = 0.0) {
  return parse_problem(R"({"dimension": 2, "noise_dimension": 2, "k0": 1000, "domain": {"type": "ball", "radius": 1},
    "controls": [{"sigma": [1.4142135623730951, 0, 0, 1.4142135623730951], "c": )" +
                       std::to_string(c) + R"(, "f": )" + f + R"(}], "g": )" + g + "}");
}
