#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bql {

inline constexpr int kMaxDim = 3;
inline constexpr int kMaxNoise = 6;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxNoise, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxNoise, kMaxNoise>;

enum class ErrorCode : int {
  Ok = 0,
  InvalidArgument = 1,
  Config = 2,
  Domain = 3,
  Numeric = 4,
  Calibration = 5,
  Capability = 6,
  Underpowered = 7,
  Io = 8,
  UnknownCheck = 9,
  Internal = 10,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Fixed loop order so that identical inputs give identical bits regardless of
// which Eigen kernel a temporary would have picked.
inline Vec matvec(const Mat& m, const Vec& v) {
  Vec out(m.rows());
  for (int i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols(); ++j) s += m(i, j) * v(j);
    out(i) = s;
  }
  return out;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (int k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) s += a(i) * b(i);
  return s;
}

// exp(A) for skew-symmetric A with dimension <= 3.
Mat expm_skew(const Mat& a, double skew_tol = 1e-12);

// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) {
    double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct SampleStats {
  double mean = 0.0;
  double stderr_ = 0.0;
  double sd = 0.0;
  long n = 0;
};

// Two-pass compensated mean / sample standard deviation in index order.
SampleStats sample_stats(const std::vector<double>& xs);

// Threads: explicit value if > 0, else BQL_THREADS, else 1.
int resolve_threads(int requested);

// Runs fn(i) for i in [0, n). Static contiguous chunks; callers write results
// into per-index slots so the outcome does not depend on the thread count.
void parallel_for(long n, int threads, const std::function<void(long)>& fn);

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, const std::string& tag);

}  // namespace bql
