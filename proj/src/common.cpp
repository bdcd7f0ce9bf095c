#include "bql/common.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

namespace bql {

Mat expm_skew(const Mat& a, double skew_tol) {
  const int d = static_cast<int>(a.rows());
  if (a.cols() != d || d < 1 || d > kMaxDim)
    throw Error(ErrorCode::InvalidArgument, "expm_skew: expected a square matrix of size 1..3");
  double asym = 0.0, mag = 0.0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      asym = std::max(asym, std::abs(a(i, j) + a(j, i)));
      mag = std::max(mag, std::abs(a(i, j)));
    }
  if (!(asym <= skew_tol * (1.0 + mag)))
    throw Error(ErrorCode::Numeric, "matrix exponential failure: argument is not skew-symmetric");
  Mat e = Mat::Identity(d, d);
  if (d == 1) return e;
  if (d == 2) {
    const double w = a(1, 0);
    if (w == 0.0) return e;
    const double c = std::cos(w), s = std::sin(w);
    e(0, 0) = c;
    e(0, 1) = -s;
    e(1, 0) = s;
    e(1, 1) = c;
    return e;
  }
  const double w1 = a(2, 1), w2 = a(0, 2), w3 = a(1, 0);
  const double th2 = w1 * w1 + w2 * w2 + w3 * w3;
  if (th2 == 0.0) return e;
  const double th = std::sqrt(th2);
  double c1, c2;
  if (th < 1e-4) {
    c1 = 1.0 - th2 / 6.0 + th2 * th2 / 120.0;
    c2 = 0.5 - th2 / 24.0 + th2 * th2 / 720.0;
  } else {
    c1 = std::sin(th) / th;
    c2 = (1.0 - std::cos(th)) / th2;
  }
  Mat k(3, 3);
  k << 0.0, -w3, w2, w3, 0.0, -w1, -w2, w1, 0.0;
  Mat k2 = matmul(k, k);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) e(i, j) += c1 * k(i, j) + c2 * k2(i, j);
  return e;
}

SampleStats sample_stats(const std::vector<double>& xs) {
  SampleStats st;
  st.n = static_cast<long>(xs.size());
  if (xs.empty()) return st;
  CompensatedSum s;
  for (double x : xs) s.add(x);
  st.mean = s.value() / static_cast<double>(st.n);
  if (st.n < 2) return st;
  CompensatedSum q;
  for (double x : xs) q.add((x - st.mean) * (x - st.mean));
  st.sd = std::sqrt(q.value() / static_cast<double>(st.n - 1));
  st.stderr_ = st.sd / std::sqrt(static_cast<double>(st.n));
  return st;
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("BQL_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

void parallel_for(long n, int threads, const std::function<void(long)>& fn) {
  if (n <= 0) return;
  threads = std::max(1, std::min<int>(threads, static_cast<int>(std::min<long>(n, 256))));
  if (threads == 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const long chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        const long lo = t * chunk, hi = std::min(n, lo + chunk);
        for (long i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, const std::string& tag) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return splitmix64(master ^ splitmix64(h));
}

}  // namespace bql
