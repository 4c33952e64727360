#pragma once

// Independent reference implementations used to check the library: finite
// differences, brute-force ranking metrics and confusion counts, and plain
// recurrences written without the library's helpers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace oracle {

/// (f(x+h) - f(x-h)) / 2h
inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// (f(x+h) - 2 f(x) + f(x-h)) / h^2
inline double second_diff(const std::function<double(double)>& f, double x, double h = 1e-4) {
  return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
}

inline bool close(double analytic, double numeric, double rel, double abs) {
  return std::abs(analytic - numeric) <= rel * std::abs(numeric) + abs;
}

/// Sigmoid in long double straight from the definition.
inline long double sigmoid_ld(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

/// AP by counting, for every positive, how many items rank at or above it.
/// Item j ranks above i when its score is larger, or equal with j < i.
/// Precisions are added in rank order so the floating-point sum is the same
/// one a ranked scan produces.
inline double brute_ap(const std::vector<double>& s, const std::vector<int>& y) {
  const std::size_t n = s.size();
  std::vector<std::pair<int, double>> by_rank;
  for (std::size_t i = 0; i < n; ++i) {
    if (!y[i]) continue;
    int at_or_above = 0, hits = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool above = s[j] > s[i] || (s[j] == s[i] && j <= i);
      if (above) {
        ++at_or_above;
        hits += y[j];
      }
    }
    by_rank.emplace_back(at_or_above, static_cast<double>(hits) / at_or_above);
  }
  if (by_rank.empty()) return std::nan("");
  std::sort(by_rank.begin(), by_rank.end());
  double sum = 0.0;
  for (const auto& r : by_rank) sum += r.second;
  return sum / static_cast<double>(by_rank.size());
}

/// Second difference of (lambda - p) p^2 evaluated in long double.
inline long double hill_second_diff_ld(long double lambda, long double x, long double h) {
  auto f = [&](long double z) {
    const long double p = sigmoid_ld(z);
    return (lambda - p) * p * p;
  };
  return (f(x + h) - 2.0L * f(x) + f(x - h)) / (h * h);
}

struct BruteF1 {
  double cp, cr, cf1, op, or_, of1;
};

/// probs[i][k], truth[i][k]
inline BruteF1 brute_f1(const std::vector<std::vector<double>>& probs,
                        const std::vector<std::vector<int>>& truth, double thr) {
  const std::size_t n = probs.size(), k = n ? probs[0].size() : 0;
  double cp = 0, cr = 0;
  long tp_all = 0, fp_all = 0, fn_all = 0;
  for (std::size_t c = 0; c < k; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pred = probs[i][c] >= thr;
      const bool pos = truth[i][c] == 1;
      if (pred && pos) ++tp;
      else if (pred) ++fp;
      else if (pos) ++fn;
    }
    cp += (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
    cr += (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
  }
  BruteF1 r{};
  r.cp = k ? cp / k : 0.0;
  r.cr = k ? cr / k : 0.0;
  r.cf1 = (r.cp + r.cr) > 0 ? 2 * r.cp * r.cr / (r.cp + r.cr) : 0.0;
  r.op = (tp_all + fp_all) ? static_cast<double>(tp_all) / (tp_all + fp_all) : 0.0;
  r.or_ = (tp_all + fn_all) ? static_cast<double>(tp_all) / (tp_all + fn_all) : 0.0;
  r.of1 = (r.op + r.or_) > 0 ? 2 * r.op * r.or_ / (r.op + r.or_) : 0.0;
  return r;
}

/// Kept positives by the integer form of floor(n(1-r)) + 1 for r = a/b.
inline long kept_exact(long n, long a, long b) {
  const long keep = (n * (b - a)) / b + 1;  // floor of a non-negative rational
  return keep < n ? keep : n;
}

/// Scalar Adam with decoupled decay, step by step.
inline std::vector<double> adam_scalar(double p, const std::vector<double>& grads,
                                       const std::vector<double>& lrs, double b1, double b2,
                                       double eps, double wd) {
  std::vector<double> trace;
  double m = 0, v = 0, b1t = 1, b2t = 1;
  for (std::size_t t = 0; t < grads.size(); ++t) {
    const double g = grads[t];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    b1t *= b1;
    b2t *= b2;
    const double mh = m / (1 - b1t), vh = v / (1 - b2t);
    p = p - lrs[t] * wd * p - lrs[t] * mh / (std::sqrt(vh) + eps);
    trace.push_back(p);
  }
  return trace;
}

}  // namespace oracle
