#pragma once

// Evaluation against fully labeled data: non-interpolated average precision,
// mAP over classes, and the thresholded CP/CR/CF1 + OP/OR/OF1 family.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlml/core.hpp"

namespace mlml {

/// Precision at every positive, averaged over positives. Scores are ranked
/// descending; equal scores keep ascending index order.
inline double average_precision(std::span<const double> scores,
                                std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw DimensionError("average_precision: scores and labels differ in size");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]]) {
      hits += 1.0;
      sum += hits / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0.0) throw DomainError("average_precision: no positive labels");
  return sum / hits;
}

struct MapResult {
  double map = 0.0;
  /// NaN for classes without positives.
  std::vector<double> per_class_ap;
  std::vector<std::size_t> excluded_classes;
};

inline MapResult mean_average_precision(const RealMatrix& probs,
                                        const LabelMatrix& truth) {
  require_same_shape(probs, truth, "mean_average_precision");
  const std::size_t n = probs.rows();
  const std::size_t k = probs.cols();
  MapResult r;
  r.per_class_ap.assign(k, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> scores(n);
  std::vector<std::uint8_t> labels(n);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = probs(i, c);
      labels[i] = truth(i, c);
      any = any || labels[i];
    }
    if (!any) {
      r.excluded_classes.push_back(c);
      continue;
    }
    r.per_class_ap[c] = average_precision(scores, labels);
    sum += r.per_class_ap[c];
    ++used;
  }
  if (used == 0) throw DomainError("mean_average_precision: no class has a positive");
  r.map = sum / static_cast<double>(used);
  return r;
}

struct F1Family {
  double cp = 0.0, cr = 0.0, cf1 = 0.0;
  double op = 0.0, or_ = 0.0, of1 = 0.0;
  double threshold = 0.5;
  /// Some class had no predicted positives (its precision counted as 0).
  bool empty_class_precision = false;
  /// Some class had no true positives (its recall counted as 0).
  bool empty_class_recall = false;
  /// No predicted positives at all (OP reported as 0).
  bool empty_overall_precision = false;
  bool empty_overall_recall = false;
};

namespace detail {
inline double ratio_or_zero(double num, double den, bool& flag) {
  if (den == 0.0) {
    flag = true;
    return 0.0;
  }
  return num / den;
}
inline double harmonic(double a, double b) {
  return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0;
}
}  // namespace detail

/// CP/CR are unweighted class means; CF1 is their harmonic mean. OP/OR pool
/// the confusion counts over all entries.
inline F1Family f1_family(const RealMatrix& probs, const LabelMatrix& truth,
                          double threshold = 0.5) {
  require_same_shape(probs, truth, "f1_family");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("f1 threshold must be in (0,1)");
  const std::size_t n = probs.rows();
  const std::size_t k = probs.cols();
  F1Family f;
  f.threshold = threshold;
  double tp_all = 0, pred_all = 0, pos_all = 0;
  double cp_sum = 0, cr_sum = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = 0, pred = 0, pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool yhat = probs(i, c) >= threshold;
      const bool y = truth(i, c) != 0;
      tp += (yhat && y);
      pred += yhat;
      pos += y;
    }
    cp_sum += detail::ratio_or_zero(tp, pred, f.empty_class_precision);
    cr_sum += detail::ratio_or_zero(tp, pos, f.empty_class_recall);
    tp_all += tp;
    pred_all += pred;
    pos_all += pos;
  }
  if (k > 0) {
    f.cp = cp_sum / static_cast<double>(k);
    f.cr = cr_sum / static_cast<double>(k);
  }
  f.cf1 = detail::harmonic(f.cp, f.cr);
  f.op = detail::ratio_or_zero(tp_all, pred_all, f.empty_overall_precision);
  f.or_ = detail::ratio_or_zero(tp_all, pos_all, f.empty_overall_recall);
  f.of1 = detail::harmonic(f.op, f.or_);
  return f;
}

struct MetricsReport {
  double map = 0.0;
  std::vector<double> per_class_ap;
  double cf1 = 0.0, of1 = 0.0, cp = 0.0, cr = 0.0, op = 0.0, or_ = 0.0;
  double threshold = 0.5;
};

inline MetricsReport evaluate(const RealMatrix& probs, const LabelMatrix& truth,
                              double threshold = 0.5) {
  const MapResult m = mean_average_precision(probs, truth);
  const F1Family f = f1_family(probs, truth, threshold);
  return {m.map, m.per_class_ap, f.cf1, f.of1, f.cp, f.cr, f.op, f.or_, threshold};
}

/// Flat JSON object; classes without positives serialize as null.
inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json ap = nlohmann::json::array();
  for (double v : r.per_class_ap) {
    if (std::isnan(v)) ap.push_back(nullptr);
    else ap.push_back(v);
  }
  return {{"map", r.map}, {"cf1", r.cf1}, {"of1", r.of1}, {"cp", r.cp},
          {"cr", r.cr},   {"op", r.op},   {"or", r.or_},  {"threshold", r.threshold},
          {"per_class_ap", ap}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.map = j.at("map").get<double>();
  r.cf1 = j.at("cf1").get<double>();
  r.of1 = j.at("of1").get<double>();
  r.cp = j.at("cp").get<double>();
  r.cr = j.at("cr").get<double>();
  r.op = j.at("op").get<double>();
  r.or_ = j.at("or").get<double>();
  r.threshold = j.at("threshold").get<double>();
  for (const auto& v : j.at("per_class_ap")) {
    r.per_class_ap.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                         : v.get<double>());
  }
  return r;
}

inline std::string metrics_csv_header() { return "map,cf1,of1,cp,cr,op,or"; }

inline std::string metrics_csv_row(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  os << r.map << ',' << r.cf1 << ',' << r.of1 << ',' << r.cp << ',' << r.cr
     << ',' << r.op << ',' << r.or_;
  return os.str();
}

}  // namespace mlml
