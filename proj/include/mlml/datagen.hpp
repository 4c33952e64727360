#pragma once

/**
 * Synthetic multi-label data and missing-label corruption.
 *
 * Labels come from a planted linear-logit model: y_k = 1 iff
 * w_k . f + b_k + noise > 0. Weights mix a per-class direction with a shared
 * topic direction so classes co-occur. Corruption keeps
 * min(n, floor(n (1 - r)) + 1) of the n positives of every sample.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlml/core.hpp"

namespace mlml {

struct GeneratorSpec {
  std::size_t n_samples = 1000;
  std::size_t n_features = 32;
  std::size_t n_classes = 16;
  /// Target marginal positive rate per class, used to calibrate biases.
  double positive_rate = 0.2;
  /// Share of each class direction taken from its topic direction.
  double correlation = 0.3;
  std::size_t n_topics = 4;
  /// Norm scale of the planted weights relative to unit-variance features.
  double weight_scale = 3.0;
  /// Standard deviation of Gaussian noise added to every planted logit.
  double noise = 0.0;
  /// Samples with any planted logit inside (-margin, margin) are redrawn,
  /// leaving a label-free band around every class boundary.
  double margin = 0.0;
  std::uint64_t seed = 0;
  std::size_t max_retries = 1000;
  /// Explicit planted parameters; generated when empty.
  RealMatrix weights;
  std::vector<double> bias;

  void validate() const {
    if (n_samples == 0 || n_features == 0) throw ConfigError("empty generator shape");
    if (n_classes < 2) throw ConfigError("generator needs K >= 2");
    if (!(positive_rate > 0.0 && positive_rate < 1.0))
      throw ConfigError("positive_rate must be in (0,1)");
    if (!(correlation >= 0.0 && correlation < 1.0))
      throw ConfigError("correlation must be in [0,1)");
    if (n_topics == 0) throw ConfigError("n_topics must be >= 1");
    if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
    if (!(margin >= 0.0)) throw ConfigError("margin must be >= 0");
    if (!weights.empty() && !weights.same_shape(n_classes, n_features))
      throw ConfigError("explicit weights must be K x D");
    if (!bias.empty() && bias.size() != n_classes)
      throw ConfigError("explicit bias must have K entries");
  }
};

struct DatasetMeta {
  std::uint64_t seed = 0;
  double missing_ratio = 0.0;
  std::uint64_t corrupt_seed = 0;
  nlohmann::json generator = nlohmann::json::object();
};

struct Dataset {
  RealMatrix features;
  LabelMatrix labels;
  std::optional<LabelMatrix> true_labels;
  DatasetMeta meta;
  /// Planted model, when known.
  RealMatrix planted_weights;
  std::vector<double> planted_bias;

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
  std::size_t classes() const noexcept { return labels.cols(); }

  void validate() const {
    if (labels.rows() != features.rows())
      throw DimensionError("dataset: features and labels row counts differ");
    for (auto v : labels.flat())
      if (v > 1) throw DomainError("dataset: label outside {0,1}");
    if (true_labels) {
      require_same_shape(*true_labels, labels, "dataset true_labels");
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto t = true_labels->flat()[i];
        if (t > 1) throw DomainError("dataset: true label outside {0,1}");
        if (labels.flat()[i] > t)
          throw DomainError("dataset: observed positive absent from true labels");
      }
    }
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.features == b.features && a.labels == b.labels &&
           a.true_labels == b.true_labels && a.meta.seed == b.meta.seed &&
           a.meta.missing_ratio == b.meta.missing_ratio &&
           a.meta.corrupt_seed == b.meta.corrupt_seed &&
           a.meta.generator == b.meta.generator &&
           a.planted_weights == b.planted_weights &&
           a.planted_bias == b.planted_bias;
  }
};

inline double average_positives(const LabelMatrix& labels) {
  if (labels.rows() == 0) return 0.0;
  std::size_t total = 0;
  for (auto v : labels.flat()) total += v;
  return static_cast<double>(total) / static_cast<double>(labels.rows());
}

inline nlohmann::json to_json(const GeneratorSpec& s) {
  return {{"n_samples", s.n_samples},   {"n_features", s.n_features},
          {"n_classes", s.n_classes},   {"positive_rate", s.positive_rate},
          {"correlation", s.correlation}, {"n_topics", s.n_topics},
          {"weight_scale", s.weight_scale}, {"noise", s.noise}, {"margin", s.margin},
          {"seed", s.seed}};
}

/// Overlays the keys present in `j`; unknown keys are rejected.
inline GeneratorSpec generator_from_json(const nlohmann::json& j, GeneratorSpec s = {}) {
  if (!j.is_object()) throw ConfigError("generator config must be an object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "n_samples") s.n_samples = v.get<std::size_t>();
      else if (k == "n_features") s.n_features = v.get<std::size_t>();
      else if (k == "n_classes") s.n_classes = v.get<std::size_t>();
      else if (k == "positive_rate") s.positive_rate = v.get<double>();
      else if (k == "correlation") s.correlation = v.get<double>();
      else if (k == "n_topics") s.n_topics = v.get<std::size_t>();
      else if (k == "weight_scale") s.weight_scale = v.get<double>();
      else if (k == "noise") s.noise = v.get<double>();
      else if (k == "margin") s.margin = v.get<double>();
      else if (k == "seed") s.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown generator key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  s.validate();
  return s;
}

namespace detail {

inline double planted_logit(std::span<const double> w, double b,
                            std::span<const double> f) {
  double z = b;
  for (std::size_t d = 0; d < f.size(); ++d) z += w[d] * f[d];
  return z;
}

}  // namespace detail

/// Evaluates the planted model without noise.
inline LabelMatrix planted_labels(const RealMatrix& features,
                                  const RealMatrix& weights,
                                  std::span<const double> bias) {
  if (weights.cols() != features.cols() || bias.size() != weights.rows())
    throw DimensionError("planted_labels: weight shape mismatch");
  LabelMatrix y(features.rows(), weights.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t k = 0; k < weights.rows(); ++k) {
      y(i, k) = detail::planted_logit(weights.row(k), bias[k], features.row(i)) > 0.0;
    }
  }
  return y;
}

inline Dataset generate(const GeneratorSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_samples, d = spec.n_features, k = spec.n_classes;
  RealMatrix w = spec.weights;
  if (w.empty()) {
    std::mt19937_64 rng(derive_seed(spec.seed, "planted-weights"));
    std::normal_distribution<double> normal;
    RealMatrix topics(spec.n_topics, d);
    for (auto& v : topics.flat()) v = normal(rng);
    w = RealMatrix(k, d);
    const double own = std::sqrt(1.0 - spec.correlation);
    const double shared = std::sqrt(spec.correlation);
    const double scale = spec.weight_scale / std::sqrt(static_cast<double>(d));
    for (std::size_t c = 0; c < k; ++c) {
      auto topic = topics.row(c % spec.n_topics);
      for (std::size_t j = 0; j < d; ++j) {
        w(c, j) = scale * (own * normal(rng) + shared * topic[j]);
      }
    }
  }

  std::vector<double> b = spec.bias;
  if (b.empty()) {
    // Bias = minus the (1 - rate) quantile of w_k . f on a pilot draw.
    std::mt19937_64 rng(derive_seed(spec.seed, "bias-pilot"));
    std::normal_distribution<double> normal;
    const std::size_t pilot = std::max<std::size_t>(4000, n);
    RealMatrix f(pilot, d);
    for (auto& v : f.flat()) v = normal(rng);
    b.assign(k, 0.0);
    std::vector<double> z(pilot);
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < pilot; ++i)
        z[i] = detail::planted_logit(w.row(c), 0.0, f.row(i));
      const auto q = static_cast<std::size_t>(
          std::floor((1.0 - spec.positive_rate) * static_cast<double>(pilot - 1)));
      std::nth_element(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(q), z.end());
      b[c] = -z[q];
    }
  }

  Dataset ds;
  ds.features = RealMatrix(n, d);
  ds.labels = LabelMatrix(n, k);
  std::mt19937_64 rng(derive_seed(spec.seed, "samples"));
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < n; ++i) {
    auto f = ds.features.row(i);
    auto y = ds.labels.row(i);
    std::size_t attempt = 0;
    for (;; ++attempt) {
      if (attempt >= spec.max_retries)
        throw GenerationError("could not draw a sample with a positive label after " +
                              std::to_string(spec.max_retries) + " retries");
      for (auto& v : f) v = normal(rng);
      bool any = false;
      bool clear = true;
      for (std::size_t c = 0; c < k; ++c) {
        double z = detail::planted_logit(w.row(c), b[c], f);
        clear = clear && std::abs(z) >= spec.margin;
        if (spec.noise > 0.0) z += spec.noise * normal(rng);
        y[c] = z > 0.0;
        any = any || y[c];
      }
      if (any && clear) break;
    }
  }
  ds.true_labels = ds.labels;
  ds.meta.seed = spec.seed;
  ds.meta.generator = to_json(spec);
  ds.planted_weights = std::move(w);
  ds.planted_bias = std::move(b);
  return ds;
}

/// Number of positives kept out of n at missing ratio r, capped at n.
inline std::size_t kept_positives(std::size_t n, double r) {
  if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("missing ratio must be in [0,1]");
  if (n == 0) return 0;
  // Slack absorbs representation error, e.g. 5 * (1 - 0.8) = 0.99999...
  const double keep = std::floor(static_cast<double>(n) * (1.0 - r) + 1e-9) + 1.0;
  return std::min(n, static_cast<std::size_t>(keep));
}

/// Drops positives uniformly at random per sample. Sample i draws from its
/// own stream derived from (seed, i).
inline LabelMatrix corrupt_missing(const LabelMatrix& labels, double r,
                                   std::uint64_t seed) {
  if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("missing ratio must be in [0,1]");
  LabelMatrix out = labels;
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < labels.rows(); ++i) {
    auto y = out.row(i);
    pos.clear();
    for (std::size_t c = 0; c < y.size(); ++c) {
      if (y[c] > 1) throw DomainError("labels must be 0 or 1");
      if (y[c]) pos.push_back(c);
    }
    if (pos.empty()) throw DomainError("sample " + std::to_string(i) + " has no positive");
    const std::size_t keep = kept_positives(pos.size(), r);
    std::mt19937_64 rng(derive_seed(seed, "corrupt", i));
    std::shuffle(pos.begin(), pos.end(), rng);
    for (std::size_t j = keep; j < pos.size(); ++j) y[pos[j]] = 0;
  }
  return out;
}

/// Corrupts a dataset in place of its observed labels; truth is kept (or
/// captured from the observed labels when absent).
inline Dataset corrupt_dataset(const Dataset& in, double r, std::uint64_t seed) {
  Dataset out = in;
  if (!out.true_labels) out.true_labels = in.labels;
  out.labels = corrupt_missing(in.labels, r, seed);
  out.meta.missing_ratio = r;
  out.meta.corrupt_seed = seed;
  return out;
}

/// Rows [begin, end) as a new dataset sharing meta and planted model.
inline Dataset slice(const Dataset& ds, std::size_t begin, std::size_t end) {
  if (begin > end || end > ds.size()) throw DimensionError("slice out of range");
  Dataset out;
  out.meta = ds.meta;
  out.planted_weights = ds.planted_weights;
  out.planted_bias = ds.planted_bias;
  const std::size_t n = end - begin;
  out.features = RealMatrix(n, ds.dim());
  out.labels = LabelMatrix(n, ds.classes());
  if (ds.true_labels) out.true_labels = LabelMatrix(n, ds.classes());
  for (std::size_t i = 0; i < n; ++i) {
    std::ranges::copy(ds.features.row(begin + i), out.features.row(i).begin());
    std::ranges::copy(ds.labels.row(begin + i), out.labels.row(i).begin());
    if (ds.true_labels)
      std::ranges::copy(ds.true_labels->row(begin + i), out.true_labels->row(i).begin());
  }
  return out;
}

// ----------------------------------------------------------------------------
// JSON-lines serialization
// ----------------------------------------------------------------------------

inline void save(std::ostream& os, const Dataset& ds) {
  nlohmann::json meta = {{"seed", ds.meta.seed},
                         {"r", ds.meta.missing_ratio},
                         {"corrupt_seed", ds.meta.corrupt_seed},
                         {"D", ds.dim()},
                         {"K", ds.classes()},
                         {"generator", ds.meta.generator}};
  if (!ds.planted_weights.empty()) {
    meta["planted"] = {{"weights", ds.planted_weights.values()},
                       {"bias", ds.planted_bias}};
  }
  os << nlohmann::json{{"meta", meta}}.dump() << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto f = ds.features.row(i);
    auto y = ds.labels.row(i);
    nlohmann::json rec = {{"features", std::vector<double>(f.begin(), f.end())},
                          {"labels", std::vector<int>(y.begin(), y.end())}};
    if (ds.true_labels) {
      auto t = ds.true_labels->row(i);
      rec["true_labels"] = std::vector<int>(t.begin(), t.end());
    }
    os << rec.dump() << '\n';
  }
}

namespace detail {

inline std::vector<std::uint8_t> parse_label_row(const nlohmann::json& j,
                                                 std::size_t line,
                                                 const char* key) {
  if (!j.is_array()) throw ParseError(line, std::string(key) + " must be an array");
  std::vector<std::uint8_t> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number_integer() || (v.get<long long>() != 0 && v.get<long long>() != 1))
      throw ParseError(line, std::string(key) + " values must be 0 or 1");
    out.push_back(static_cast<std::uint8_t>(v.get<int>()));
  }
  return out;
}

}  // namespace detail

inline Dataset load(std::istream& is) {
  Dataset ds;
  std::vector<double> feats;
  std::vector<std::uint8_t> labels, truth;
  std::size_t d = 0, k = 0, rows = 0, line_no = 0;
  bool have_truth = false, have_shape = false;
  std::string line;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(line_no, "record must be an object");
    try {
      if (j.contains("meta")) {
        if (rows > 0) throw ParseError(line_no, "meta header after records");
        const auto& m = j["meta"];
        ds.meta.seed = m.value("seed", std::uint64_t{0});
        ds.meta.missing_ratio = m.value("r", 0.0);
        ds.meta.corrupt_seed = m.value("corrupt_seed", std::uint64_t{0});
        ds.meta.generator = m.value("generator", nlohmann::json::object());
        if (m.contains("planted")) {
          const auto& p = m["planted"];
          auto w = p.at("weights").get<std::vector<double>>();
          ds.planted_bias = p.at("bias").get<std::vector<double>>();
          const std::size_t kk = ds.planted_bias.size();
          if (kk == 0 || w.size() % kk != 0)
            throw ParseError(line_no, "planted weights do not match bias");
          const std::size_t dd = w.size() / kk;
          ds.planted_weights = RealMatrix(kk, dd, std::move(w));
        }
        continue;
      }
      if (!j.contains("features") || !j.contains("labels"))
        throw ParseError(line_no, "record needs features and labels");
      const auto f = j["features"].get<std::vector<double>>();
      const auto y = detail::parse_label_row(j["labels"], line_no, "labels");
      const bool t_here = j.contains("true_labels");
      if (!have_shape) {
        d = f.size();
        k = y.size();
        have_truth = t_here;
        have_shape = true;
      }
      if (f.size() != d || y.size() != k)
        throw ParseError(line_no, "row shape differs from first record");
      if (t_here != have_truth)
        throw ParseError(line_no, "true_labels present on some rows only");
      feats.insert(feats.end(), f.begin(), f.end());
      labels.insert(labels.end(), y.begin(), y.end());
      if (t_here) {
        const auto t = detail::parse_label_row(j["true_labels"], line_no, "true_labels");
        if (t.size() != k) throw ParseError(line_no, "true_labels length differs");
        for (std::size_t c = 0; c < k; ++c)
          if (y[c] > t[c]) throw ParseError(line_no, "observed positive not in true_labels");
        truth.insert(truth.end(), t.begin(), t.end());
      }
      ++rows;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  ds.features = RealMatrix(rows, d, std::move(feats));
  ds.labels = LabelMatrix(rows, k, std::move(labels));
  if (have_truth) ds.true_labels = LabelMatrix(rows, k, std::move(truth));
  return ds;
}

inline void save(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  save(os, ds);
}

inline Dataset load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return load(is);
}

}  // namespace mlml
