#pragma once

// The pinned desk-scale benchmark: a planted linear multi-label problem with
// 60% missing-label corruption on the training split and a fully labeled
// test split. Planted logits keep a band of width 2*margin around zero free
// of samples, so the clean labels are linearly separable.

#include <cstdint>
#include <string>

#include "mlml/config.hpp"
#include "mlml/datagen.hpp"
#include "mlml/metrics.hpp"
#include "mlml/trainer.hpp"

namespace mlml {

struct BenchmarkSpec {
  std::size_t n_train = 4000;
  std::size_t n_test = 2000;
  std::size_t n_features = 32;
  std::size_t n_classes = 16;
  double missing_ratio = 0.6;
  double positive_rate = 0.2;
  double correlation = 0.3;
  double noise = 0.0;
  double margin = 0.8;
  int epochs = 30;
  std::size_t batch_size = 32;
  double max_lr = 1e-2;
  // One epoch of warm-up.
  double warmup = 1.0 / 30.0;
};

inline nlohmann::json to_json(const BenchmarkSpec& b) {
  return {{"n_train", b.n_train},       {"n_test", b.n_test},
          {"n_features", b.n_features}, {"n_classes", b.n_classes},
          {"missing_ratio", b.missing_ratio}, {"positive_rate", b.positive_rate},
          {"correlation", b.correlation}, {"noise", b.noise},
          {"margin", b.margin},         {"epochs", b.epochs},
          {"batch_size", b.batch_size}, {"max_lr", b.max_lr},
          {"warmup", b.warmup}};
}

/// Overlays the keys present in `j`; unknown keys are rejected.
inline BenchmarkSpec benchmark_from_json(const nlohmann::json& j, BenchmarkSpec b = {}) {
  if (!j.is_object()) throw ConfigError("benchmark config must be an object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "n_train") b.n_train = v.get<std::size_t>();
      else if (k == "n_test") b.n_test = v.get<std::size_t>();
      else if (k == "n_features") b.n_features = v.get<std::size_t>();
      else if (k == "n_classes") b.n_classes = v.get<std::size_t>();
      else if (k == "missing_ratio") b.missing_ratio = v.get<double>();
      else if (k == "positive_rate") b.positive_rate = v.get<double>();
      else if (k == "correlation") b.correlation = v.get<double>();
      else if (k == "noise") b.noise = v.get<double>();
      else if (k == "margin") b.margin = v.get<double>();
      else if (k == "epochs") b.epochs = v.get<int>();
      else if (k == "batch_size") b.batch_size = v.get<std::size_t>();
      else if (k == "max_lr") b.max_lr = v.get<double>();
      else if (k == "warmup") b.warmup = v.get<double>();
      else throw ConfigError("unknown benchmark key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("benchmark config: ") + e.what());
  }
  if (b.n_train == 0 || b.n_test == 0) throw ConfigError("benchmark splits must be non-empty");
  return b;
}

struct BenchmarkData {
  Dataset train;
  Dataset test;
};

inline GeneratorSpec benchmark_generator(const BenchmarkSpec& b, std::uint64_t seed) {
  GeneratorSpec g;
  g.n_samples = b.n_train + b.n_test;
  g.n_features = b.n_features;
  g.n_classes = b.n_classes;
  g.positive_rate = b.positive_rate;
  g.correlation = b.correlation;
  g.noise = b.noise;
  g.margin = b.margin;
  g.seed = derive_seed(seed, "benchmark-data");
  return g;
}

inline BenchmarkData make_benchmark(const BenchmarkSpec& b, std::uint64_t seed) {
  const Dataset all = generate(benchmark_generator(b, seed));
  BenchmarkData out;
  out.train = corrupt_dataset(slice(all, 0, b.n_train), b.missing_ratio,
                              derive_seed(seed, "benchmark-corrupt"));
  out.test = slice(all, b.n_train, b.n_train + b.n_test);
  return out;
}

inline TrainConfig benchmark_train_config(const BenchmarkSpec& b, const TrainLoss& loss,
                                          std::uint64_t seed) {
  TrainConfig c;
  c.epochs = b.epochs;
  c.batch_size = b.batch_size;
  c.schedule.max_lr = b.max_lr;
  c.schedule.warmup = b.warmup;
  c.seed = derive_seed(seed, "benchmark-train");
  c.loss = loss;
  return c;
}

struct BenchmarkRun {
  TrainResult result;
  MetricsReport test;
};

inline BenchmarkRun run_benchmark(const BenchmarkData& data, const TrainConfig& cfg) {
  BenchmarkRun r;
  r.result = train(data.train, cfg, &data.test);
  r.test = evaluate(predict(r.result.eval_model, data.test.features), *data.test.true_labels);
  return r;
}

}  // namespace mlml
