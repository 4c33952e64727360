#pragma once

// Small differentiable classifiers (linear, one-hidden-layer ReLU MLP) with
// parameters kept in one flat vector so optimizers, EMA and checkpoints can
// treat them uniformly.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlml/core.hpp"
#include "mlml/losses.hpp"

namespace mlml {

enum class ModelKind { linear, mlp1 };
enum class InitKind { uniform, zeros };

struct ModelSpec {
  ModelKind kind = ModelKind::linear;
  std::size_t hidden = 0;
  InitKind init = InitKind::uniform;
};

inline std::string_view to_string(ModelKind k) {
  return k == ModelKind::linear ? "linear" : "mlp1";
}

class Model {
 public:
  Model() = default;
  Model(ModelKind kind, std::size_t in, std::size_t hidden, std::size_t out)
      : kind_(kind), in_(in), hidden_(kind == ModelKind::linear ? 0 : hidden), out_(out) {
    if (in == 0 || out == 0) throw ConfigError("model needs D >= 1 and K >= 1");
    if (kind == ModelKind::mlp1 && hidden == 0) throw ConfigError("mlp1 needs hidden >= 1");
    params_.assign(param_count(), 0.0);
  }

  static Model make(const ModelSpec& spec, std::size_t in, std::size_t out,
                    std::uint64_t seed) {
    Model m(spec.kind, in, spec.hidden, out);
    if (spec.init == InitKind::uniform) m.init_uniform(seed);
    return m;
  }

  ModelKind kind() const noexcept { return kind_; }
  std::size_t inputs() const noexcept { return in_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t outputs() const noexcept { return out_; }

  std::size_t param_count() const noexcept {
    if (kind_ == ModelKind::linear) return out_ * in_ + out_;
    return hidden_ * in_ + hidden_ + out_ * hidden_ + out_;
  }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0.
  void init_uniform(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "init"));
    std::fill(params_.begin(), params_.end(), 0.0);
    auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
      const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-a, a);
      for (std::size_t i = 0; i < count; ++i) params_[offset + i] = u(rng);
    };
    if (kind_ == ModelKind::linear) {
      fill(0, out_ * in_, in_);
    } else {
      fill(0, hidden_ * in_, in_);
      fill(hidden_ * in_ + hidden_, out_ * hidden_, hidden_);
    }
  }

  RealMatrix forward(const RealMatrix& x) const {
    check_input(x);
    if (kind_ == ModelKind::linear) return affine(x, 0, in_, out_);
    RealMatrix h = affine(x, 0, in_, hidden_);
    for (auto& v : h.flat()) v = v > 0.0 ? v : 0.0;
    return affine(h, hidden_ * in_ + hidden_, hidden_, out_);
  }

  /// Gradient of a loss w.r.t. all parameters, given d loss / d logits.
  std::vector<double> backward(const RealMatrix& x, const RealMatrix& dlogits) const {
    check_input(x);
    if (!dlogits.same_shape(x.rows(), out_))
      throw DimensionError("backward: dlogits shape mismatch");
    std::vector<double> g(params_.size(), 0.0);
    if (kind_ == ModelKind::linear) {
      accumulate_affine(x, dlogits, 0, in_, out_, g);
      return g;
    }
    RealMatrix pre = affine(x, 0, in_, hidden_);
    RealMatrix h = pre;
    for (auto& v : h.flat()) v = v > 0.0 ? v : 0.0;
    const std::size_t off2 = hidden_ * in_ + hidden_;
    accumulate_affine(h, dlogits, off2, hidden_, out_, g);
    RealMatrix dh(x.rows(), hidden_);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t k = 0; k < out_; ++k) {
        const double d = dlogits(i, k);
        if (d == 0.0) continue;
        const double* w = &params_[off2 + k * hidden_];
        for (std::size_t j = 0; j < hidden_; ++j) dh(i, j) += d * w[j];
      }
      for (std::size_t j = 0; j < hidden_; ++j)
        if (pre(i, j) <= 0.0) dh(i, j) = 0.0;
    }
    accumulate_affine(x, dh, 0, in_, hidden_, g);
    return g;
  }

  friend bool operator==(const Model&, const Model&) = default;

 private:
  void check_input(const RealMatrix& x) const {
    if (x.cols() != in_) throw DimensionError("model input width mismatch");
  }

  // y = x W^T + b with W (out x in) at params_[offset], b right after it.
  RealMatrix affine(const RealMatrix& x, std::size_t offset, std::size_t in,
                    std::size_t out) const {
    RealMatrix y(x.rows(), out);
    const double* w = &params_[offset];
    const double* b = w + out * in;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto xi = x.row(i);
      for (std::size_t k = 0; k < out; ++k) {
        double z = b[k];
        const double* wk = w + k * in;
        for (std::size_t j = 0; j < in; ++j) z += wk[j] * xi[j];
        y(i, k) = z;
      }
    }
    return y;
  }

  static void accumulate_affine(const RealMatrix& x, const RealMatrix& dy,
                                std::size_t offset, std::size_t in, std::size_t out,
                                std::vector<double>& g) {
    double* gw = &g[offset];
    double* gb = gw + out * in;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto xi = x.row(i);
      for (std::size_t k = 0; k < out; ++k) {
        const double d = dy(i, k);
        if (d == 0.0) continue;
        gb[k] += d;
        double* gwk = gw + k * in;
        for (std::size_t j = 0; j < in; ++j) gwk[j] += d * xi[j];
      }
    }
  }

  ModelKind kind_ = ModelKind::linear;
  std::size_t in_ = 0, hidden_ = 0, out_ = 0;
  std::vector<double> params_;
};

inline RealMatrix predict(const Model& model, const RealMatrix& features) {
  RealMatrix p = model.forward(features);
  for (auto& v : p.flat()) v = sigmoid(v);
  return p;
}

// ----------------------------------------------------------------------------
// Checkpoints
// ----------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const Model& m) {
  return {{"format", "mlml-checkpoint"},
          {"version", kCheckpointVersion},
          {"kind", std::string(to_string(m.kind()))},
          {"D", m.inputs()},
          {"H", m.hidden()},
          {"K", m.outputs()},
          {"params", std::vector<double>(m.params().begin(), m.params().end())}};
}

inline Model model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "mlml-checkpoint")
    throw ParseError(1, "not an mlml checkpoint");
  if (j.value("version", 0) != kCheckpointVersion)
    throw ParseError(1, "unsupported checkpoint version");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind != "linear" && kind != "mlp1") throw ParseError(1, "unknown model kind " + kind);
  Model m(kind == "linear" ? ModelKind::linear : ModelKind::mlp1,
          j.at("D").get<std::size_t>(), j.at("H").get<std::size_t>(),
          j.at("K").get<std::size_t>());
  const auto p = j.at("params").get<std::vector<double>>();
  if (p.size() != m.param_count()) throw ParseError(1, "checkpoint parameter count mismatch");
  std::copy(p.begin(), p.end(), m.params().begin());
  return m;
}

inline void save_checkpoint(const std::string& path, const Model& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << to_json(m).dump() << '\n';
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, e.what());
  }
  try {
    return model_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, e.what());
  }
}

}  // namespace mlml
