#pragma once

// Optimizers with decoupled weight decay, learning-rate schedules and an
// exponential moving average of parameters.

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mlml/core.hpp"

namespace mlml {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam betas must be in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  }
};

/// Decay is applied to the parameters directly, before the gradient step:
///   p <- p (1 - lr wd) - lr * update
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, std::size_t n) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.kind == OptimizerKind::adam) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
  }

  void step(std::span<double> params, std::span<const double> grad, double lr) {
    if (params.size() != grad.size()) throw DimensionError("optimizer: grad size mismatch");
    ++t_;
    const double decay = 1.0 - lr * cfg_.weight_decay;
    if (cfg_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i)
        params[i] = params[i] * decay - lr * grad[i];
      return;
    }
    if (m_.size() != params.size()) throw DimensionError("optimizer: state size mismatch");
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] = params[i] * decay - lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }

  long steps() const noexcept { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

// ----------------------------------------------------------------------------
// Schedules
// ----------------------------------------------------------------------------

enum class ScheduleKind { constant, one_cycle };

/**
 * One-cycle: cosine warm-up from max_lr/div_factor to max_lr over the first
 * `warmup` fraction of steps, then cosine annealing down to
 * max_lr/(div_factor*final_div_factor) at the last step. With T steps and
 * peak index s* = floor(warmup (T-1)):
 *
 *   s <= s*: lr = max + (init - max) (1 + cos(pi s / s*)) / 2
 *   s >  s*: lr = final + (max - final) (1 + cos(pi (s - s*) / (T-1-s*))) / 2
 */
struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::one_cycle;
  double max_lr = 1e-2;
  double warmup = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  void validate() const {
    if (!(max_lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (!(warmup > 0.0 && warmup < 1.0)) throw ConfigError("warmup must be in (0,1)");
    if (!(div_factor >= 1.0) || !(final_div_factor >= 1.0))
      throw ConfigError("one-cycle div factors must be >= 1");
  }

  double lr_at(long step, long total) const {
    if (kind == ScheduleKind::constant || total <= 1) return max_lr;
    const double init = max_lr / div_factor;
    const double final_lr = init / final_div_factor;
    const long peak = static_cast<long>(std::floor(warmup * static_cast<double>(total - 1)));
    const double pi = std::numbers::pi;
    if (step <= peak) {
      if (peak == 0) return max_lr;
      const double t = static_cast<double>(step) / static_cast<double>(peak);
      return max_lr + (init - max_lr) * 0.5 * (1.0 + std::cos(pi * t));
    }
    const double t = static_cast<double>(step - peak) / static_cast<double>(total - 1 - peak);
    return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + std::cos(pi * t));
  }
};

/// shadow <- decay shadow + (1 - decay) params, after every step.
class Ema {
 public:
  Ema(double decay, std::span<const double> init) : decay_(decay), shadow_(init.begin(), init.end()) {
    if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("ema decay must be in [0,1)");
  }

  void update(std::span<const double> params) {
    for (std::size_t i = 0; i < shadow_.size(); ++i)
      shadow_[i] = decay_ * shadow_[i] + (1.0 - decay_) * params[i];
  }

  std::span<const double> shadow() const noexcept { return shadow_; }

 private:
  double decay_;
  std::vector<double> shadow_;
};

}  // namespace mlml
