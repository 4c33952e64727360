#pragma once

/**
 * Per-label loss kernels for multi-label learning with missing labels.
 *
 * Every kernel takes a logit x and returns the non-negative loss
 * contribution together with d loss / d x. Positive branches are applied to
 * labels y = 1, negative branches to y = 0. Training always minimizes.
 *
 *   positive: bce, bce_ls, focal, asl, focal_margin
 *   negative: bce, bce_ls, wan, focal, asl, mse, hill
 *
 * Log terms are computed from softplus forms of the logit so that saturated
 * sigmoids never reach log(0).
 */

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "mlml/core.hpp"

namespace mlml {

struct LossValue {
  double loss = 0.0;
  double grad = 0.0;
  /// Set when the ASL positive branch hit its probability floor.
  bool saturated = false;
};

namespace detail {

inline void require_finite(double x) {
  if (!std::isfinite(x)) throw DomainError("logit must be finite");
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace detail

inline double sigmoid(double x) {
  detail::require_finite(x);
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("logit needs p in (0,1)");
  return std::log(p) - std::log1p(-p);
}

// ----------------------------------------------------------------------------
// Parameters
// ----------------------------------------------------------------------------

struct FocalParams {
  double gamma = 2.0;
  double alpha_pos = 1.0;
  double alpha_neg = 1.0;

  void validate() const {
    if (!(gamma >= 0.0)) throw ConfigError("focal gamma must be >= 0");
    if (!(alpha_pos > 0.0) || !(alpha_neg > 0.0))
      throw ConfigError("focal alpha must be > 0");
  }
};

struct AslParams {
  double gamma_pos = 0.0;
  double gamma_neg = 4.0;
  /// Probability margin; p_m = max(p - margin, 0).
  double margin = 0.05;
  bool margin_on_positive = true;
  /// Smallest shifted probability the positive branch evaluates; below it
  /// the branch reports saturation and is evaluated at the floor.
  double positive_floor = 1e-4;

  void validate() const {
    if (!(gamma_pos >= 0.0) || !(gamma_neg >= 0.0))
      throw ConfigError("asl gammas must be >= 0");
    if (!(margin >= 0.0 && margin < 1.0))
      throw ConfigError("asl margin must be in [0,1)");
    if (!(positive_floor > 0.0 && positive_floor < 1.0))
      throw ConfigError("asl positive_floor must be in (0,1)");
  }
};

struct HillParams {
  double lambda = 1.5;

  void validate() const {
    if (!std::isfinite(lambda)) throw ConfigError("hill lambda must be finite");
  }
};

struct FocalMarginParams {
  /// Logit margin; the positive loss is evaluated at sigmoid(x - margin).
  double margin = 1.0;
  double gamma = 2.0;

  void validate() const {
    if (!(margin >= 0.0)) throw ConfigError("focal_margin m must be >= 0");
    if (!(gamma >= 0.0)) throw ConfigError("focal_margin gamma must be >= 0");
  }
};

// ----------------------------------------------------------------------------
// Kernels
// ----------------------------------------------------------------------------

inline LossValue bce_pos(double x) {
  const double p = sigmoid(x);
  return {detail::softplus(-x), p - 1.0};
}

inline LossValue bce_neg(double x) {
  const double p = sigmoid(x);
  return {detail::softplus(x), p};
}

// Focal gradients, with q = 1 - p:
//   d/dx[-(1-p)^g log p]  = q^g (g p log p - q)
//   d/dx[-p^g log(1-p)]   = p^g (p - g q log q)
inline LossValue focal_pos(double x, const FocalParams& fp) {
  const double p = sigmoid(x);
  const double q = sigmoid(-x);
  const double log_p = -detail::softplus(-x);
  const double w = std::pow(q, fp.gamma);
  return {fp.alpha_pos * w * -log_p,
          fp.alpha_pos * w * (fp.gamma * p * log_p - q)};
}

inline LossValue focal_neg(double x, const FocalParams& fp) {
  const double p = sigmoid(x);
  const double q = sigmoid(-x);
  const double log_q = -detail::softplus(x);
  const double w = std::pow(p, fp.gamma);
  return {fp.alpha_neg * w * -log_q,
          fp.alpha_neg * w * (p - fp.gamma * q * log_q)};
}

/// Shifted-probability negative branch. Zero loss and gradient while
/// p <= margin (the subgradient at p == margin is 0).
inline LossValue asl_neg(double x, const AslParams& ap) {
  if (ap.margin == 0.0) {
    return focal_neg(x, FocalParams{ap.gamma_neg, 1.0, 1.0});
  }
  const double p = sigmoid(x);
  const double pm = p - ap.margin;
  if (pm <= 0.0) return {0.0, 0.0};
  const double g = ap.gamma_neg;
  const double log_1m = std::log1p(-pm);
  const double dpm_dx = p * sigmoid(-x);
  const double w = std::pow(pm, g);
  // d/dpm[-pm^g log(1-pm)] = pm^g / (1-pm) - g pm^(g-1) log(1-pm)
  const double dl_dpm =
      w / (1.0 - pm) - (g == 0.0 ? 0.0 : g * std::pow(pm, g - 1.0) * log_1m);
  return {-w * log_1m, dl_dpm * dpm_dx};
}

inline LossValue asl_pos(double x, const AslParams& ap) {
  if (!ap.margin_on_positive || ap.margin == 0.0) {
    return focal_pos(x, FocalParams{ap.gamma_pos, 1.0, 1.0});
  }
  const double p = sigmoid(x);
  const double dpm_dx = p * sigmoid(-x);
  double pm = p - ap.margin;
  bool saturated = false;
  if (pm < ap.positive_floor) {
    pm = ap.positive_floor;
    saturated = true;
  }
  const double g = ap.gamma_pos;
  const double log_pm = std::log(pm);
  const double w = std::pow(1.0 - pm, g);
  // d/dpm[-(1-pm)^g log pm] = g (1-pm)^(g-1) log pm - (1-pm)^g / pm
  const double dl_dpm =
      (g == 0.0 ? 0.0 : g * std::pow(1.0 - pm, g - 1.0) * log_pm) - w / pm;
  return {-w * log_pm, dl_dpm * dpm_dx, saturated};
}

inline LossValue mse_neg(double x) {
  const double p = sigmoid(x);
  return {p * p, 2.0 * p * p * sigmoid(-x)};
}

/// (lambda - p) p^2; for lambda = 1.5 the gradient is 3 p^2 (1-p)^2.
inline LossValue hill_neg(double x, const HillParams& hp) {
  const double p = sigmoid(x);
  const double q = sigmoid(-x);
  return {(hp.lambda - p) * p * p, p * p * q * (2.0 * hp.lambda - 3.0 * p)};
}

inline LossValue focal_margin_pos(double x, const FocalMarginParams& fm) {
  detail::require_finite(x);
  return focal_pos(x - fm.margin, FocalParams{fm.gamma, 1.0, 1.0});
}

inline LossValue wan_neg(double x, double wan_weight) {
  if (!(wan_weight > 0.0 && wan_weight <= 1.0))
    throw ConfigError("wan weight must be in (0,1]");
  const LossValue v = bce_neg(x);
  return {wan_weight * v.loss, wan_weight * v.grad};
}

namespace detail {

inline LossValue smoothed_bce(double x, double target) {
  const double p = sigmoid(x);
  double loss = 0.0;
  if (target != 0.0) loss += target * softplus(-x);
  if (target != 1.0) loss += (1.0 - target) * softplus(x);
  return {loss, p - target};
}

inline void require_epsilon(double eps) {
  if (!(eps >= 0.0 && eps < 1.0))
    throw ConfigError("label smoothing epsilon must be in [0,1)");
}

}  // namespace detail

/// Two-sided label smoothing: positives target 1 - eps/2.
inline LossValue bce_ls_pos(double x, double eps) {
  detail::require_epsilon(eps);
  return detail::smoothed_bce(x, 1.0 - 0.5 * eps);
}

/// Two-sided label smoothing: negatives target eps/2.
inline LossValue bce_ls_neg(double x, double eps) {
  detail::require_epsilon(eps);
  return detail::smoothed_bce(x, 0.5 * eps);
}

// ----------------------------------------------------------------------------
// Loss selection
// ----------------------------------------------------------------------------

enum class PositiveLoss { bce, bce_ls, focal, asl, focal_margin };
enum class NegativeLoss { bce, bce_ls, wan, focal, asl, mse, hill };

inline std::string_view to_string(PositiveLoss l) {
  switch (l) {
    case PositiveLoss::bce: return "bce";
    case PositiveLoss::bce_ls: return "bce_ls";
    case PositiveLoss::focal: return "focal";
    case PositiveLoss::asl: return "asl";
    case PositiveLoss::focal_margin: return "focal_margin";
  }
  return "?";
}

inline std::string_view to_string(NegativeLoss l) {
  switch (l) {
    case NegativeLoss::bce: return "bce";
    case NegativeLoss::bce_ls: return "bce_ls";
    case NegativeLoss::wan: return "wan";
    case NegativeLoss::focal: return "focal";
    case NegativeLoss::asl: return "asl";
    case NegativeLoss::mse: return "mse";
    case NegativeLoss::hill: return "hill";
  }
  return "?";
}

inline std::optional<PositiveLoss> parse_positive_loss(std::string_view s) {
  for (auto l : {PositiveLoss::bce, PositiveLoss::bce_ls, PositiveLoss::focal,
                 PositiveLoss::asl, PositiveLoss::focal_margin}) {
    if (to_string(l) == s) return l;
  }
  return std::nullopt;
}

inline std::optional<NegativeLoss> parse_negative_loss(std::string_view s) {
  for (auto l : {NegativeLoss::bce, NegativeLoss::bce_ls, NegativeLoss::wan,
                 NegativeLoss::focal, NegativeLoss::asl, NegativeLoss::mse,
                 NegativeLoss::hill}) {
    if (to_string(l) == s) return l;
  }
  return std::nullopt;
}

/// A positive/negative loss pair with the hyper-parameters of every family.
struct LossConfig {
  PositiveLoss positive = PositiveLoss::bce;
  NegativeLoss negative = NegativeLoss::bce;
  FocalParams focal;
  AslParams asl;
  HillParams hill;
  FocalMarginParams focal_margin;
  double ls_epsilon = 0.1;
  /// Unset means 1 / (K - 1), resolved against the class count.
  std::optional<double> wan_weight;

  void validate() const {
    focal.validate();
    asl.validate();
    hill.validate();
    focal_margin.validate();
    detail::require_epsilon(ls_epsilon);
    if (wan_weight && !(*wan_weight > 0.0 && *wan_weight <= 1.0))
      throw ConfigError("wan weight must be in (0,1]");
  }

  double wan_weight_for(std::size_t num_classes) const {
    if (wan_weight) return *wan_weight;
    return num_classes > 1 ? 1.0 / static_cast<double>(num_classes - 1) : 1.0;
  }

  LossValue positive_term(double x) const {
    switch (positive) {
      case PositiveLoss::bce: return bce_pos(x);
      case PositiveLoss::bce_ls: return bce_ls_pos(x, ls_epsilon);
      case PositiveLoss::focal: return focal_pos(x, focal);
      case PositiveLoss::asl: return asl_pos(x, asl);
      case PositiveLoss::focal_margin: return focal_margin_pos(x, focal_margin);
    }
    return {};
  }

  LossValue negative_term(double x, std::size_t num_classes) const {
    switch (negative) {
      case NegativeLoss::bce: return bce_neg(x);
      case NegativeLoss::bce_ls: return bce_ls_neg(x, ls_epsilon);
      case NegativeLoss::wan: return wan_neg(x, wan_weight_for(num_classes));
      case NegativeLoss::focal: return focal_neg(x, focal);
      case NegativeLoss::asl: return asl_neg(x, asl);
      case NegativeLoss::mse: return mse_neg(x);
      case NegativeLoss::hill: return hill_neg(x, hill);
    }
    return {};
  }

  /// "pos=<name>,neg=<name>" summary.
  std::string name() const {
    return "pos=" + std::string(to_string(positive)) +
           ",neg=" + std::string(to_string(negative));
  }
};

inline void validate_labels(const LabelMatrix& labels) {
  for (auto v : labels.flat()) {
    if (v > 1) throw DomainError("labels must be 0 or 1");
  }
}

struct BatchLoss {
  double loss = 0.0;
  RealMatrix grad;
};

/// Sum over classes, mean over samples of y L+ + (1 - y) L-.
inline BatchLoss total_loss(const RealMatrix& logits, const LabelMatrix& labels,
                            const LossConfig& cfg) {
  require_same_shape(logits, labels, "total_loss");
  validate_labels(labels);
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  BatchLoss out{0.0, RealMatrix(n, k)};
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      const LossValue v = labels(i, c) ? cfg.positive_term(logits(i, c))
                                       : cfg.negative_term(logits(i, c), k);
      out.loss += v.loss;
      out.grad(i, c) = v.grad * inv_n;
    }
  }
  out.loss *= inv_n;
  return out;
}

}  // namespace mlml
