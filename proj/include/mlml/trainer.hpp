#pragma once

/**
 * Deterministic mini-batch training with any loss pair or SPLC wrapper,
 * plus the per-epoch diagnostics: probability histograms split by label
 * status and the audit of SPLC corrections against the true labels.
 *
 * Shuffling, initialization and every other random draw derive from
 * TrainConfig::seed, so a (dataset, config) pair always reproduces the same
 * parameters and diagnostics.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "mlml/correction.hpp"
#include "mlml/datagen.hpp"
#include "mlml/losses.hpp"
#include "mlml/metrics.hpp"
#include "mlml/model.hpp"
#include "mlml/optim.hpp"

namespace mlml {

using TrainLoss = std::variant<LossConfig, SplcConfig>;

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  std::optional<double> ema_decay;
  std::uint64_t seed = 0;
  TrainLoss loss = LossConfig{};
  ModelSpec model;
  /// Diagnostics every this many epochs (and after the last); 0 disables.
  int diagnostics_every = 1;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    optimizer.validate();
    schedule.validate();
    if (ema_decay && !(*ema_decay >= 0.0 && *ema_decay < 1.0))
      throw ConfigError("ema decay must be in [0,1)");
    std::visit([](const auto& l) { l.validate(); }, loss);
  }
};

inline constexpr std::size_t kHistogramBins = 20;

enum class LabelStatus { labeled_positive = 0, missing = 1, true_negative = 2 };

inline std::string_view to_string(LabelStatus s) {
  switch (s) {
    case LabelStatus::labeled_positive: return "tp";
    case LabelStatus::missing: return "fn";
    case LabelStatus::true_negative: return "tn";
  }
  return "?";
}

/// Bin of width 1/20 holding p; p == 1 falls in the last bin.
inline std::size_t histogram_bin(double p) {
  const auto b = static_cast<std::size_t>(std::floor(p * static_cast<double>(kHistogramBins)));
  return std::min(b, kHistogramBins - 1);
}

struct EpochDiagnostics {
  int epoch = 0;
  double train_loss = 0.0;
  /// False when the dataset carries no true labels.
  bool enabled = false;
  std::array<std::array<std::size_t, kHistogramBins>, 3> histogram{};
  CorrectionAudit audit;
  std::optional<MetricsReport> eval;

  std::size_t count(LabelStatus s, std::size_t bin) const {
    return histogram[static_cast<std::size_t>(s)][bin];
  }
  std::size_t total(LabelStatus s) const {
    const auto& h = histogram[static_cast<std::size_t>(s)];
    return std::accumulate(h.begin(), h.end(), std::size_t{0});
  }

  friend bool operator==(const EpochDiagnostics& a, const EpochDiagnostics& b) {
    auto same_audit = a.audit.precision == b.audit.precision &&
                      a.audit.recall == b.audit.recall &&
                      a.audit.decisions == b.audit.decisions;
    auto same_eval = a.eval.has_value() == b.eval.has_value() &&
                     (!a.eval || (a.eval->map == b.eval->map && a.eval->of1 == b.eval->of1 &&
                                  a.eval->cf1 == b.eval->cf1));
    return a.epoch == b.epoch && a.train_loss == b.train_loss && a.enabled == b.enabled &&
           a.histogram == b.histogram && same_audit && same_eval;
  }
};

/// Status histogram of the model's training-set probabilities and the audit
/// of `decisions`. Without true labels only `enabled = false` is reported.
inline EpochDiagnostics diagnostics_snapshot(const Model& model, const Dataset& data,
                                             std::span<const CorrectionDecision> decisions) {
  EpochDiagnostics d;
  if (!data.true_labels) return d;
  d.enabled = true;
  const RealMatrix probs = predict(model, data.features);
  const LabelMatrix& truth = *data.true_labels;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    for (std::size_t c = 0; c < probs.cols(); ++c) {
      LabelStatus s = data.labels(i, c)  ? LabelStatus::labeled_positive
                      : truth(i, c)      ? LabelStatus::missing
                                         : LabelStatus::true_negative;
      ++d.histogram[static_cast<std::size_t>(s)][histogram_bin(probs(i, c))];
    }
  }
  d.audit = correction_audit(decisions, data.labels, truth);
  return d;
}

struct TrainResult {
  Model model;
  /// EMA shadow weights when enabled; otherwise equal to `model`.
  Model eval_model;
  std::vector<EpochDiagnostics> diagnostics;
  std::vector<CorrectionDecision> decisions;
  /// Per-epoch mean training loss (every epoch, regardless of cadence).
  std::vector<double> epoch_loss;
};

namespace detail {

inline RealMatrix gather_rows(const RealMatrix& m, std::span<const std::size_t> ids) {
  RealMatrix out(ids.size(), m.cols());
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::ranges::copy(m.row(ids[i]), out.row(i).begin());
  return out;
}

inline LabelMatrix gather_rows(const LabelMatrix& m, std::span<const std::size_t> ids) {
  LabelMatrix out(ids.size(), m.cols());
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::ranges::copy(m.row(ids[i]), out.row(i).begin());
  return out;
}

}  // namespace detail

inline TrainResult train(const Dataset& data, const TrainConfig& cfg,
                         const Dataset* eval = nullptr) {
  cfg.validate();
  data.validate();
  const std::size_t n = data.size();
  if (n == 0) throw ConfigError("cannot train on an empty dataset");

  TrainResult res;
  res.model = Model::make(cfg.model, data.dim(), data.classes(), cfg.seed);
  Model& model = res.model;
  Optimizer opt(cfg.optimizer, model.param_count());
  std::optional<Ema> ema;
  if (cfg.ema_decay) ema.emplace(*cfg.ema_decay, model.params());
  Model eval_model = model;

  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = static_cast<long>(batches) * cfg.epochs;
  long step = 0;
  std::vector<std::size_t> order(n);
  std::vector<CorrectionDecision> epoch_decisions;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    epoch_decisions.clear();
    double loss_sum = 0.0;

    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      std::span<const std::size_t> ids(order.data() + lo, hi - lo);
      const RealMatrix x = detail::gather_rows(data.features, ids);
      const LabelMatrix y = detail::gather_rows(data.labels, ids);
      const RealMatrix logits = model.forward(x);
      if (!std::ranges::all_of(logits.flat(), [](double v) { return std::isfinite(v); }))
        throw DivergenceError(epoch, b);
      const BatchLoss bl = std::visit(
          [&](const auto& l) -> BatchLoss {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, SplcConfig>) {
              return splc_total_loss(logits, y, ids, epoch, l, &epoch_decisions);
            } else {
              return total_loss(logits, y, l);
            }
          },
          cfg.loss);
      if (!std::isfinite(bl.loss)) throw DivergenceError(epoch, b);
      loss_sum += bl.loss * static_cast<double>(ids.size());
      const std::vector<double> g = model.backward(x, bl.grad);
      opt.step(model.params(), g, cfg.schedule.lr_at(step, total_steps));
      if (ema) ema->update(model.params());
      ++step;
    }

    const double epoch_loss = loss_sum / static_cast<double>(n);
    res.epoch_loss.push_back(epoch_loss);
    res.decisions.insert(res.decisions.end(), epoch_decisions.begin(), epoch_decisions.end());

    const bool due = cfg.diagnostics_every > 0 &&
                     (epoch % cfg.diagnostics_every == 0 || epoch == cfg.epochs);
    if (due) {
      if (ema) std::ranges::copy(ema->shadow(), eval_model.params().begin());
      else eval_model = model;
      EpochDiagnostics d = diagnostics_snapshot(eval_model, data, epoch_decisions);
      d.epoch = epoch;
      d.train_loss = epoch_loss;
      if (eval && eval->true_labels) {
        d.eval = evaluate(predict(eval_model, eval->features), *eval->true_labels);
      }
      res.diagnostics.push_back(std::move(d));
    }
  }
  res.eval_model = model;
  if (ema) std::ranges::copy(ema->shadow(), res.eval_model.params().begin());
  return res;
}

// ----------------------------------------------------------------------------
// Two-stage pseudo-label baseline
// ----------------------------------------------------------------------------

struct PseudoLabelConfig {
  double threshold = 0.5;
  TrainConfig stage_one;
  TrainConfig stage_two;

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0))
      throw ConfigError("pseudo-label threshold must be in (0,1)");
    stage_one.validate();
    stage_two.validate();
  }
};

struct PseudoLabelResult {
  TrainResult stage_one;
  TrainResult stage_two;
  LabelMatrix relabeled;
  std::size_t flipped = 0;
};

/// Train, relabel the training set with the trained model, retrain from
/// scratch on the relabeled data.
inline PseudoLabelResult train_pseudo_label(const Dataset& data, const PseudoLabelConfig& cfg,
                                            const Dataset* eval = nullptr) {
  cfg.validate();
  PseudoLabelResult r;
  r.stage_one = train(data, cfg.stage_one, eval);
  const RealMatrix probs = predict(r.stage_one.eval_model, data.features);
  r.relabeled = pseudo_label_relabel(probs, data.labels, cfg.threshold);
  for (std::size_t i = 0; i < r.relabeled.size(); ++i)
    r.flipped += r.relabeled.flat()[i] != data.labels.flat()[i];
  Dataset second = data;
  second.labels = r.relabeled;
  // Pseudo positives may be absent from the truth; diagnostics on stage two
  // still classify them by the original observed labels.
  second.true_labels.reset();
  r.stage_two = train(second, cfg.stage_two, eval);
  return r;
}

// ----------------------------------------------------------------------------
// Diagnostics CSV
// ----------------------------------------------------------------------------

inline void write_diagnostics_csv(std::ostream& os, std::span<const EpochDiagnostics> diags) {
  os << "epoch,kind,name,bin_lo,bin_hi,value\n";
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  const double w = 1.0 / static_cast<double>(kHistogramBins);
  for (const auto& d : diags) {
    if (d.enabled) {
      for (auto s : {LabelStatus::labeled_positive, LabelStatus::missing,
                     LabelStatus::true_negative}) {
        for (std::size_t b = 0; b < kHistogramBins; ++b) {
          os << d.epoch << ",hist," << to_string(s) << ',' << std::setprecision(2)
             << std::fixed << w * static_cast<double>(b) << ','
             << w * static_cast<double>(b + 1) << std::defaultfloat
             << std::setprecision(std::numeric_limits<double>::max_digits10) << ','
             << d.count(s, b) << '\n';
        }
      }
    }
    auto summary = [&](std::string_view name, double v) {
      os << d.epoch << ",summary," << name << ",,," << v << '\n';
    };
    summary("train_loss", d.train_loss);
    if (d.enabled) {
      summary("splc_precision", d.audit.precision);
      summary("splc_recall", d.audit.recall);
      summary("splc_decisions", static_cast<double>(d.audit.decisions));
    }
    if (d.eval) {
      summary("eval_map", d.eval->map);
      summary("eval_cf1", d.eval->cf1);
      summary("eval_of1", d.eval->of1);
    }
  }
  os.precision(old);
}

}  // namespace mlml
