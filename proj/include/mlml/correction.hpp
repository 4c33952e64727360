#pragma once

// Label correction: self-paced loss correction (SPLC) as an online rewrite
// of the negative branch, and the offline pseudo-label relabeling baseline.

#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <unordered_set>
#include <vector>

#include "mlml/core.hpp"
#include "mlml/losses.hpp"

namespace mlml {

struct SplcConfig {
  double tau = 0.6;
  /// Correction is active strictly after this many completed epochs.
  int start_epoch = 1;
  LossConfig base;

  void validate() const {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("splc tau must be in (0,1)");
    if (start_epoch < 1) throw ConfigError("splc start_epoch must be >= 1");
    base.validate();
  }

  bool active(int epoch) const noexcept { return epoch > start_epoch; }
};

/// An observed negative treated as positive during one epoch.
struct CorrectionDecision {
  int epoch = 0;
  std::size_t sample = 0;
  std::size_t cls = 0;
  double probability = 0.0;

  friend bool operator==(const CorrectionDecision&,
                         const CorrectionDecision&) = default;
};

struct SplcTerm {
  LossValue value;
  /// True when the negative label was rewritten to the positive branch.
  bool corrected = false;
  double probability = 0.0;
};

inline SplcTerm splc_loss(double x, std::uint8_t y, int epoch,
                          const SplcConfig& cfg, std::size_t num_classes) {
  if (epoch < 1) throw ConfigError("epoch must be >= 1");
  const double p = sigmoid(x);
  if (y) return {cfg.base.positive_term(x), false, p};
  if (cfg.active(epoch) && p > cfg.tau) {
    return {cfg.base.positive_term(x), true, p};
  }
  return {cfg.base.negative_term(x, num_classes), false, p};
}

/// Batch form of splc_loss. Row i of `logits` belongs to dataset sample
/// `sample_ids[i]`; decisions are appended to `decisions` when non-null.
inline BatchLoss splc_total_loss(const RealMatrix& logits,
                                 const LabelMatrix& labels,
                                 std::span<const std::size_t> sample_ids,
                                 int epoch, const SplcConfig& cfg,
                                 std::vector<CorrectionDecision>* decisions) {
  require_same_shape(logits, labels, "splc_total_loss");
  validate_labels(labels);
  if (sample_ids.size() != logits.rows())
    throw DimensionError("splc_total_loss: sample id count != rows");
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  BatchLoss out{0.0, RealMatrix(n, k)};
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      const SplcTerm t = splc_loss(logits(i, c), labels(i, c), epoch, cfg, k);
      out.loss += t.value.loss;
      out.grad(i, c) = t.value.grad * inv_n;
      if (t.corrected && decisions) {
        decisions->push_back({epoch, sample_ids[i], c, t.probability});
      }
    }
  }
  out.loss *= inv_n;
  return out;
}

/// Flips observed negatives whose probability exceeds `threshold` to 1.
inline LabelMatrix pseudo_label_relabel(const RealMatrix& probs,
                                        const LabelMatrix& labels,
                                        double threshold) {
  require_same_shape(probs, labels, "pseudo_label_relabel");
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw ConfigError("pseudo-label threshold must be in (0,1]");
  LabelMatrix out = labels;
  auto p = probs.flat();
  auto y = out.flat();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0 && p[i] > threshold) y[i] = 1;
  }
  return out;
}

struct CorrectionAudit {
  /// Fraction of corrected entries that are truly positive; 1 when empty.
  double precision = 1.0;
  /// Fraction of missing labels that were corrected.
  double recall = 0.0;
  std::size_t decisions = 0;
  std::size_t correct = 0;
  std::size_t missing = 0;
};

/// Scores a set of decisions against the ground truth. Duplicate
/// (sample, class) decisions count once.
inline CorrectionAudit correction_audit(
    std::span<const CorrectionDecision> decisions, const LabelMatrix& observed,
    const LabelMatrix& truth) {
  require_same_shape(observed, truth, "correction_audit");
  CorrectionAudit a;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth.flat()[i] == 1 && observed.flat()[i] == 0) ++a.missing;
  }
  std::unordered_set<std::size_t> seen;
  for (const auto& d : decisions) {
    if (d.sample >= truth.rows() || d.cls >= truth.cols())
      throw DimensionError("correction decision outside label matrix");
    if (!seen.insert(d.sample * truth.cols() + d.cls).second) continue;
    ++a.decisions;
    if (truth(d.sample, d.cls) == 1) ++a.correct;
  }
  if (a.decisions > 0)
    a.precision = static_cast<double>(a.correct) / static_cast<double>(a.decisions);
  if (a.missing > 0) {
    std::size_t recalled = 0;
    for (std::size_t key : seen) {
      if (truth.flat()[key] == 1 && observed.flat()[key] == 0) ++recalled;
    }
    a.recall = static_cast<double>(recalled) / static_cast<double>(a.missing);
  }
  return a;
}

inline void write_decisions_csv(std::ostream& os,
                                std::span<const CorrectionDecision> decisions) {
  os << "epoch,sample,class,probability\n";
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& d : decisions) {
    os << d.epoch << ',' << d.sample << ',' << d.cls << ',' << d.probability
       << '\n';
  }
  os.precision(old);
}

}  // namespace mlml
