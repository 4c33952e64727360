#pragma once

/**
 * Offline analysis: gradient-magnitude curves of single loss branches over a
 * probability grid, hyper-parameter sweeps and multi-loss comparisons on
 * seeded experiments, each emitted as CSV.
 */

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <ostream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mlml/benchmark.hpp"
#include "mlml/config.hpp"

namespace mlml {

// ----------------------------------------------------------------------------
// Loss branches
// ----------------------------------------------------------------------------

/// One side of one loss family, e.g. "hill_neg" or "focal_margin_pos".
struct LossBranch {
  bool positive = false;
  PositiveLoss pos = PositiveLoss::bce;
  NegativeLoss neg = NegativeLoss::bce;

  std::string family() const {
    return std::string(positive ? to_string(pos) : to_string(neg));
  }
  std::string name() const { return family() + (positive ? "_pos" : "_neg"); }

  LossValue evaluate(double x, const LossConfig& cfg, std::size_t num_classes) const {
    LossConfig c = cfg;
    c.positive = pos;
    c.negative = neg;
    return positive ? c.positive_term(x) : c.negative_term(x, num_classes);
  }

  friend bool operator==(const LossBranch&, const LossBranch&) = default;
};

inline std::vector<LossBranch> all_loss_branches() {
  std::vector<LossBranch> out;
  for (auto p : {PositiveLoss::bce, PositiveLoss::bce_ls, PositiveLoss::focal,
                 PositiveLoss::asl, PositiveLoss::focal_margin})
    out.push_back({true, p, NegativeLoss::bce});
  for (auto n : {NegativeLoss::bce, NegativeLoss::bce_ls, NegativeLoss::wan,
                 NegativeLoss::focal, NegativeLoss::asl, NegativeLoss::mse,
                 NegativeLoss::hill})
    out.push_back({false, PositiveLoss::bce, n});
  return out;
}

/// "<family>_pos", "<family>_neg", or a bare family name, which means the
/// negative branch when the family has one.
inline LossBranch parse_loss_branch(std::string_view s) {
  auto strip = [&](std::string_view suffix) {
    if (s.size() > suffix.size() && s.substr(s.size() - suffix.size()) == suffix) {
      s.remove_suffix(suffix.size());
      return true;
    }
    return false;
  };
  const bool want_pos = strip("_pos");
  const bool want_neg = !want_pos && strip("_neg");
  if (!want_pos) {
    if (auto n = parse_negative_loss(s)) return {false, PositiveLoss::bce, *n};
    if (want_neg) throw ConfigError("no negative branch named '" + std::string(s) + "'");
  }
  if (auto p = parse_positive_loss(s)) return {true, *p, NegativeLoss::bce};
  throw ConfigError("unknown loss branch '" + std::string(s) + "'");
}

/// Hyper-parameters that shape the branch, as a JSON object.
inline nlohmann::json branch_params(const LossBranch& b, const LossConfig& cfg,
                                    std::size_t num_classes) {
  const std::string fam = b.family();
  if (fam == "wan") return {{"w", cfg.wan_weight_for(num_classes)}};
  if (fam == "bce" || fam == "mse") return nlohmann::json::object();
  const nlohmann::json all = to_json(cfg);
  return all.at(fam);
}

/// "hill_neg:lambda=2" style selector: a branch plus parameter overrides.
struct BranchSpec {
  LossBranch branch;
  LossConfig params;
};

inline BranchSpec parse_branch_spec(std::string_view text) {
  const auto parts = detail::split(text, ':');
  BranchSpec s{parse_loss_branch(parts[0]), LossConfig{}};
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("expected key=value in '" + std::string(parts[i]) + "'");
    const auto key = parts[i].substr(0, eq);
    detail::apply_param(s.params, s.branch.family(), key,
                        detail::parse_number(parts[i].substr(eq + 1), key));
  }
  s.params.validate();
  return s;
}

// ----------------------------------------------------------------------------
// Gradient curves
// ----------------------------------------------------------------------------

/// p_i = lo + i (hi - lo) / (points - 1), strictly inside (0,1).
struct GridSpec {
  std::size_t points = 999;
  double lo = 0.001;
  double hi = 0.999;

  std::vector<double> values() const {
    if (!(lo > 0.0 && hi < 1.0)) throw DomainError("probability grid must lie inside (0,1)");
    if (points < 2 || !(lo < hi)) throw ConfigError("grid needs >= 2 points and lo < hi");
    std::vector<double> p(points);
    const double step = (hi - lo) / static_cast<double>(points - 1);
    for (std::size_t i = 0; i < points; ++i) p[i] = lo + step * static_cast<double>(i);
    p.back() = hi;
    return p;
  }
};

struct GradPoint {
  double p = 0.0;
  double grad = 0.0;
};

struct GradCurve {
  std::string loss;
  nlohmann::json params;
  std::vector<GradPoint> samples;
};

inline GradCurve gradient_curve(const LossBranch& branch, const LossConfig& params,
                                const GridSpec& grid = {}, std::size_t num_classes = 2) {
  params.validate();
  GradCurve c{branch.name(), branch_params(branch, params, num_classes), {}};
  for (double p : grid.values()) {
    const double g = branch.evaluate(logit(p), params, num_classes).grad;
    if (!std::isfinite(g)) throw DomainError("non-finite gradient on curve " + c.loss);
    c.samples.push_back({p, std::abs(g)});
  }
  return c;
}

namespace detail {

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string csv_quote(std::string_view s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  return csv_quote(s);
}

}  // namespace detail

inline void write_curves_csv(std::ostream& os, std::span<const GradCurve> curves) {
  os << "loss,param_json,p,grad\n";
  for (const auto& c : curves) {
    const std::string params = detail::csv_quote(c.params.dump());
    for (const auto& s : c.samples)
      os << c.loss << ',' << params << ',' << detail::fmt(s.p) << ',' << detail::fmt(s.grad)
         << '\n';
  }
}

// ----------------------------------------------------------------------------
// Experiments: sweeps and comparisons
// ----------------------------------------------------------------------------

/// Training data, held-out data and the training configuration of one run.
struct Experiment {
  Dataset train;
  Dataset test;
  TrainConfig config;
};

using ExperimentFactory = std::function<Experiment(std::uint64_t seed)>;

/// Every seed builds its own benchmark draw and training seed.
inline ExperimentFactory benchmark_experiments(const BenchmarkSpec& spec,
                                               const TrainLoss& loss = LossConfig{}) {
  return [spec, loss](std::uint64_t seed) {
    BenchmarkData d = make_benchmark(spec, seed);
    return Experiment{std::move(d.train), std::move(d.test),
                      benchmark_train_config(spec, loss, seed)};
  };
}

/// Fixed data; only the training seed varies.
inline ExperimentFactory fixed_data_experiments(Dataset train_data, Dataset test_data,
                                                TrainConfig base) {
  return [train_data = std::move(train_data), test_data = std::move(test_data),
          base](std::uint64_t seed) {
    TrainConfig c = base;
    c.seed = seed;
    return Experiment{train_data, test_data, c};
  };
}

struct RunOutcome {
  MetricsReport test;
  std::vector<double> epoch_loss;
};

inline RunOutcome run_experiment(const Experiment& e) {
  const LabelMatrix& truth = e.test.true_labels ? *e.test.true_labels : e.test.labels;
  const TrainResult r = train(e.train, e.config, nullptr);
  return {evaluate(predict(r.eval_model, e.test.features), truth), r.epoch_loss};
}

namespace detail {

/// Runs task(i) for i in [0, n) on up to `jobs` threads; results are stored
/// by index so the output does not depend on the thread count.
template <typename Result, typename Task>
std::vector<Result> parallel_map(std::size_t n, unsigned jobs, Task task) {
  std::vector<Result> out(n);
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = task(i);
    return out;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n || failure) return;
        i = next++;
      }
      try {
        Result r = task(i);
        out[i] = std::move(r);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (unsigned t = 0; t < std::min<std::size_t>(jobs, n); ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace detail

enum class SweepAxis { margin, tau, start_epoch, lambda };

inline std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::margin: return "m";
    case SweepAxis::tau: return "tau";
    case SweepAxis::start_epoch: return "start_epoch";
    case SweepAxis::lambda: return "lambda";
  }
  return "?";
}

inline SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "m" || s == "margin") return SweepAxis::margin;
  if (s == "tau") return SweepAxis::tau;
  if (s == "start_epoch" || s == "start") return SweepAxis::start_epoch;
  if (s == "lambda") return SweepAxis::lambda;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "'");
}

/// Sets the swept hyper-parameter. The focal-margin margin and Hill lambda
/// apply to the loss pair (inside SPLC when wrapped); tau and start epoch
/// need an SPLC loss.
inline void apply_sweep_value(TrainConfig& cfg, SweepAxis axis, double value) {
  auto* splc = std::get_if<SplcConfig>(&cfg.loss);
  LossConfig& pair = splc ? splc->base : std::get<LossConfig>(cfg.loss);
  switch (axis) {
    case SweepAxis::margin: pair.focal_margin.margin = value; break;
    case SweepAxis::lambda: pair.hill.lambda = value; break;
    case SweepAxis::tau:
    case SweepAxis::start_epoch:
      if (!splc) throw ConfigError("sweeping " + std::string(to_string(axis)) +
                                   " needs an splc loss");
      if (axis == SweepAxis::tau) {
        splc->tau = value;
      } else {
        if (value != std::floor(value)) throw ConfigError("start_epoch must be an integer");
        splc->start_epoch = static_cast<int>(value);
      }
      break;
  }
  cfg.validate();
}

struct SweepRow {
  SweepAxis axis = SweepAxis::margin;
  double value = 0.0;
  std::uint64_t seed = 0;
  RunOutcome outcome;
};

/// One training run per (value, seed), value-major; each seed shares its
/// experiment across values.
inline std::vector<SweepRow> sweep(SweepAxis axis, std::span<const double> values,
                                   std::span<const std::uint64_t> seeds,
                                   const ExperimentFactory& experiment, unsigned jobs = 1) {
  if (values.empty() || seeds.empty()) throw ConfigError("sweep needs values and seeds");
  const std::size_t n = values.size() * seeds.size();
  return detail::parallel_map<SweepRow>(n, jobs, [&](std::size_t i) {
    const double v = values[i / seeds.size()];
    const std::uint64_t seed = seeds[i % seeds.size()];
    Experiment e = experiment(seed);
    apply_sweep_value(e.config, axis, v);
    return SweepRow{axis, v, seed, run_experiment(e)};
  });
}

inline void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
  os << "axis,value,seed,map,cf1,of1\n";
  for (const auto& r : rows)
    os << to_string(r.axis) << ',' << detail::fmt(r.value) << ',' << r.seed << ','
       << detail::fmt(r.outcome.test.map) << ',' << detail::fmt(r.outcome.test.cf1) << ','
       << detail::fmt(r.outcome.test.of1) << '\n';
}

struct CompareRow {
  std::string loss;
  std::uint64_t seed = 0;
  RunOutcome outcome;
};

/// One run per (loss, seed), loss-major. `losses` are grammar strings.
inline std::vector<CompareRow> compare(std::span<const std::string> losses,
                                       std::span<const std::uint64_t> seeds,
                                       const ExperimentFactory& experiment, unsigned jobs = 1) {
  if (losses.empty() || seeds.empty()) throw ConfigError("compare needs losses and seeds");
  std::vector<TrainLoss> parsed;
  for (const auto& l : losses) parsed.push_back(parse_loss(l));
  const std::size_t n = losses.size() * seeds.size();
  return detail::parallel_map<CompareRow>(n, jobs, [&](std::size_t i) {
    const std::size_t l = i / seeds.size();
    const std::uint64_t seed = seeds[i % seeds.size()];
    Experiment e = experiment(seed);
    e.config.loss = parsed[l];
    e.config.validate();
    return CompareRow{losses[l], seed, run_experiment(e)};
  });
}

inline void write_compare_csv(std::ostream& os, std::span<const CompareRow> rows) {
  os << "loss,seed,map,cf1,of1,cp,cr,op,or\n";
  for (const auto& r : rows) {
    const auto& t = r.outcome.test;
    os << detail::csv_field(r.loss) << ',' << r.seed;
    for (double v : {t.map, t.cf1, t.of1, t.cp, t.cr, t.op, t.or_}) os << ',' << detail::fmt(v);
    os << '\n';
  }
}

}  // namespace mlml
