#pragma once

/**
 * Loss selection grammar and JSON forms of the configuration types.
 *
 * A loss string is either a preset, optionally followed by "+splc", or a
 * comma-separated list of clauses:
 *
 *   pos=<name>[:key=value]*     positive branch and its parameters
 *   neg=<name>[:key=value]*     negative branch and its parameters
 *   splc[:tau=0.6][:start=1]    wrap the pair in self-paced correction
 *
 * e.g. "neg=hill,pos=focal_margin:m=1" or "focal_margin+splc".
 *
 * Parameter keys:
 *   bce_ls       eps (0.1)
 *   wan          w (1/(K-1))
 *   focal        gamma (2), alpha_pos (1), alpha_neg (1)
 *   asl          gamma_pos (0), gamma_neg (4), m (0.05), shift_pos (1), floor (1e-4)
 *   hill         lambda (1.5)
 *   focal_margin m (1), gamma (2)
 *   splc         tau (0.6), start (1)
 */

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mlml/trainer.hpp"

namespace mlml {

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_number(std::string_view text, std::string_view key) {
  try {
    std::size_t used = 0;
    const std::string s(text);
    const double v = std::stod(s, &used);
    if (used != s.size()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad value '" + std::string(text) + "' for " + std::string(key));
  }
}

inline void apply_param(LossConfig& cfg, std::string_view family, std::string_view key,
                        double v) {
  auto bad = [&] {
    throw ConfigError("unknown parameter '" + std::string(key) + "' for " +
                      std::string(family));
  };
  if (family == "bce_ls") {
    if (key == "eps") cfg.ls_epsilon = v; else bad();
  } else if (family == "wan") {
    if (key == "w") cfg.wan_weight = v; else bad();
  } else if (family == "focal") {
    if (key == "gamma") cfg.focal.gamma = v;
    else if (key == "alpha_pos") cfg.focal.alpha_pos = v;
    else if (key == "alpha_neg") cfg.focal.alpha_neg = v;
    else bad();
  } else if (family == "asl") {
    if (key == "gamma_pos") cfg.asl.gamma_pos = v;
    else if (key == "gamma_neg") cfg.asl.gamma_neg = v;
    else if (key == "m") cfg.asl.margin = v;
    else if (key == "shift_pos") cfg.asl.margin_on_positive = v != 0.0;
    else if (key == "floor") cfg.asl.positive_floor = v;
    else bad();
  } else if (family == "hill") {
    if (key == "lambda") cfg.hill.lambda = v; else bad();
  } else if (family == "focal_margin") {
    if (key == "m") cfg.focal_margin.margin = v;
    else if (key == "gamma") cfg.focal_margin.gamma = v;
    else bad();
  } else {
    bad();
  }
}

}  // namespace detail

/// Named loss pairs with their customary hyper-parameters.
inline std::vector<std::string> loss_presets() {
  return {"bce", "focal", "asl", "wan", "bce_ls", "mse", "hill", "focal_margin"};
}

inline LossConfig loss_preset(std::string_view name) {
  LossConfig c;
  if (name == "bce") return c;
  if (name == "focal") {
    c.positive = PositiveLoss::focal;
    c.negative = NegativeLoss::focal;
  } else if (name == "asl") {
    c.positive = PositiveLoss::asl;
    c.negative = NegativeLoss::asl;
  } else if (name == "wan") {
    c.negative = NegativeLoss::wan;
  } else if (name == "bce_ls") {
    c.positive = PositiveLoss::bce_ls;
    c.negative = NegativeLoss::bce_ls;
  } else if (name == "mse") {
    c.negative = NegativeLoss::mse;
  } else if (name == "hill") {
    c.positive = PositiveLoss::focal_margin;
    c.negative = NegativeLoss::hill;
  } else if (name == "focal_margin") {
    c.positive = PositiveLoss::focal_margin;
    c.negative = NegativeLoss::focal;
  } else {
    throw ConfigError("unknown loss preset '" + std::string(name) + "'");
  }
  return c;
}

inline TrainLoss parse_loss(std::string_view text) {
  if (text.empty()) throw ConfigError("empty loss specification");
  if (text.find('=') == std::string_view::npos) {
    std::string_view name = text;
    bool splc = false;
    constexpr std::string_view suffix = "+splc";
    if (name.size() > suffix.size() && name.ends_with(suffix)) {
      name.remove_suffix(suffix.size());
      splc = true;
    }
    LossConfig base = loss_preset(name);
    base.validate();
    if (!splc) return base;
    SplcConfig s;
    s.base = base;
    return s;
  }

  LossConfig cfg;
  std::optional<SplcConfig> splc;
  bool have_pos = false, have_neg = false;
  for (std::string_view clause : detail::split(text, ',')) {
    auto parts = detail::split(clause, ':');
    std::string_view head = parts[0];
    std::string_view family;
    if (head == "splc") {
      splc.emplace();
    } else if (head.starts_with("pos=")) {
      family = head.substr(4);
      auto l = parse_positive_loss(family);
      if (!l) throw ConfigError("unknown positive loss '" + std::string(family) + "'");
      cfg.positive = *l;
      have_pos = true;
    } else if (head.starts_with("neg=")) {
      family = head.substr(4);
      auto l = parse_negative_loss(family);
      if (!l) throw ConfigError("unknown negative loss '" + std::string(family) + "'");
      cfg.negative = *l;
      have_neg = true;
    } else {
      throw ConfigError("unknown loss clause '" + std::string(clause) + "'");
    }
    for (std::size_t i = 1; i < parts.size(); ++i) {
      const auto eq = parts[i].find('=');
      if (eq == std::string_view::npos)
        throw ConfigError("expected key=value in '" + std::string(parts[i]) + "'");
      const auto key = parts[i].substr(0, eq);
      const double v = detail::parse_number(parts[i].substr(eq + 1), key);
      if (head == "splc") {
        if (key == "tau") splc->tau = v;
        else if (key == "start") splc->start_epoch = static_cast<int>(v);
        else throw ConfigError("unknown splc parameter '" + std::string(key) + "'");
      } else {
        detail::apply_param(cfg, family, key, v);
      }
    }
  }
  if (!have_pos && !have_neg) throw ConfigError("loss needs a pos= or neg= clause");
  cfg.validate();
  if (!splc) return cfg;
  splc->base = cfg;
  splc->validate();
  return *splc;
}

// ----------------------------------------------------------------------------
// JSON
// ----------------------------------------------------------------------------

inline nlohmann::json to_json(const LossConfig& c) {
  nlohmann::json j = {
      {"positive", std::string(to_string(c.positive))},
      {"negative", std::string(to_string(c.negative))},
      {"focal", {{"gamma", c.focal.gamma}, {"alpha_pos", c.focal.alpha_pos},
                 {"alpha_neg", c.focal.alpha_neg}}},
      {"asl", {{"gamma_pos", c.asl.gamma_pos}, {"gamma_neg", c.asl.gamma_neg},
               {"m", c.asl.margin}, {"shift_pos", c.asl.margin_on_positive},
               {"floor", c.asl.positive_floor}}},
      {"hill", {{"lambda", c.hill.lambda}}},
      {"focal_margin", {{"m", c.focal_margin.margin}, {"gamma", c.focal_margin.gamma}}},
      {"bce_ls", {{"eps", c.ls_epsilon}}},
      {"wan", {{"w", c.wan_weight ? nlohmann::json(*c.wan_weight) : nlohmann::json(nullptr)}}}};
  return j;
}

inline LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig c;
  if (j.contains("positive")) {
    auto l = parse_positive_loss(j["positive"].get<std::string>());
    if (!l) throw ConfigError("unknown positive loss in config");
    c.positive = *l;
  }
  if (j.contains("negative")) {
    auto l = parse_negative_loss(j["negative"].get<std::string>());
    if (!l) throw ConfigError("unknown negative loss in config");
    c.negative = *l;
  }
  for (const char* fam : {"focal", "asl", "hill", "focal_margin", "bce_ls", "wan"}) {
    if (!j.contains(fam)) continue;
    for (const auto& [k, v] : j[fam].items()) {
      if (v.is_null()) continue;
      detail::apply_param(c, fam, k, v.is_boolean() ? (v.get<bool>() ? 1.0 : 0.0) : v.get<double>());
    }
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const TrainLoss& l) {
  return std::visit(
      [](const auto& v) -> nlohmann::json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SplcConfig>) {
          nlohmann::json j = to_json(v.base);
          j["splc"] = {{"tau", v.tau}, {"start", v.start_epoch}};
          return j;
        } else {
          return to_json(v);
        }
      },
      l);
}

/// Accepts a grammar string or a structured object.
inline TrainLoss train_loss_from_json(const nlohmann::json& j) {
  if (j.is_string()) return parse_loss(j.get<std::string>());
  LossConfig base = loss_config_from_json(j);
  if (!j.contains("splc") || j["splc"].is_null()) return base;
  SplcConfig s;
  s.base = base;
  s.tau = j["splc"].value("tau", s.tau);
  s.start_epoch = j["splc"].value("start", s.start_epoch);
  s.validate();
  return s;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"optimizer", c.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd"},
      {"beta1", c.optimizer.beta1},
      {"beta2", c.optimizer.beta2},
      {"adam_eps", c.optimizer.eps},
      {"weight_decay", c.optimizer.weight_decay},
      {"schedule", c.schedule.kind == ScheduleKind::one_cycle ? "one_cycle" : "constant"},
      {"lr", c.schedule.max_lr},
      {"warmup", c.schedule.warmup},
      {"ema_decay", c.ema_decay ? nlohmann::json(*c.ema_decay) : nlohmann::json(nullptr)},
      {"seed", c.seed},
      {"model", std::string(to_string(c.model.kind))},
      {"hidden", c.model.hidden},
      {"diagnostics_every", c.diagnostics_every},
      {"loss", to_json(c.loss)}};
}

/// Overlays the keys present in `j` onto `c`.
inline void merge_train_config(TrainConfig& c, const nlohmann::json& j) {
  try {
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("optimizer")) {
      const auto s = j["optimizer"].get<std::string>();
      if (s == "adam") c.optimizer.kind = OptimizerKind::adam;
      else if (s == "sgd") c.optimizer.kind = OptimizerKind::sgd;
      else throw ConfigError("unknown optimizer '" + s + "'");
    }
    if (j.contains("beta1")) c.optimizer.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) c.optimizer.beta2 = j["beta2"].get<double>();
    if (j.contains("adam_eps")) c.optimizer.eps = j["adam_eps"].get<double>();
    if (j.contains("weight_decay")) c.optimizer.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("schedule")) {
      const auto s = j["schedule"].get<std::string>();
      if (s == "one_cycle") c.schedule.kind = ScheduleKind::one_cycle;
      else if (s == "constant") c.schedule.kind = ScheduleKind::constant;
      else throw ConfigError("unknown schedule '" + s + "'");
    }
    if (j.contains("lr")) c.schedule.max_lr = j["lr"].get<double>();
    if (j.contains("warmup")) c.schedule.warmup = j["warmup"].get<double>();
    if (j.contains("ema_decay")) {
      if (j["ema_decay"].is_null()) c.ema_decay.reset();
      else c.ema_decay = j["ema_decay"].get<double>();
    }
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("model")) {
      const auto s = j["model"].get<std::string>();
      if (s == "linear") c.model.kind = ModelKind::linear;
      else if (s == "mlp1") c.model.kind = ModelKind::mlp1;
      else throw ConfigError("unknown model '" + s + "'");
    }
    if (j.contains("hidden")) c.model.hidden = j["hidden"].get<std::size_t>();
    if (j.contains("diagnostics_every")) c.diagnostics_every = j["diagnostics_every"].get<int>();
    if (j.contains("loss")) c.loss = train_loss_from_json(j["loss"]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace mlml
