// mlml: reproducible experiments on synthetic multi-label data with missing
// labels. Every run resolves its configuration (flags > --config file >
// defaults), writes a manifest before producing results, and can be rerun
// from that manifest with `mlml rerun`.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mlml/analysis.hpp"
#include "mlml/benchmark.hpp"
#include "mlml/config.hpp"
#include "mlml/datagen.hpp"
#include "mlml/metrics.hpp"
#include "mlml/model.hpp"
#include "mlml/trainer.hpp"

#ifndef MLML_VERSION
#define MLML_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mlml;

namespace {

enum ExitCode {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kConfig = 3,
  kIo = 4,
  kParse = 5,
  kDivergence = 6,
  kGeneration = 7,
};

constexpr const char* kExitCodesHelp =
    "Exit codes:\n"
    "  0 success\n"
    "  1 internal error\n"
    "  2 usage error (unknown flag, missing argument)\n"
    "  3 invalid configuration or hyper-parameter\n"
    "  4 file cannot be opened or written\n"
    "  5 malformed input file\n"
    "  6 training diverged (non-finite loss)\n"
    "  7 data generation failed\n"
    "Errors are printed to stderr as one JSON line:\n"
    "  {\"error\":\"<kind>\",\"exit\":<code>,\"message\":\"...\"}\n";

constexpr const char* kLossHelp =
    "Loss selection (--loss):\n"
    "  presets: bce, focal, asl, wan, bce_ls, mse, hill, focal_margin\n"
    "    hill = pos=focal_margin,neg=hill   focal_margin = pos=focal_margin,neg=focal\n"
    "  append +splc to wrap a preset in self-paced loss correction\n"
    "  or clauses: pos=<family>[:k=v]*,neg=<family>[:k=v]*[,splc[:tau=v][:start=v]]\n"
    "Loss families and defaults:\n"
    "  bce           (no parameters)\n"
    "  focal         gamma=2 alpha_pos=1 alpha_neg=1\n"
    "  asl           gamma_pos=0 gamma_neg=4 m=0.05 shift_pos=1 floor=1e-4\n"
    "  focal_margin  m=1 gamma=2 (positive branch only)\n"
    "  hill          lambda=1.5 (negative branch only)\n"
    "  wan           w=1/(K-1) (negative branch only)\n"
    "  bce_ls        eps=0.1\n"
    "  mse           (negative branch only)\n"
    "  splc          tau=0.6 start=1 (corrections from epoch start+1)\n";

std::string kind_name(int code) {
  switch (code) {
    case kUsage: return "usage";
    case kConfig: return "config";
    case kIo: return "io";
    case kParse: return "parse";
    case kDivergence: return "divergence";
    case kGeneration: return "generation";
    default: return "internal";
  }
}

/// A flag value that does not parse as its declared type.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int report_error(int code, const std::string& message) {
  std::cerr << json{{"error", kind_name(code)}, {"exit", code}, {"message", message}}.dump()
            << std::endl;
  return code;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ParseError(1, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << text;
  if (!os) throw IoError("failed writing " + path);
}

template <typename Writer>
void write_with(const std::string& path, Writer w) {
  std::ostringstream os;
  w(os);
  write_text(path, os.str());
}

void require_keys(const json& j, const json& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

bool is_count(const json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<long long>() >= 0);
}

const json& need(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null())
    throw ConfigError(std::string("missing required setting '") + key + "'");
  return j[key];
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto part : detail::split(s, ',')) {
    if (part.empty()) throw ConfigError("empty item in list '" + s + "'");
    out.emplace_back(part);
  }
  return out;
}

// ----------------------------------------------------------------------------
// Flags mapped onto configuration keys
// ----------------------------------------------------------------------------

enum class Kind { text, real, integer, uint, flag, text_list, real_list, uint_list };

struct Binding {
  std::string pointer;  // JSON pointer into the resolved config
  Kind kind;
  CLI::Option* option = nullptr;
  std::unique_ptr<std::string> text = std::make_unique<std::string>();
  std::unique_ptr<bool> flag = std::make_unique<bool>(false);
};

json convert(const Binding& b) {
  const std::string& s = *b.text;
  try {
    switch (b.kind) {
      case Kind::text: return s;
      case Kind::flag: return *b.flag;
      case Kind::real: return detail::parse_number(s, b.pointer);
      case Kind::integer: {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw ConfigError("");
        return v;
      }
      case Kind::uint: {
        std::size_t used = 0;
        if (!s.empty() && s[0] == '-') throw ConfigError("");
        const unsigned long long v = std::stoull(s, &used);
        if (used != s.size()) throw ConfigError("");
        return v;
      }
      case Kind::text_list: return split_list(s);
      case Kind::real_list: {
        json a = json::array();
        for (const auto& v : split_list(s)) a.push_back(detail::parse_number(v, b.pointer));
        return a;
      }
      case Kind::uint_list: {
        json a = json::array();
        for (const auto& v : split_list(s)) {
          std::size_t used = 0;
          if (v[0] == '-') throw ConfigError("");
          a.push_back(std::stoull(v, &used));
          if (used != v.size()) throw ConfigError("");
        }
        return a;
      }
    }
  } catch (const std::exception&) {
  }
  throw UsageError("bad value '" + s + "' for " + b.option->get_name());
}

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::vector<std::unique_ptr<Binding>> bindings;
  std::string config_path;
  std::string manifest_path;
  std::function<json()> defaults;
  /// Validates and canonicalizes; the result is what the manifest records.
  std::function<json(json)> normalize;
  /// Output path keys; `rerun --out-dir` redirects them.
  std::vector<std::string> output_keys;
  bool output_is_dir = false;
  std::function<std::map<std::string, std::string>(const json&)> artifacts;
  std::function<json(const json&)> run;

  void bind(const std::string& flag, const std::string& pointer, Kind kind,
            const std::string& help) {
    auto b = std::make_unique<Binding>();
    b->pointer = pointer;
    b->kind = kind;
    if (kind == Kind::flag) {
      b->option = app->add_flag(flag, *b->flag, help);
    } else {
      b->option = app->add_option(flag, *b->text, help);
    }
    bindings.push_back(std::move(b));
  }

  json resolve() const {
    json j = defaults();
    if (!config_path.empty()) {
      const json file = read_json_file(config_path);
      require_keys(file, j, "config file " + config_path);
      for (const auto& [k, v] : file.items()) {
        if (j[k].is_object() && v.is_object()) j[k].update(v);
        else j[k] = v;
      }
    }
    for (const auto& b : bindings) {
      if (b->option->count() == 0) continue;
      j[json::json_pointer(b->pointer)] = convert(*b);
    }
    return normalize(std::move(j));
  }
};

std::string default_manifest_path(const Command& c, const json& cfg) {
  const std::string out = need(cfg, c.output_keys.front().c_str()).get<std::string>();
  if (c.output_is_dir) return (fs::path(out) / "manifest.json").string();
  return out + ".manifest.json";
}

std::optional<std::uint64_t> primary_seed(const json& cfg) {
  if (cfg.contains("seed") && is_count(cfg["seed"])) return cfg["seed"].get<std::uint64_t>();
  return std::nullopt;
}

/// Writes the manifest, runs the command, then rewrites the manifest with
/// the outcome. Exceptions propagate after the manifest records them.
int execute(const Command& c, const json& cfg, const std::vector<std::string>& argv,
            std::string manifest_path) {
  if (manifest_path.empty()) manifest_path = default_manifest_path(c, cfg);
  json m;
  m["tool"] = "mlml";
  m["version"] = MLML_VERSION;
  m["command"] = c.name;
  m["argv"] = argv;
  m["config"] = cfg;
  if (auto s = primary_seed(cfg)) m["seed"] = *s;
  else if (cfg.contains("seeds")) m["seed"] = cfg["seeds"];
  else m["seed"] = nullptr;
  m["artifacts"] = c.artifacts(cfg);
  m["started_at"] = utc_now();
  m["status"] = "running";
  write_text(manifest_path, m.dump(2) + "\n");

  const auto t0 = std::chrono::steady_clock::now();
  auto finish = [&](const std::string& status) {
    m["status"] = status;
    m["finished_at"] = utc_now();
    m["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(manifest_path, m.dump(2) + "\n");
  };
  try {
    m["summary"] = c.run(cfg);
  } catch (const std::exception& e) {
    m["error"] = e.what();
    try {
      finish("failed");
    } catch (...) {
    }
    throw;
  }
  finish("ok");
  std::cout << "manifest: " << manifest_path << "\n";
  return kOk;
}

// ----------------------------------------------------------------------------
// Shared training configuration
// ----------------------------------------------------------------------------

/// Flat training keys accepted in config files and train overrides.
json train_keys_template() {
  json j = to_json(TrainConfig{});
  j["splc"] = false;
  j["tau"] = nullptr;
  j["start_epoch"] = nullptr;
  return j;
}

/// Applies flat training keys (including the splc/tau/start_epoch shortcuts)
/// onto `c`.
void apply_train_keys(TrainConfig& c, const json& j, const std::string& where) {
  require_keys(j, train_keys_template(), where);
  json plain = j;
  for (const char* k : {"splc", "tau", "start_epoch"}) plain.erase(k);
  merge_train_config(c, plain);
  const bool wrap = j.value("splc", false);
  const bool has_tau = j.contains("tau") && !j["tau"].is_null();
  const bool has_start = j.contains("start_epoch") && !j["start_epoch"].is_null();
  if (wrap && std::holds_alternative<LossConfig>(c.loss)) {
    SplcConfig s;
    s.base = std::get<LossConfig>(c.loss);
    c.loss = s;
  }
  if (has_tau || has_start) {
    auto* s = std::get_if<SplcConfig>(&c.loss);
    if (!s) throw ConfigError("tau/start_epoch need an splc loss (use --splc)");
    try {
      if (has_tau) s->tau = j["tau"].get<double>();
      if (has_start) s->start_epoch = j["start_epoch"].get<int>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("splc settings: ") + e.what());
    }
  }
  c.validate();
}

void bind_train_flags(Command& c, const std::string& prefix) {
  const TrainConfig d;
  c.bind("--loss", prefix + "/loss", Kind::text,
         "Loss grammar string (default bce); see the loss section below");
  c.bind("--splc", prefix + "/splc", Kind::flag, "Wrap the loss in SPLC");
  c.bind("--tau", prefix + "/tau", Kind::real, "SPLC threshold (default 0.6)");
  c.bind("--start-epoch", prefix + "/start_epoch", Kind::integer,
         "SPLC start epoch; corrections begin after it (default 1)");
  c.bind("--epochs", prefix + "/epochs", Kind::integer, "Training epochs (default 30)");
  c.bind("--batch-size", prefix + "/batch_size", Kind::uint, "Mini-batch size (default 64)");
  c.bind("--optimizer", prefix + "/optimizer", Kind::text, "adam or sgd (default adam)");
  c.bind("--lr", prefix + "/lr", Kind::real, "Peak learning rate (default 1e-2)");
  c.bind("--schedule", prefix + "/schedule", Kind::text,
         "one_cycle or constant (default one_cycle)");
  c.bind("--warmup", prefix + "/warmup", Kind::real,
         "One-cycle warm-up fraction of steps (default 0.3)");
  c.bind("--weight-decay", prefix + "/weight_decay", Kind::real,
         "Decoupled weight decay (default 1e-4)");
  c.bind("--ema-decay", prefix + "/ema_decay", Kind::real,
         "Evaluate with EMA weights of this decay (default off)");
  c.bind("--model", prefix + "/model", Kind::text, "linear or mlp1 (default linear)");
  c.bind("--hidden", prefix + "/hidden", Kind::uint, "Hidden width for mlp1");
  c.bind("--diagnostics-every", prefix + "/diagnostics_every", Kind::integer,
         "Diagnostics cadence in epochs; 0 disables (default 1)");
}

Dataset load_dataset(const std::string& path) { return mlml::load(path); }

const LabelMatrix& eval_truth(const Dataset& d) {
  return d.true_labels ? *d.true_labels : d.labels;
}

// ----------------------------------------------------------------------------
// Experiments for compare and sweep
// ----------------------------------------------------------------------------

json experiment_defaults() {
  return {{"data", nullptr},
          {"test", nullptr},
          {"out", nullptr},
          {"seeds", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}},
          {"jobs", 1},
          {"benchmark", to_json(BenchmarkSpec{})},
          {"train", json::object()}};
}

/// Without --data: the pinned benchmark, drawn per seed. With --data: that
/// training set (and --test, else the training set with its true labels).
ExperimentFactory experiment_factory(const json& cfg) {
  const json overrides = cfg["train"];
  if (cfg["data"].is_null()) {
    const BenchmarkSpec spec = benchmark_from_json(cfg["benchmark"]);
    auto base = benchmark_experiments(spec);
    return [base, overrides](std::uint64_t seed) {
      Experiment e = base(seed);
      json o = overrides;
      o.erase("seed");
      apply_train_keys(e.config, o, "train overrides");
      return e;
    };
  }
  Dataset train_data = load_dataset(cfg["data"].get<std::string>());
  Dataset test_data = cfg["test"].is_null() ? train_data : load_dataset(cfg["test"].get<std::string>());
  TrainConfig base;
  json o = overrides;
  o.erase("seed");
  apply_train_keys(base, o, "train overrides");
  return fixed_data_experiments(std::move(train_data), std::move(test_data), base);
}

json normalize_experiment(json j) {
  require_keys(j["train"], train_keys_template(), "train overrides");
  if (!j["data"].is_null()) j["benchmark"] = nullptr;
  else j["benchmark"] = to_json(benchmark_from_json(j["benchmark"]));
  const auto seeds = need(j, "seeds");
  if (!seeds.is_array() || seeds.empty()) throw ConfigError("seeds must be a non-empty list");
  for (const auto& s : seeds)
    if (!is_count(s)) throw ConfigError("seeds must be non-negative integers");
  if (!is_count(j["jobs"]) || j["jobs"].get<unsigned>() < 1)
    throw ConfigError("jobs must be >= 1");
  need(j, "out");
  // Validate the overrides now rather than inside a worker.
  TrainConfig probe;
  apply_train_keys(probe, j["train"], "train overrides");
  return j;
}

std::vector<std::uint64_t> seeds_of(const json& cfg) {
  return cfg["seeds"].get<std::vector<std::uint64_t>>();
}

// ----------------------------------------------------------------------------
// Commands
// ----------------------------------------------------------------------------

void setup_gen_data(Command& c) {
  c.app->description("Generate a synthetic multi-label dataset from a planted linear model");
  c.defaults = [] {
    json j = to_json(GeneratorSpec{});
    j["out"] = nullptr;
    return j;
  };
  c.bind("--out,-o", "/out", Kind::text, "Output dataset (JSONL)");
  c.bind("--n-samples", "/n_samples", Kind::uint, "Samples (default 1000)");
  c.bind("--n-features", "/n_features", Kind::uint, "Feature dimension D (default 32)");
  c.bind("--n-classes", "/n_classes", Kind::uint, "Classes K (default 16)");
  c.bind("--positive-rate", "/positive_rate", Kind::real, "Per-class positive rate (default 0.2)");
  c.bind("--correlation", "/correlation", Kind::real,
         "Share of class weights drawn from topic directions (default 0.3)");
  c.bind("--topics", "/n_topics", Kind::uint, "Number of topic directions (default 4)");
  c.bind("--weight-scale", "/weight_scale", Kind::real, "Planted weight scale (default 3)");
  c.bind("--noise", "/noise", Kind::real, "Logit noise standard deviation (default 0)");
  c.bind("--margin", "/margin", Kind::real,
         "Label-free band half-width around class boundaries (default 0)");
  c.bind("--seed", "/seed", Kind::uint, "Random seed (default 0)");
  c.output_keys = {"out"};
  c.normalize = [](json j) {
    need(j, "out");
    const std::string out = j["out"];
    j.erase("out");
    json g = to_json(generator_from_json(j));
    g["out"] = out;
    return g;
  };
  c.artifacts = [](const json& j) {
    return std::map<std::string, std::string>{{"dataset", j["out"]}};
  };
  c.run = [](const json& j) {
    json g = j;
    g.erase("out");
    const Dataset d = generate(generator_from_json(g));
    save(j["out"].get<std::string>(), d);
    return json{{"samples", d.size()}, {"avg_positives", average_positives(d.labels)}};
  };
}

void setup_corrupt(Command& c) {
  c.app->description("Drop positives: keep min(n, floor(n(1-r))+1) of each sample's n");
  c.defaults = [] {
    return json{{"input", nullptr}, {"out", nullptr}, {"ratio", nullptr}, {"seed", 0}};
  };
  c.bind("--input,-i", "/input", Kind::text, "Input dataset (JSONL)");
  c.bind("--out,-o", "/out", Kind::text, "Output dataset (JSONL)");
  c.bind("--ratio,-r", "/ratio", Kind::real, "Missing ratio r in [0,1]");
  c.bind("--seed", "/seed", Kind::uint, "Random seed (default 0)");
  c.output_keys = {"out"};
  c.normalize = [](json j) {
    need(j, "input");
    need(j, "out");
    const double r = need(j, "ratio").get<double>();
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("ratio must be in [0,1]");
    if (!is_count(j["seed"])) throw ConfigError("seed must be a non-negative integer");
    return j;
  };
  c.artifacts = [](const json& j) {
    return std::map<std::string, std::string>{{"dataset", j["out"]}};
  };
  c.run = [](const json& j) {
    const Dataset in = load_dataset(j["input"]);
    const Dataset out = corrupt_dataset(in, j["ratio"].get<double>(), j["seed"].get<std::uint64_t>());
    save(j["out"].get<std::string>(), out);
    return json{{"samples", out.size()},
                {"avg_positives_before", average_positives(in.labels)},
                {"avg_positives", average_positives(out.labels)}};
  };
}

std::map<std::string, std::string> train_artifacts(const std::string& dir) {
  const fs::path d(dir);
  return {{"checkpoint", (d / "checkpoint.json").string()},
          {"diagnostics", (d / "diagnostics.csv").string()},
          {"decisions", (d / "decisions.csv").string()},
          {"metrics", (d / "metrics.json").string()}};
}

void setup_train(Command& c) {
  c.app->description(
      "Train a classifier; writes checkpoint.json, diagnostics.csv, decisions.csv and "
      "metrics.json into --out");
  c.defaults = [] {
    json j = train_keys_template();
    j["data"] = nullptr;
    j["test"] = nullptr;
    j["out"] = nullptr;
    j["threshold"] = 0.5;
    return j;
  };
  c.bind("--data,-d", "/data", Kind::text, "Training dataset (JSONL)");
  c.bind("--test", "/test", Kind::text,
         "Evaluation dataset; metrics use the training set when omitted");
  c.bind("--out,-o", "/out", Kind::text, "Output directory");
  c.bind("--seed", "/seed", Kind::uint, "Random seed (default 0)");
  c.bind("--threshold", "/threshold", Kind::real, "F1 decision threshold (default 0.5)");
  bind_train_flags(c, "");
  c.output_keys = {"out"};
  c.output_is_dir = true;
  c.normalize = [](json j) {
    need(j, "data");
    need(j, "out");
    const double t = j["threshold"].get<double>();
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("threshold must be in (0,1)");
    json keys = j;
    for (const char* k : {"data", "test", "out", "threshold"}) keys.erase(k);
    TrainConfig cfg;
    apply_train_keys(cfg, keys, "train settings");
    json out = to_json(cfg);
    for (const char* k : {"data", "test", "out", "threshold"}) out[k] = j[k];
    return out;
  };
  c.artifacts = [](const json& j) { return train_artifacts(j["out"]); };
  c.run = [](const json& j) {
    json keys = j;
    for (const char* k : {"data", "test", "out", "threshold"}) keys.erase(k);
    TrainConfig cfg;
    apply_train_keys(cfg, keys, "train settings");
    const Dataset data = load_dataset(j["data"]);
    std::optional<Dataset> test;
    if (!j["test"].is_null()) test = load_dataset(j["test"]);
    const TrainResult r = train(data, cfg, test ? &*test : nullptr);
    const Dataset& eval_set = test ? *test : data;
    const MetricsReport m =
        evaluate(predict(r.eval_model, eval_set.features), eval_truth(eval_set), j["threshold"]);
    const auto paths = train_artifacts(j["out"]);
    fs::create_directories(j["out"].get<std::string>());
    save_checkpoint(paths.at("checkpoint"), r.eval_model);
    write_with(paths.at("diagnostics"),
               [&](std::ostream& os) { write_diagnostics_csv(os, r.diagnostics); });
    write_with(paths.at("decisions"),
               [&](std::ostream& os) { write_decisions_csv(os, r.decisions); });
    write_text(paths.at("metrics"), to_json(m).dump(2) + "\n");
    return json{{"final_train_loss", r.epoch_loss.back()},
                {"map", m.map},
                {"cf1", m.cf1},
                {"of1", m.of1},
                {"corrections", r.decisions.size()}};
  };
}

void setup_eval(Command& c) {
  c.app->description("Evaluate a checkpoint on a dataset; writes metrics JSON");
  c.defaults = [] {
    return json{{"checkpoint", nullptr}, {"data", nullptr}, {"out", nullptr}, {"threshold", 0.5}};
  };
  c.bind("--checkpoint,-c", "/checkpoint", Kind::text, "Model checkpoint");
  c.bind("--data,-d", "/data", Kind::text, "Dataset (true labels used when present)");
  c.bind("--out,-o", "/out", Kind::text, "Output metrics JSON");
  c.bind("--threshold", "/threshold", Kind::real, "F1 decision threshold (default 0.5)");
  c.output_keys = {"out"};
  c.normalize = [](json j) {
    need(j, "checkpoint");
    need(j, "data");
    need(j, "out");
    const double t = j["threshold"].get<double>();
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("threshold must be in (0,1)");
    return j;
  };
  c.artifacts = [](const json& j) {
    return std::map<std::string, std::string>{{"metrics", j["out"]}};
  };
  c.run = [](const json& j) {
    const Model model = load_checkpoint(j["checkpoint"]);
    const Dataset d = load_dataset(j["data"]);
    if (d.dim() != model.inputs() || d.classes() != model.outputs())
      throw ConfigError("checkpoint shape does not match the dataset");
    const MetricsReport m = evaluate(predict(model, d.features), eval_truth(d), j["threshold"]);
    write_text(j["out"], to_json(m).dump(2) + "\n");
    return json{{"map", m.map}, {"cf1", m.cf1}, {"of1", m.of1}};
  };
}

std::vector<std::string> all_branch_names() {
  std::vector<std::string> out;
  for (const auto& b : all_loss_branches()) out.push_back(b.name());
  return out;
}

void setup_grad_curves(Command& c) {
  c.app->description(
      "Gradient magnitude |dL/dx| of loss branches over a probability grid; "
      "selectors like hill_neg:lambda=2 or asl_neg:gamma_neg=4:m=0.05");
  c.defaults = [] {
    const GridSpec g;
    return json{{"losses", all_branch_names()},
                {"points", g.points},
                {"lo", g.lo},
                {"hi", g.hi},
                {"classes", 2},
                {"out", nullptr}};
  };
  c.bind("--losses,-l", "/losses", Kind::text_list,
         "Comma-separated branch selectors (default: every branch)");
  c.bind("--points", "/points", Kind::uint, "Grid points (default 999)");
  c.bind("--lo", "/lo", Kind::real, "First grid probability (default 0.001)");
  c.bind("--hi", "/hi", Kind::real, "Last grid probability (default 0.999)");
  c.bind("--classes", "/classes", Kind::uint, "Class count K for the wan weight (default 2)");
  c.bind("--out,-o", "/out", Kind::text, "Output CSV");
  c.output_keys = {"out"};
  c.normalize = [](json j) {
    need(j, "out");
    for (const auto& l : j["losses"]) parse_branch_spec(l.get<std::string>());
    GridSpec g{j["points"].get<std::size_t>(), j["lo"].get<double>(), j["hi"].get<double>()};
    g.values();
    return j;
  };
  c.artifacts = [](const json& j) {
    return std::map<std::string, std::string>{{"curves", j["out"]}};
  };
  c.run = [](const json& j) {
    const GridSpec g{j["points"].get<std::size_t>(), j["lo"].get<double>(), j["hi"].get<double>()};
    std::vector<GradCurve> curves;
    for (const auto& l : j["losses"]) {
      const BranchSpec s = parse_branch_spec(l.get<std::string>());
      curves.push_back(gradient_curve(s.branch, s.params, g, j["classes"].get<std::size_t>()));
    }
    write_with(j["out"], [&](std::ostream& os) { write_curves_csv(os, curves); });
    return json{{"curves", curves.size()}, {"points", g.points}};
  };
}

void bind_experiment_flags(Command& c) {
  c.bind("--data,-d", "/data", Kind::text,
         "Training dataset; the pinned benchmark is drawn per seed when omitted");
  c.bind("--test", "/test", Kind::text, "Evaluation dataset for --data runs");
  c.bind("--seeds", "/seeds", Kind::uint_list, "Comma-separated seeds (default 0..9)");
  c.bind("--jobs,-j", "/jobs", Kind::uint,
         "Parallel runs; output does not depend on it (default 1)");
  c.bind("--out,-o", "/out", Kind::text, "Output CSV");
  bind_train_flags(c, "/train");
}

json summarize_maps(const std::vector<std::pair<std::string, double>>& rows) {
  std::map<std::string, std::vector<double>> by;
  for (const auto& [k, v] : rows) by[k].push_back(v);
  json s = json::object();
  for (auto& [k, v] : by) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    s[k] = {{"median_map", n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2])}, {"runs", n}};
  }
  return s;
}

void setup_compare(Command& c) {
  c.app->description("Train each loss on each seed; one CSV row per (loss, seed)");
  c.defaults = [] {
    json j = experiment_defaults();
    j["losses"] = {"bce", "hill", "focal_margin+splc"};
    return j;
  };
  c.bind("--losses,-l", "/losses", Kind::text_list,
         "Comma-separated loss presets (default bce,hill,focal_margin+splc); clause-form "
         "losses go in the \"losses\" list of a --config file");
  bind_experiment_flags(c);
  c.output_keys = {"out"};
  c.normalize = [](json j) {
    j = normalize_experiment(std::move(j));
    if (!j["losses"].is_array() || j["losses"].empty())
      throw ConfigError("losses must be a non-empty list");
    for (const auto& l : j["losses"]) parse_loss(l.get<std::string>());
    return j;
  };
  c.artifacts = [](const json& j) {
    return std::map<std::string, std::string>{{"comparison", j["out"]}};
  };
  c.run = [](const json& j) {
    const auto losses = j["losses"].get<std::vector<std::string>>();
    const auto seeds = seeds_of(j);
    const auto rows = compare(losses, seeds, experiment_factory(j), j["jobs"].get<unsigned>());
    write_with(j["out"], [&](std::ostream& os) { write_compare_csv(os, rows); });
    std::vector<std::pair<std::string, double>> maps;
    for (const auto& r : rows) maps.emplace_back(r.loss, r.outcome.test.map);
    return summarize_maps(maps);
  };
}

void setup_sweep(Command& c) {
  c.app->description(
      "Sweep one hyper-parameter (m, tau, start_epoch, lambda) over values and seeds");
  c.defaults = [] {
    json j = experiment_defaults();
    j["axis"] = nullptr;
    j["values"] = nullptr;
    j["base_config"] = nullptr;
    return j;
  };
  c.bind("--axis,-a", "/axis", Kind::text, "m, tau, start_epoch or lambda");
  c.bind("--values,-v", "/values", Kind::real_list, "Comma-separated values");
  c.bind("--base-config", "/base_config", Kind::text,
         "JSON file of training settings for the base experiment (default loss "
         "focal_margin+splc)");
  bind_experiment_flags(c);
  c.output_keys = {"out"};
  c.normalize = [](json j) {
    // The base-config file sits under the --config "train" object and flags.
    if (!j["base_config"].is_null()) {
      json base = read_json_file(j["base_config"]);
      require_keys(base, train_keys_template(), "base config");
      base.update(j["train"]);
      j["train"] = base;
      j["base_config"] = nullptr;
    }
    if (!j["train"].contains("loss")) j["train"]["loss"] = "focal_margin+splc";
    j = normalize_experiment(std::move(j));
    parse_sweep_axis(need(j, "axis").get<std::string>());
    const auto& v = need(j, "values");
    if (!v.is_array() || v.empty()) throw ConfigError("values must be a non-empty list");
    TrainConfig probe;
    apply_train_keys(probe, j["train"], "train overrides");
    for (const auto& x : v) apply_sweep_value(probe, parse_sweep_axis(j["axis"].get<std::string>()), x.get<double>());
    return j;
  };
  c.artifacts = [](const json& j) {
    return std::map<std::string, std::string>{{"sweep", j["out"]}};
  };
  c.run = [](const json& j) {
    const SweepAxis axis = parse_sweep_axis(j["axis"].get<std::string>());
    const auto values = j["values"].get<std::vector<double>>();
    const auto seeds = seeds_of(j);
    const auto rows = sweep(axis, values, seeds, experiment_factory(j), j["jobs"].get<unsigned>());
    write_with(j["out"], [&](std::ostream& os) { write_sweep_csv(os, rows); });
    std::vector<std::pair<std::string, double>> maps;
    for (const auto& r : rows) maps.emplace_back(detail::fmt(r.value), r.outcome.test.map);
    return summarize_maps(maps);
  };
}

int classify(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kUsage;
  if (dynamic_cast<const DivergenceError*>(&e)) return kDivergence;
  if (dynamic_cast<const ParseError*>(&e)) return kParse;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const GenerationError*>(&e)) return kGeneration;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e))
    return kConfig;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kIo;
  return kInternal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mlml: multi-label learning with missing labels, desk-scale experiments"};
  app.set_version_flag("--version", MLML_VERSION);
  app.require_subcommand(1);
  app.footer(std::string(kLossHelp) + "\n" + kExitCodesHelp);

  std::vector<std::unique_ptr<Command>> commands;
  auto add = [&](const std::string& name, void (*setup)(Command&)) {
    auto c = std::make_unique<Command>();
    c->name = name;
    c->app = app.add_subcommand(name);
    c->app->add_option("--config", c->config_path,
                       "JSON config file; flags override it, it overrides defaults");
    c->app->add_option("--manifest", c->manifest_path,
                       "Manifest path (default next to the output)");
    c->app->footer(std::string(kLossHelp) + "\n" + kExitCodesHelp);
    setup(*c);
    commands.push_back(std::move(c));
  };
  add("gen-data", setup_gen_data);
  add("corrupt", setup_corrupt);
  add("train", setup_train);
  add("eval", setup_eval);
  add("grad-curves", setup_grad_curves);
  add("compare", setup_compare);
  add("sweep", setup_sweep);

  std::string rerun_manifest, rerun_out_dir, rerun_new_manifest;
  CLI::App* rerun = app.add_subcommand("rerun", "Re-execute a run from its manifest");
  rerun->add_option("source", rerun_manifest, "Manifest of the original run")->required();
  rerun->add_option("--out-dir", rerun_out_dir,
                    "Write outputs into this directory instead of the original paths");
  rerun->add_option("--manifest", rerun_new_manifest, "Manifest path for the rerun");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(kUsage, e.what());
  }

  const std::vector<std::string> args(argv, argv + argc);
  try {
    if (rerun->parsed()) {
      const json m = read_json_file(rerun_manifest);
      if (m.value("tool", "") != "mlml" || !m.contains("command") || !m.contains("config"))
        throw ParseError(1, rerun_manifest + " is not an mlml manifest");
      const std::string name = m["command"];
      auto it = std::find_if(commands.begin(), commands.end(),
                             [&](const auto& c) { return c->name == name; });
      if (it == commands.end()) throw ParseError(1, "unknown command '" + name + "' in manifest");
      const Command& c = **it;
      json cfg = m["config"];
      if (!rerun_out_dir.empty()) {
        for (const auto& key : c.output_keys) {
          const std::string old = cfg[key];
          cfg[key] = c.output_is_dir ? rerun_out_dir
                                     : (fs::path(rerun_out_dir) / fs::path(old).filename()).string();
        }
      }
      cfg = c.normalize(cfg);
      return execute(c, cfg, args, rerun_new_manifest);
    }
    for (const auto& c : commands) {
      if (!c->app->parsed()) continue;
      return execute(*c, c->resolve(), args, c->manifest_path);
    }
    return report_error(kUsage, "no command given");
  } catch (const std::exception& e) {
    return report_error(classify(e), e.what());
  }
}
