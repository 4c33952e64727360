#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Scratch directory removed at the end of each test case.
struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("mlml_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

Run mlml(const Scratch& s, const std::string& args) {
  const std::string out = s / "stdout.txt", err = s / "stderr.txt";
  const std::string cmd = std::string(MLML_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

json read_json(const std::string& path) { return json::parse(slurp(path)); }

json error_line(const Run& r) {
  REQUIRE(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  return json::parse(r.err);
}

/// A small dataset plus its corrupted copy.
void make_data(const Scratch& s) {
  REQUIRE(mlml(s, "gen-data -o " + (s / "clean.jsonl") +
                      " --n-samples 150 --n-features 6 --n-classes 4 --positive-rate 0.35"
                      " --margin 0.3 --seed 2")
              .code == 0);
  REQUIRE(mlml(s, "corrupt -i " + (s / "clean.jsonl") + " -o " + (s / "train.jsonl") +
                      " -r 0.6 --seed 5")
              .code == 0);
}

}  // namespace

TEST_CASE("usage errors exit 2 with one json line") {
  Scratch s;
  Run r = mlml(s, "");
  CHECK(r.code == 2);
  CHECK(error_line(r)["error"] == "usage");

  r = mlml(s, "gen-data -o x.jsonl --bogus 3");
  CHECK(r.code == 2);
  const json e = error_line(r);
  CHECK(e["exit"] == 2);
  CHECK(e["message"].get<std::string>().find("bogus") != std::string::npos);

  CHECK(mlml(s, "train --epochs notanumber -d a -o b").code == 2);
}

TEST_CASE("help lists loss families, defaults and exit codes") {
  Scratch s;
  for (const char* cmd : {"--help", "train --help"}) {
    const Run r = mlml(s, cmd);
    CHECK(r.code == 0);
    for (const char* needle : {"focal", "gamma=2", "focal_margin  m=1", "lambda=1.5", "tau=0.6",
                               "start=1", "asl", "wan", "bce_ls", "mse", "6 training diverged"})
      CHECK(r.out.find(needle) != std::string::npos);
  }
}

TEST_CASE("gen-data writes a manifest before and after the run") {
  Scratch s;
  const Run r = mlml(s, "gen-data -o " + (s / "d.jsonl") + " --n-samples 40 --seed 9");
  REQUIRE(r.code == 0);
  const json m = read_json(s / "d.jsonl.manifest.json");
  CHECK(m["tool"] == "mlml");
  CHECK(m["command"] == "gen-data");
  CHECK(m["status"] == "ok");
  CHECK(m["seed"] == 9);
  CHECK(m["config"]["n_samples"] == 40);
  CHECK(m["config"]["positive_rate"] == 0.2);
  CHECK(m["artifacts"]["dataset"] == s / "d.jsonl");
  CHECK(m["wall_clock_seconds"].get<double>() >= 0.0);
  CHECK(m.contains("version"));
  CHECK(m["summary"]["samples"] == 40);
  CHECK(fs::exists(s / "d.jsonl"));
}

TEST_CASE("corrupt at r = 1 reports one positive per sample") {
  Scratch s;
  make_data(s);
  REQUIRE(mlml(s, "corrupt -i " + (s / "clean.jsonl") + " -o " + (s / "single.jsonl") + " -r 1").code == 0);
  const json m = read_json(s / "single.jsonl.manifest.json");
  CHECK(m["summary"]["avg_positives"] == 1.0);
  CHECK(m["summary"]["avg_positives_before"].get<double>() > 1.0);
}

TEST_CASE("config precedence: flags over file over defaults") {
  Scratch s;
  std::ofstream(s / "cfg.json") << R"({"n_samples": 30, "seed": 3, "n_classes": 5})";
  REQUIRE(mlml(s, "gen-data --config " + (s / "cfg.json") + " -o " + (s / "d.jsonl") + " --seed 4").code == 0);
  const json c = read_json(s / "d.jsonl.manifest.json")["config"];
  CHECK(c["n_samples"] == 30);
  CHECK(c["n_classes"] == 5);
  CHECK(c["seed"] == 4);
  CHECK(c["n_features"] == 32);

  std::ofstream(s / "bad.json") << R"({"n_sampels": 30})";
  const Run r = mlml(s, "gen-data --config " + (s / "bad.json") + " -o " + (s / "e.jsonl"));
  CHECK(r.code == 3);
  CHECK(error_line(r)["error"] == "config");
}

TEST_CASE("error classes map to distinct exit codes") {
  Scratch s;
  make_data(s);
  Run r = mlml(s, "corrupt -i " + (s / "missing.jsonl") + " -o " + (s / "o.jsonl") + " -r 0.5");
  CHECK(r.code == 4);
  CHECK(error_line(r)["error"] == "io");
  const json failed = read_json(s / "o.jsonl.manifest.json");
  CHECK(failed["status"] == "failed");

  CHECK(mlml(s, "corrupt -i " + (s / "clean.jsonl") + " -o " + (s / "o.jsonl") + " -r 1.5").code == 3);

  std::ofstream(s / "broken.jsonl") << "{\"features\":[1.0],\"labels\":[2]}\n";
  r = mlml(s, "train -d " + (s / "broken.jsonl") + " -o " + (s / "run"));
  CHECK(r.code == 5);
  CHECK(error_line(r)["error"] == "parse");

  r = mlml(s, "train -d " + (s / "train.jsonl") + " -o " + (s / "run") +
                  " --optimizer sgd --schedule constant --lr 1e300 --epochs 2");
  CHECK(r.code == 6);
  CHECK(error_line(r)["error"] == "divergence");

  r = mlml(s, "gen-data -o " + (s / "g.jsonl") + " --n-samples 5 --margin 100");
  CHECK(r.code == 7);
  CHECK(error_line(r)["error"] == "generation");

  CHECK(mlml(s, "train -d " + (s / "train.jsonl") + " -o " + (s / "run") + " --loss hill --tau 0.7").code == 3);
  CHECK(mlml(s, "train -d " + (s / "train.jsonl") + " -o " + (s / "run") + " --loss nope").code == 3);
}

TEST_CASE("train writes its artifacts and eval reproduces the metrics") {
  Scratch s;
  make_data(s);
  const Run r = mlml(s, "train -d " + (s / "train.jsonl") + " -o " + (s / "run") +
                            " --loss focal_margin --splc --tau 0.7 --epochs 4 --seed 1");
  REQUIRE(r.code == 0);
  const json m = read_json(s / "run/manifest.json");
  CHECK(m["config"]["loss"]["splc"]["tau"] == 0.7);
  CHECK(m["config"]["epochs"] == 4);
  for (const char* f : {"checkpoint.json", "diagnostics.csv", "decisions.csv", "metrics.json"})
    CHECK(fs::exists(s / (std::string("run/") + f)));
  CHECK(slurp(s / "run/decisions.csv").rfind("epoch,sample,class,probability\n", 0) == 0);

  REQUIRE(mlml(s, "eval -c " + (s / "run/checkpoint.json") + " -d " + (s / "train.jsonl") + " -o " +
                      (s / "eval.json"))
              .code == 0);
  CHECK(read_json(s / "eval.json")["map"] == read_json(s / "run/metrics.json")["map"]);
}

TEST_CASE("rerun from a manifest reproduces byte-identical outputs") {
  Scratch s;
  make_data(s);
  REQUIRE(mlml(s, "train -d " + (s / "train.jsonl") + " -o " + (s / "run") +
                      " --loss hill+splc --epochs 3 --ema-decay 0.9")
              .code == 0);
  REQUIRE(mlml(s, "rerun " + (s / "run/manifest.json") + " --out-dir " + (s / "again")).code == 0);
  const json a = read_json(s / "run/manifest.json"), b = read_json(s / "again/manifest.json");
  for (const auto& [name, path] : a["artifacts"].items()) {
    const std::string other = b["artifacts"][name];
    CHECK(other != path.get<std::string>());
    CHECK(slurp(path.get<std::string>()) == slurp(other));
  }

  REQUIRE(mlml(s, "grad-curves -l hill_neg,asl_neg:m=0.1 --points 50 -o " + (s / "curves.csv")).code == 0);
  REQUIRE(mlml(s, "rerun " + (s / "curves.csv.manifest.json") + " --out-dir " + (s / "again")).code == 0);
  CHECK(slurp(s / "curves.csv") == slurp(s / "again/curves.csv"));
}

TEST_CASE("compare and sweep on a dataset do not depend on jobs") {
  Scratch s;
  make_data(s);
  const std::string common = " -d " + (s / "train.jsonl") + " --test " + (s / "clean.jsonl") +
                             " --seeds 0,1 --epochs 3";
  REQUIRE(mlml(s, "compare -l bce,hill" + common + " -j 1 -o " + (s / "c1.csv")).code == 0);
  REQUIRE(mlml(s, "compare -l bce,hill" + common + " -j 3 -o " + (s / "c3.csv")).code == 0);
  const std::string csv = slurp(s / "c1.csv");
  CHECK(csv == slurp(s / "c3.csv"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv.rfind("loss,seed,map,cf1,of1,cp,cr,op,or\nbce,0,", 0) == 0);
  CHECK(read_json(s / "c1.csv.manifest.json")["summary"]["hill"]["runs"] == 2);

  REQUIRE(mlml(s, "sweep -a tau -v 0.55,0.7" + common + " -o " + (s / "sw.csv")).code == 0);
  const std::string sw = slurp(s / "sw.csv");
  CHECK(sw.rfind("axis,value,seed,map,cf1,of1\ntau,0.55,0,", 0) == 0);
  CHECK(std::count(sw.begin(), sw.end(), '\n') == 5);

  std::ofstream(s / "base.json") << R"({"loss": "hill"})";
  const Run r = mlml(s, "sweep -a tau -v 0.6 --base-config " + (s / "base.json") + common + " -o " + (s / "x.csv"));
  CHECK(r.code == 3);
  REQUIRE(mlml(s, "sweep -a lambda -v 1,2 --base-config " + (s / "base.json") + common + " -o " +
                      (s / "l.csv"))
              .code == 0);
}
