#include "catch_amalgamated.hpp"
#include "mlml/analysis.hpp"
#include "mlml/config.hpp"

using namespace mlml;

TEST_CASE("presets map to their loss pairs") {
  for (const auto& name : loss_presets()) CHECK_NOTHROW(loss_preset(name).validate());
  const LossConfig hill = loss_preset("hill");
  CHECK(hill.positive == PositiveLoss::focal_margin);
  CHECK(hill.negative == NegativeLoss::hill);
  const LossConfig fm = loss_preset("focal_margin");
  CHECK(fm.positive == PositiveLoss::focal_margin);
  CHECK(fm.negative == NegativeLoss::focal);
  CHECK_THROWS_AS(loss_preset("resnet"), ConfigError);
}

TEST_CASE("default hyper-parameters") {
  const LossConfig c;
  CHECK(c.focal.gamma == 2.0);
  CHECK(c.focal_margin.margin == 1.0);
  CHECK(c.focal_margin.gamma == 2.0);
  CHECK(c.hill.lambda == 1.5);
  CHECK(c.asl.gamma_neg == 4.0);
  CHECK(c.asl.margin == 0.05);
  const SplcConfig s;
  CHECK(s.tau == 0.6);
  CHECK(s.start_epoch == 1);
  const TrainConfig t;
  CHECK(t.optimizer.kind == OptimizerKind::adam);
  CHECK(t.optimizer.weight_decay == 1e-4);
  CHECK(t.optimizer.beta1 == 0.9);
  CHECK(t.optimizer.beta2 == 0.999);
  CHECK(t.optimizer.eps == 1e-8);
}

TEST_CASE("loss grammar") {
  const TrainLoss a = parse_loss("focal_margin+splc");
  REQUIRE(std::holds_alternative<SplcConfig>(a));
  CHECK(std::get<SplcConfig>(a).base.positive == PositiveLoss::focal_margin);

  const TrainLoss b = parse_loss("neg=hill:lambda=2,pos=focal_margin:m=0.5:gamma=1");
  REQUIRE(std::holds_alternative<LossConfig>(b));
  const auto& l = std::get<LossConfig>(b);
  CHECK(l.negative == NegativeLoss::hill);
  CHECK(l.hill.lambda == 2.0);
  CHECK(l.focal_margin.margin == 0.5);
  CHECK(l.focal_margin.gamma == 1.0);
  CHECK(l.positive == PositiveLoss::focal_margin);

  const TrainLoss c = parse_loss("pos=bce,neg=asl:gamma_neg=2:m=0.1,splc:tau=0.7:start=3");
  const auto& s = std::get<SplcConfig>(c);
  CHECK(s.tau == 0.7);
  CHECK(s.start_epoch == 3);
  CHECK(s.base.asl.gamma_neg == 2.0);
  CHECK(s.base.asl.margin == 0.1);

  const TrainLoss only_neg = parse_loss("neg=wan:w=0.5");
  CHECK(std::get<LossConfig>(only_neg).positive == PositiveLoss::bce);
  CHECK(*std::get<LossConfig>(only_neg).wan_weight == 0.5);

  for (const char* bad : {"", "nope", "nope+splc", "neg=hill:gamma=2", "neg=hill:lambda",
                          "neg=hill:lambda=abc", "pos=hill", "neg=focal_margin", "splc",
                          "neg=bce,splc:tau=1.5", "neg=bce,other", "neg=wan:w=0"})
    CHECK_THROWS_AS(parse_loss(bad), ConfigError);
}

TEST_CASE("loss configs round-trip through json") {
  for (const char* text : {"bce", "hill", "focal_margin+splc", "asl",
                           "pos=bce_ls:eps=0.2,neg=wan:w=0.3,splc:tau=0.65:start=2"}) {
    const TrainLoss l = parse_loss(text);
    const nlohmann::json j = to_json(l);
    CHECK(to_json(train_loss_from_json(j)) == j);
    CHECK(to_json(train_loss_from_json(nlohmann::json(text))) == j);
  }
}

TEST_CASE("train config json merge keeps unspecified fields") {
  TrainConfig c;
  c.epochs = 12;
  c.seed = 77;
  merge_train_config(c, nlohmann::json{{"lr", 0.05}, {"loss", "hill+splc"}, {"ema_decay", 0.99}});
  CHECK(c.epochs == 12);
  CHECK(c.seed == 77);
  CHECK(c.schedule.max_lr == 0.05);
  CHECK(*c.ema_decay == 0.99);
  CHECK(std::holds_alternative<SplcConfig>(c.loss));

  TrainConfig round;
  merge_train_config(round, to_json(c));
  CHECK(to_json(round) == to_json(c));

  merge_train_config(c, nlohmann::json{{"ema_decay", nullptr}});
  CHECK_FALSE(c.ema_decay.has_value());
  CHECK_THROWS_AS(merge_train_config(c, nlohmann::json{{"optimizer", "lbfgs"}}), ConfigError);
  CHECK_THROWS_AS(merge_train_config(c, nlohmann::json{{"epochs", "ten"}}), ConfigError);
}

TEST_CASE("benchmark json overlays and rejects unknown keys") {
  const BenchmarkSpec def;
  CHECK(def.n_train == 4000);
  CHECK(def.n_classes == 16);
  CHECK(def.missing_ratio == 0.6);
  const BenchmarkSpec b = benchmark_from_json(nlohmann::json{{"n_train", 100}, {"margin", 0.5}});
  CHECK(b.n_train == 100);
  CHECK(b.margin == 0.5);
  CHECK(b.n_test == def.n_test);
  CHECK(to_json(benchmark_from_json(to_json(def))) == to_json(def));
  CHECK_THROWS_AS(benchmark_from_json(nlohmann::json{{"n_trian", 100}}), ConfigError);
  CHECK_THROWS_AS(benchmark_from_json(nlohmann::json{{"n_test", 0}}), ConfigError);
}
