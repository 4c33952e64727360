#include <numbers>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "mlml/trainer.hpp"
#include "oracles.hpp"

using namespace mlml;

namespace {

Dataset small_data(std::uint64_t seed = 3, double r = 0.5) {
  GeneratorSpec s;
  s.n_samples = 120;
  s.n_features = 6;
  s.n_classes = 4;
  s.positive_rate = 0.35;
  s.margin = 0.3;
  s.seed = seed;
  return corrupt_dataset(generate(s), r, seed + 100);
}

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 16;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters at their initial values") {
  const Dataset d = small_data();
  TrainConfig c = small_config();
  c.schedule.max_lr = 0.0;
  const TrainResult r = train(d, c);
  CHECK(r.model == Model::make(c.model, d.dim(), d.classes(), c.seed));
}

TEST_CASE("one full-batch SGD step matches the analytic update") {
  Dataset d;
  d.features = RealMatrix(2, 2, {0.5, -1.0, 2.0, 0.25});
  d.labels = LabelMatrix(2, 1, {1, 0});
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 2;
  c.optimizer.kind = OptimizerKind::sgd;
  c.optimizer.weight_decay = 0.01;
  c.schedule.kind = ScheduleKind::constant;
  c.schedule.max_lr = 0.1;
  c.seed = 4;
  const Model init = Model::make(c.model, 2, 1, c.seed);
  const double w0 = init.params()[0], w1 = init.params()[1], b = init.params()[2];

  // d/dz of mean BCE is (sigma(z) - y) / N.
  double gw0 = 0, gw1 = 0, gb = 0;
  const double x[2][2] = {{0.5, -1.0}, {2.0, 0.25}};
  const int y[2] = {1, 0};
  for (int i = 0; i < 2; ++i) {
    const double z = w0 * x[i][0] + w1 * x[i][1] + b;
    const double dz = (static_cast<double>(oracle::sigmoid_ld(z)) - y[i]) / 2.0;
    gw0 += dz * x[i][0];
    gw1 += dz * x[i][1];
    gb += dz;
  }
  const double keep = 1.0 - 0.1 * 0.01;
  const TrainResult r = train(d, c);
  CHECK(std::abs(r.model.params()[0] - (w0 * keep - 0.1 * gw0)) < 1e-12);
  CHECK(std::abs(r.model.params()[1] - (w1 * keep - 0.1 * gw1)) < 1e-12);
  CHECK(std::abs(r.model.params()[2] - (b * keep - 0.1 * gb)) < 1e-12);
}

TEST_CASE("training is reproducible for a fixed seed") {
  const Dataset d = small_data();
  TrainConfig c = small_config();
  c.loss = SplcConfig{};
  c.ema_decay = 0.9;
  const TrainResult a = train(d, c, &d);
  const TrainResult b = train(d, c, &d);
  CHECK(a.model == b.model);
  CHECK(a.eval_model == b.eval_model);
  CHECK(a.diagnostics == b.diagnostics);
  CHECK(a.decisions == b.decisions);
  CHECK(a.epoch_loss == b.epoch_loss);
  c.seed = 10;
  CHECK_FALSE(train(d, c).model == a.model);
}

TEST_CASE("splc with an unreachable threshold trains exactly like its base") {
  const Dataset d = small_data();
  TrainConfig base = small_config();
  base.schedule.max_lr = 1e-3;
  LossConfig l;
  l.positive = PositiveLoss::focal_margin;
  l.negative = NegativeLoss::focal;
  base.loss = l;
  TrainConfig wrapped = base;
  wrapped.loss = SplcConfig{0.999999, 1, l};
  const TrainResult a = train(d, base), b = train(d, wrapped);
  CHECK(b.decisions.empty());
  CHECK(a.model == b.model);
  CHECK(a.epoch_loss == b.epoch_loss);
}

TEST_CASE("decoupled decay shrinks parameters geometrically when gradients vanish") {
  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    OptimizerConfig oc;
    oc.kind = kind;
    oc.weight_decay = 0.5;
    Optimizer opt(oc, 3);
    std::vector<double> p{1.0, -2.0, 0.25}, zero(3, 0.0);
    ScheduleConfig sc;
    sc.max_lr = 0.1;
    std::vector<double> expect = p;
    for (long s = 0; s < 40; ++s) {
      const double lr = sc.lr_at(s, 40);
      opt.step(p, zero, lr);
      for (double& e : expect) e *= 1.0 - lr * 0.5;
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == Catch::Approx(expect[i]).epsilon(1e-14));
  }
}

TEST_CASE("adam matches the scalar reference recurrence") {
  const std::vector<double> grads{0.3, -1.2, 0.05, 2.0, -0.7};
  const std::vector<double> lrs{1e-2, 2e-2, 5e-3, 1e-2, 3e-2};
  OptimizerConfig oc;
  oc.weight_decay = 1e-2;
  Optimizer opt(oc, 1);
  std::vector<double> p{0.8};
  const std::vector<double> trace = oracle::adam_scalar(0.8, grads, lrs, 0.9, 0.999, 1e-8, 1e-2);
  for (std::size_t t = 0; t < grads.size(); ++t) {
    opt.step(p, std::span<const double>(&grads[t], 1), lrs[t]);
    CHECK(p[0] == Catch::Approx(trace[t]).epsilon(1e-14));
  }
  CHECK(opt.steps() == 5);
  CHECK_THROWS_AS(opt.step(p, std::vector<double>(2), 0.1), DimensionError);
}

TEST_CASE("one-cycle schedule shape") {
  ScheduleConfig s;
  s.max_lr = 1e-2;
  const long total = 100;
  const long peak = static_cast<long>(std::floor(0.3 * 99));
  int at_max = 0;
  for (long i = 0; i < total; ++i) {
    const double lr = s.lr_at(i, total);
    CHECK(lr <= s.max_lr);
    at_max += lr == s.max_lr;
    if (i > 0 && i <= peak) CHECK(lr > s.lr_at(i - 1, total));
    if (i > peak) CHECK(lr < s.lr_at(i - 1, total));
  }
  CHECK(at_max == 1);
  CHECK(s.lr_at(peak, total) == s.max_lr);
  CHECK(s.lr_at(0, total) == Catch::Approx(s.max_lr / 25.0).epsilon(1e-13));
  CHECK(s.lr_at(total - 1, total) == Catch::Approx(s.max_lr / 25.0 / 1e4).epsilon(1e-12));
  // Midpoints of both cosine halves.
  const double init = s.max_lr / 25.0, fin = init / 1e4;
  const double pi = std::numbers::pi;
  const long mid = 10;
  CHECK(s.lr_at(mid, total) ==
        Catch::Approx(s.max_lr + (init - s.max_lr) * (1 + std::cos(pi * mid / peak)) / 2));
  const long late = 70;
  CHECK(s.lr_at(late, total) ==
        Catch::Approx(fin + (s.max_lr - fin) *
                                (1 + std::cos(pi * (late - peak) / double(total - 1 - peak))) / 2));
  s.kind = ScheduleKind::constant;
  CHECK(s.lr_at(50, total) == s.max_lr);
  s.warmup = 1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("ema limits") {
  const std::vector<double> init{1.0, 2.0};
  Ema follow(0.0, init);
  Ema frozen(std::nextafter(1.0, 0.0), init);
  std::vector<double> p = init;
  for (int s = 0; s < 50; ++s) {
    p[0] += 0.5;
    p[1] -= 0.25;
    follow.update(p);
    frozen.update(p);
    CHECK(follow.shadow()[0] == p[0]);
    CHECK(follow.shadow()[1] == p[1]);
  }
  CHECK(frozen.shadow()[0] == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(frozen.shadow()[1] == Catch::Approx(2.0).epsilon(1e-12));
  CHECK_THROWS_AS(Ema(1.0, init), ConfigError);

  const Dataset d = small_data();
  TrainConfig c = small_config();
  c.ema_decay = 0.0;
  const TrainResult r = train(d, c);
  CHECK(r.eval_model == r.model);
}

TEST_CASE("zero-initialized model puts every status in the one-half bin") {
  const Dataset d = small_data();
  const Model m = Model::make({ModelKind::linear, 0, InitKind::zeros}, d.dim(), d.classes(), 0);
  const EpochDiagnostics e = diagnostics_snapshot(m, d, {});
  REQUIRE(e.enabled);
  CHECK(histogram_bin(0.5) == 10);
  std::size_t sum = 0;
  for (auto s : {LabelStatus::labeled_positive, LabelStatus::missing, LabelStatus::true_negative}) {
    CHECK(e.count(s, 10) == e.total(s));
    sum += e.total(s);
  }
  CHECK(sum == d.size() * d.classes());
  CHECK(e.total(LabelStatus::missing) > 0);
}

TEST_CASE("diagnostic histogram matches an entry-by-entry count") {
  const Dataset d = small_data();
  const TrainResult r = train(d, small_config());
  const EpochDiagnostics e = diagnostics_snapshot(r.model, d, {});
  const RealMatrix p = predict(r.model, d.features);
  std::array<std::array<std::size_t, 20>, 3> h{};
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t k = 0; k < d.classes(); ++k) {
      const int s = d.labels(i, k) ? 0 : (*d.true_labels)(i, k) ? 1 : 2;
      std::size_t b = 0;
      while (b < 19 && p(i, k) >= (b + 1) / 20.0) ++b;
      ++h[s][b];
    }
  CHECK(e.histogram == h);
  CHECK(histogram_bin(1.0) == 19);
  CHECK(histogram_bin(0.0) == 0);
}

TEST_CASE("planted model separates missing labels from true negatives") {
  const Dataset d = small_data();
  Model m(ModelKind::linear, d.dim(), 0, d.classes());
  auto p = m.params();
  for (std::size_t k = 0; k < d.classes(); ++k) {
    for (std::size_t j = 0; j < d.dim(); ++j) p[k * d.dim() + j] = 10 * d.planted_weights(k, j);
    p[d.classes() * d.dim() + k] = 10 * d.planted_bias[k];
  }
  const EpochDiagnostics e = diagnostics_snapshot(m, d, {});
  for (std::size_t b = 0; b < 10; ++b) CHECK(e.count(LabelStatus::missing, b) == 0);
  for (std::size_t b = 10; b < 20; ++b) CHECK(e.count(LabelStatus::true_negative, b) == 0);
}

TEST_CASE("diagnostics without truth are disabled, not an error") {
  Dataset d = small_data();
  d.true_labels.reset();
  TrainConfig c = small_config();
  const TrainResult r = train(d, c);
  REQUIRE(r.diagnostics.size() == 4);
  for (const auto& e : r.diagnostics) CHECK_FALSE(e.enabled);
}

TEST_CASE("diagnostics cadence includes the last epoch") {
  const Dataset d = small_data();
  TrainConfig c = small_config();
  c.epochs = 7;
  c.diagnostics_every = 3;
  const TrainResult r = train(d, c, &d);
  REQUIRE(r.diagnostics.size() == 3);
  CHECK(r.diagnostics[0].epoch == 3);
  CHECK(r.diagnostics[1].epoch == 6);
  CHECK(r.diagnostics[2].epoch == 7);
  CHECK(r.diagnostics[2].eval.has_value());
  CHECK(r.epoch_loss.size() == 7);
  c.diagnostics_every = 0;
  CHECK(train(d, c).diagnostics.empty());
}

TEST_CASE("splc audit per epoch covers that epoch's decisions") {
  const Dataset d = small_data(4, 0.8);
  TrainConfig c = small_config();
  c.epochs = 6;
  c.loss = SplcConfig{};
  const TrainResult r = train(d, c);
  CHECK(r.diagnostics[0].audit.decisions == 0);
  for (const auto& e : r.diagnostics) {
    std::vector<CorrectionDecision> mine;
    for (const auto& x : r.decisions)
      if (x.epoch == e.epoch) mine.push_back(x);
    const CorrectionAudit a = correction_audit(mine, d.labels, *d.true_labels);
    CHECK(e.audit.decisions == a.decisions);
    CHECK(e.audit.precision == a.precision);
    CHECK(e.audit.recall == a.recall);
  }
}

TEST_CASE("non-finite loss aborts with the epoch and batch") {
  Dataset d = small_data();
  d.features(40, 2) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig c = small_config();
  try {
    train(d, c);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.epoch() == 1);
    CHECK(e.batch() < 8);
  }

  // Parameters overflow under an absurd step size.
  c = small_config();
  c.optimizer.kind = OptimizerKind::sgd;
  c.schedule.kind = ScheduleKind::constant;
  c.schedule.max_lr = 1e300;
  CHECK_THROWS_AS(train(small_data(), c), DivergenceError);
}

TEST_CASE("invalid configurations are rejected") {
  const Dataset d = small_data();
  TrainConfig c = small_config();
  c.epochs = 0;
  CHECK_THROWS_AS(train(d, c), ConfigError);
  c = small_config();
  c.batch_size = 0;
  CHECK_THROWS_AS(train(d, c), ConfigError);
  c = small_config();
  c.ema_decay = 1.0;
  CHECK_THROWS_AS(train(d, c), ConfigError);
}

TEST_CASE("two-stage pseudo-labeling retrains on the relabeled set") {
  const Dataset d = small_data();
  PseudoLabelConfig pc;
  pc.stage_one = small_config();
  pc.stage_two = small_config();
  const PseudoLabelResult r = train_pseudo_label(d, pc);
  const RealMatrix p = predict(r.stage_one.eval_model, d.features);
  CHECK(r.relabeled == pseudo_label_relabel(p, d.labels, 0.5));
  std::size_t flips = 0;
  for (std::size_t i = 0; i < d.labels.size(); ++i) flips += r.relabeled.flat()[i] != d.labels.flat()[i];
  CHECK(r.flipped == flips);
  Dataset second = d;
  second.labels = r.relabeled;
  second.true_labels.reset();
  CHECK(train(second, pc.stage_two).model == r.stage_two.model);
}

TEST_CASE("diagnostics csv layout") {
  const Dataset d = small_data();
  TrainConfig c = small_config();
  c.epochs = 2;
  c.loss = SplcConfig{};
  const TrainResult r = train(d, c, &d);
  std::ostringstream os;
  write_diagnostics_csv(os, r.diagnostics);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "epoch,kind,name,bin_lo,bin_hi,value");
  std::getline(is, line);
  CHECK(line.rfind("1,hist,tp,0.00,0.05,", 0) == 0);
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  // Per epoch: 60 bins and 7 summary rows; the first line was already read.
  CHECK(rows + 1 == 2 * (60 + 7));
}
