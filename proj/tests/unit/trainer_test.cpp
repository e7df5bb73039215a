#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "cloze/numerics/ops.hpp"
#include "cloze/textdata/synth.hpp"
#include "cloze/textdata/tokenizer.hpp"
#include "cloze/trainer/pretrain.hpp"
#include "fixtures.hpp"

using namespace cloze;
using namespace cloze::trainer;
using cloze::testing::random_rows;
using cloze::testing::tiny_config;
using numerics::Rng;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cloze_trainer_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A single scalar parameter "theta" for optimizer arithmetic checks.
model::ParamSet<double> scalar_param(double value) {
  model::ParamSet<double> p;
  p.add("theta", {1}, model::Init::zeros).mutable_data()[0] = value;
  return p;
}

void set_grad(model::ParamSet<double>& p, double g) {
  p.at(0).zero_grad();
  p.at(0).grad()[0] = g;
}

std::vector<Example> random_examples(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example e;
    e.ids = random_rows(rng, {4 + rng.index(6)}, vocab)[0];
    out.push_back(e);
  }
  return out;
}

PretrainConfig small_run(std::size_t updates) {
  PretrainConfig c;
  c.max_updates = updates;
  c.warmup_steps = std::min<std::size_t>(10, updates - 1);
  c.lr_peak = 0.05;
  c.lr_floor = 1e-4;
  c.max_tokens = 64;
  return c;
}

template <typename T>
std::vector<T> flat_params(const model::TwoTowerModel<T>& m) {
  std::vector<T> out;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto d = m.params().at(i).data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

}  // namespace

TEST(Schedule, ExactEndpoints) {
  Schedule s{1e-7, 1.0, 1e-4, 16000, 600000};
  EXPECT_EQ(lr_schedule(0, s), 1e-7);
  EXPECT_EQ(lr_schedule(16000, s), 1.0);
  EXPECT_EQ(lr_schedule(600000, s), 1e-4);
  EXPECT_EQ(lr_schedule(700000, s), 1e-4);
}

TEST(Schedule, ContinuousAtJunctionAndMonotone) {
  Schedule s{1e-7, 0.1, 1e-4, 100, 2000};
  EXPECT_NEAR(lr_schedule(99, s), 0.1, 0.1 / 100 + 1e-12);
  EXPECT_NEAR(lr_schedule(101, s), 0.1, 1e-5);
  for (std::size_t t = 1; t <= 100; ++t) EXPECT_GT(lr_schedule(t, s), lr_schedule(t - 1, s));
  for (std::size_t t = 101; t <= 2000; ++t) EXPECT_LE(lr_schedule(t, s), lr_schedule(t - 1, s));
  // Midpoint of the cosine phase.
  EXPECT_NEAR(lr_schedule(1050, s), 1e-4 + 0.5 * (0.1 - 1e-4), 1e-12);
}

TEST(Schedule, Validation) {
  EXPECT_THROW((Schedule{1e-7, 0.1, 1e-4, 100, 100}.validate()), ConfigError);
  EXPECT_THROW((Schedule{1e-7, 0.1, 0.2, 10, 100}.validate()), ConfigError);
  EXPECT_NO_THROW((Schedule{1e-7, 0.1, 1e-4, 10, 100}.validate()));
}

TEST(Renorm, UnderThresholdUntouched) {
  auto p = scalar_param(1.0);
  set_grad(p, 0.05);
  const auto r = renorm_grads(p, 0.1);
  EXPECT_EQ(r.scale, 1.0);
  EXPECT_EQ(p.at(0).grad()[0], 0.05);
}

TEST(Renorm, OverThresholdScaled) {
  model::ParamSet<double> p;
  p.add("a", {2}, model::Init::zeros);
  p.add("b", {1}, model::Init::zeros);
  p.at(0).grad()[0] = 0.3;
  p.at(0).grad()[1] = 0.0;
  p.at(1).grad()[0] = 0.4;
  const auto r = renorm_grads(p, 0.1);
  EXPECT_NEAR(r.norm, 0.5, 1e-15);
  EXPECT_NEAR(r.scale, 0.2, 1e-15);
  EXPECT_NEAR(grad_norm(p), 0.1, 1e-6);
}

TEST(Renorm, ZeroAndMissingGradsAreNoOp) {
  model::ParamSet<float> p;
  p.add("a", {3}, model::Init::ones);
  const auto r = renorm_grads(p, 0.1);
  EXPECT_EQ(r.norm, 0.0);
  EXPECT_EQ(r.scale, 1.0);
}

TEST(Renorm, NonFiniteReported) {
  auto p = scalar_param(1.0);
  set_grad(p, std::numeric_limits<double>::quiet_NaN());
  EXPECT_FALSE(renorm_grads(p, 0.1).finite);
}

TEST(Renorm, PostNormBoundOnRandomGradients) {
  Rng rng(3);
  model::ParamSet<float> p(1);
  p.add("a", {40, 7}, model::Init::normal, 1.0);
  p.add("b", {13}, model::Init::normal, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double mag = std::exp(6.0 * rng.uniform() - 3.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      for (float& g : p.at(i).grad()) g = static_cast<float>(mag * rng.normal());
    }
    renorm_grads(p, 0.1);
    EXPECT_LE(grad_norm(p), 0.1 + 1e-6);
  }
}

TEST(Nag, ZeroMomentumIsSgd) {
  auto p = scalar_param(2.0);
  Nag<double> opt(p, 0.0);
  for (int i = 0; i < 5; ++i) {
    const double theta = p.at(0)[0];
    set_grad(p, 2 * theta);
    opt.step(p, 0.1);
    EXPECT_DOUBLE_EQ(p.at(0)[0], theta - 0.1 * 2 * theta);
  }
}

TEST(Nag, MatchesRecurrenceOnQuadratic) {
  auto p = scalar_param(1.0);
  Nag<double> opt(p, 0.99);
  double theta = 1.0, v = 0.0;
  double prev = theta * theta;
  for (int i = 0; i < 5; ++i) {
    set_grad(p, 2 * p.at(0)[0]);
    opt.step(p, 0.1);
    const double g = 2 * theta;
    v = 0.99 * v - 0.1 * g;
    theta += 0.99 * v - 0.1 * g;
    EXPECT_EQ(p.at(0)[0], theta);
  }
  // Loss falls over the first steps.
  auto q = scalar_param(1.0);
  Nag<double> o2(q, 0.99);
  set_grad(q, 2.0);
  o2.step(q, 0.1);
  EXPECT_LT(q.at(0)[0] * q.at(0)[0], prev);
}

TEST(Nag, StateRoundTripAndMismatch) {
  auto p = scalar_param(1.0);
  Nag<double> a(p, 0.9);
  set_grad(p, 0.5);
  a.step(p, 0.1);
  const auto dir = scratch("nag");
  a.save(dir);
  Nag<double> b(p, 0.0);
  b.load(dir);
  EXPECT_EQ(b.velocity(), a.velocity());
  EXPECT_EQ(b.momentum(), 0.9);
  EXPECT_EQ(b.steps(), 1u);

  model::ParamSet<double> other;
  other.add("theta", {2}, model::Init::zeros);
  EXPECT_THROW(a.step(other, 0.1), OptimizerError);
  Adam<double> adam(p);
  EXPECT_THROW(adam.load(dir), OptimizerError);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  auto p = scalar_param(1.0);
  Adam<double> opt(p);
  set_grad(p, 0.3);
  opt.step(p, 0.01);
  EXPECT_NEAR(p.at(0)[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
}

TEST(Adam, GroupScaleAndFrozen) {
  model::ParamSet<double> p;
  p.add("head", {1}, model::Init::zeros);
  p.add("body", {1}, model::Init::zeros);
  p.add("frozen", {1}, model::Init::zeros).set_requires_grad(false);
  for (std::size_t i = 0; i < 3; ++i) p.at(i).grad()[0] = 1.0;
  Adam<double> opt(p);
  opt.set_scale("head", 10.0);
  opt.step(p, 0.01);
  EXPECT_NEAR(p.get("head")[0], -0.1, 1e-9);
  EXPECT_NEAR(p.get("body")[0], -0.01, 1e-9);
  EXPECT_EQ(p.get("frozen")[0], 0.0);
}

TEST(Adam, StateRoundTrip) {
  auto p = scalar_param(1.0);
  Adam<double> a(p);
  set_grad(p, 0.5);
  a.step(p, 0.1);
  const auto dir = scratch("adam");
  a.save(dir);
  auto q = scalar_param(p.at(0)[0]);
  Adam<double> b(q);
  b.load(dir);
  set_grad(p, -0.2);
  set_grad(q, -0.2);
  a.step(p, 0.1);
  b.step(q, 0.1);
  EXPECT_EQ(p.at(0)[0], q.at(0)[0]);
}

TEST(PretrainConfig, KeyValueRoundTripAndValidation) {
  PretrainConfig c;
  c.objective = Objective::triplet;
  c.lr_peak = 0.37;
  c.accumulation = 3;
  const auto d = PretrainConfig::from_kv(c.to_kv());
  EXPECT_EQ(d.to_kv().entries(), c.to_kv().entries());
  c.warmup_steps = c.max_updates;
  EXPECT_THROW(c.validate(), ConfigError);
  KeyValues kv;
  kv.set("objective", "mlm");
  EXPECT_THROW(PretrainConfig::from_kv(kv), ConfigError);
}

TEST(Pretrain, RunsAreDeterministic) {
  Rng rng(1);
  const auto train = random_examples(rng, 30, 20);
  model::TwoTowerModel<float> a(tiny_config()), b(tiny_config());
  Pretrainer<float> ta(a, small_run(20), train), tb(b, small_run(20), train);
  ta.run();
  tb.run();
  EXPECT_EQ(flat_params(a), flat_params(b));
}

TEST(Pretrain, ResumeIsBitIdentical) {
  Rng rng(2);
  const auto train = random_examples(rng, 30, 20);
  auto cfg = small_run(50);
  cfg.objective = Objective::triplet;
  cfg.accumulation = 2;

  model::TwoTowerModel<float> full(tiny_config());
  Pretrainer<float> tf(full, cfg, train);
  tf.run();

  const auto dir = scratch("resume");
  model::TwoTowerModel<float> first(tiny_config());
  Pretrainer<float> t1(first, cfg, train);
  t1.set_checkpoint_dir(dir);
  t1.run(23);
  const auto ckpt = t1.write_periodic_checkpoint();
  EXPECT_EQ(resolve_checkpoint(dir), ckpt);

  model::TwoTowerModel<float> second(tiny_config());
  for (std::size_t i = 0; i < second.params().size(); ++i) {
    for (float& x : second.params().at(i).mutable_data()) x += 0.5f;
  }
  Pretrainer<float> t2(second, cfg, train);
  t2.load_checkpoint(resolve_checkpoint(dir));
  EXPECT_EQ(t2.step_count(), 23u);
  t2.run();
  EXPECT_EQ(flat_params(second), flat_params(full));
}

TEST(Pretrain, ResumeRejectsDifferentTrajectory) {
  Rng rng(2);
  const auto train = random_examples(rng, 10, 20);
  const auto dir = scratch("reject");
  model::TwoTowerModel<float> m(tiny_config());
  Pretrainer<float> t(m, small_run(5), train);
  t.save_checkpoint(dir / "c");
  auto other = small_run(5);
  other.seed = 7;
  model::TwoTowerModel<float> m2(tiny_config());
  Pretrainer<float> t2(m2, other, train);
  EXPECT_THROW(t2.load_checkpoint(dir / "c"), model::CheckpointError);
}

TEST(Pretrain, RenormBoundHoldsEveryStep) {
  Rng rng(4);
  model::TwoTowerModel<float> m(tiny_config());
  Pretrainer<float> t(m, small_run(15), random_examples(rng, 20, 20));
  while (!t.done()) {
    const auto r = t.step();
    EXPECT_LE(grad_norm(m.params()), 0.1 + 1e-6);
    EXPECT_EQ(r.renorm.norm > 0.1, r.renorm.scale < 1.0);
  }
}

TEST(Pretrain, MetricsRecordLambdaAndEvents) {
  Rng rng(5);
  const auto dir = scratch("metrics");
  auto cfg = small_run(6);
  cfg.objective = Objective::triplet;
  cfg.eval_every = 3;
  cfg.checkpoint_every = 3;
  model::TwoTowerModel<float> m(tiny_config());
  MetricsLog log(dir / "metrics.jsonl", false);
  Pretrainer<float> t(m, cfg, random_examples(rng, 10, 20), random_examples(rng, 4, 20));
  t.set_metrics(&log);
  t.set_checkpoint_dir(dir / "ckpt");
  t.run();
  std::ifstream in(dir / "metrics.jsonl");
  std::string line;
  std::size_t steps = 0, evals = 0, ckpts = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    const auto ev = j["event"].get<std::string>();
    if (ev == "step") {
      ++steps;
      EXPECT_DOUBLE_EQ(j["lambda"].get<double>(), 0.15);
      EXPECT_TRUE(j.contains("lr") && j.contains("grad_norm") && j.contains("wall") && j.contains("cloze"));
    }
    evals += ev == "eval";
    ckpts += ev == "checkpoint";
  }
  EXPECT_EQ(steps, 6u);
  EXPECT_EQ(evals, 2u);
  EXPECT_EQ(ckpts, 2u);
  EXPECT_TRUE(fs::exists(dir / "ckpt" / "step-0000006" / "trainer.txt"));
  EXPECT_TRUE(fs::exists(dir / "ckpt" / "step-0000006" / "optimizer" / "state.txt"));
}

TEST(Pretrain, NonFiniteLossAbortsAndKeepsCheckpoint) {
  Rng rng(6);
  const auto dir = scratch("nan");
  model::TwoTowerModel<float> m(tiny_config());
  Pretrainer<float> t(m, small_run(10), random_examples(rng, 10, 20));
  t.set_checkpoint_dir(dir);
  t.run(2);
  const auto good = t.write_periodic_checkpoint();
  m.params().get("cls.bias").mutable_data()[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(t.step(), TrainingDiverged);
  EXPECT_TRUE(fs::exists(good / "trainer.txt"));
  EXPECT_EQ(resolve_checkpoint(dir), good);
}

TEST(Pretrain, MemorizesFixedBatch) {
  model::TwoTowerModel<float> m([] {
    auto c = tiny_config(12);
    c.dropout = c.attention_dropout = c.relu_dropout = 0;
    return c;
  }());
  Example e;
  e.ids = {1, 5, 6, 7, 8, 9, 10, 11, 1};
  auto cfg = small_run(1000);
  cfg.lr_peak = 0.1;
  cfg.warmup_steps = 50;
  cfg.grad_norm_threshold = 1.0;
  Pretrainer<float> t(m, cfg, {e});
  double last = 0;
  while (!t.done()) last = t.step().report.total();
  EXPECT_LT(last, 0.01);
}

TEST(Pretrain, LearnsSyntheticCorpus) {
  textdata::SynthOptions so;
  so.size = 300;
  so.inner_vocab = 5;
  so.line_tokens = 7;
  const auto corpus = textdata::synth_corpus(so);
  textdata::TokenizerOptions to;
  to.mode = textdata::TokenMode::word;
  to.min_freq = 1;
  const auto tok = textdata::Tokenizer::build(textdata::corpus_lines(corpus.docs), to);
  auto examples = textdata::make_examples(corpus.docs, tok, {});
  const std::vector<Example> heldout(examples.end() - 40, examples.end());
  examples.resize(examples.size() - 40);

  auto mc = tiny_config(tok.vocab().size());
  model::TwoTowerModel<float> m(mc);
  auto cfg = small_run(500);
  cfg.max_tokens = 256;
  cfg.warmup_steps = 50;
  cfg.lr_peak = 0.05;
  Pretrainer<float> t(m, cfg, examples, heldout);
  const double before = t.evaluate().cloze.perplexity();
  t.run();
  const double after = t.evaluate().cloze.perplexity();
  EXPECT_LT(after, before);
}
