#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "cloze/finetune/finetune.hpp"
#include "cloze/numerics/ops.hpp"
#include "fixtures.hpp"
#include "metric_oracle.hpp"

using namespace cloze;
using namespace cloze::finetune;
using cloze::testing::tiny_config;
using numerics::ForwardContext;
using numerics::Rng;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kVocab = 20;

std::vector<std::size_t> random_ids(Rng& rng, std::size_t n) {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(textdata::kNumReserved + rng.index(kVocab - textdata::kNumReserved));
  return ids;
}

TaskSpec classification(std::size_t classes, bool pair = false) {
  TaskSpec s;
  s.name = "toy";
  s.kind = pair ? TaskKind::pair_classification : TaskKind::single_classification;
  s.num_classes = classes;
  return s;
}

std::vector<TaskExample> random_examples(Rng& rng, std::size_t n, std::size_t classes, bool pair) {
  std::vector<TaskExample> out(n);
  for (auto& e : out) {
    e.a = random_ids(rng, 1 + rng.index(6));
    if (pair) e.b = random_ids(rng, 1 + rng.index(6));
    e.label = rng.index(classes);
  }
  return out;
}

std::vector<const TaskExample*> pointers(const std::vector<TaskExample>& v) {
  std::vector<const TaskExample*> out;
  for (const auto& e : v) out.push_back(&e);
  return out;
}

FinetuneConfig quiet_config() {
  FinetuneConfig c;
  c.head_dropout = 0;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cloze_finetune_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, ExhaustiveBinaryAgainstDefinitions) {
  const auto s = cloze::testing::sweep_binary_metrics(6);
  EXPECT_GT(s.cases, 5000u);
  EXPECT_EQ(s.mismatches, 0u) << s.first_failure;
}

TEST(Metrics, HandExamples) {
  EXPECT_DOUBLE_EQ(mcc({1, 1, 0, 0}, {1, 0, 1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(mcc({1, 0, 1, 0}, {1, 0, 1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(binary_f1({1, 0, 1, 0}, {1, 0, 1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({4, 3, 2, 1}, {1, 2, 3, 4}), -1.0);
  EXPECT_DOUBLE_EQ(accuracy({0, 1, 2}, {0, 1, 1}), 2.0 / 3.0);
  const auto r = average_ranks({10, 20, 20, 5});
  EXPECT_EQ(r, (std::vector<double>{2, 3.5, 3.5, 1}));
}

TEST(Metrics, DegenerateInputsScoreZeroWithWarning) {
  std::vector<std::string> w;
  EXPECT_EQ(mcc({1, 1, 1}, {1, 0, 1}, &w), 0.0);
  EXPECT_EQ(binary_f1({0, 0}, {0, 0}, &w), 0.0);
  EXPECT_EQ(spearman({1, 1, 1}, {1, 2, 3}, &w), 0.0);
  EXPECT_EQ(w.size(), 3u);
}

TEST(Metrics, PreconditionsEnforced) {
  EXPECT_THROW(accuracy({1}, {1}), MetricError);
  EXPECT_THROW(accuracy({1, 0}, {1, 0, 1}), MetricError);
  EXPECT_THROW(mcc({2, 0}, {1, 0}), MetricError);
  EXPECT_THROW(parse_metric("auc"), MetricError);
}

TEST(Metrics, SpanF1) {
  const std::vector<std::string> tags{"B-PER", "I-PER", "O", "I-LOC", "B-LOC", "I-PER"};
  const auto spans = bio_spans(tags);
  ASSERT_EQ(spans.size(), 4u);
  EXPECT_EQ(spans[0], (Span{"PER", 0, 2}));
  EXPECT_EQ(spans[1], (Span{"LOC", 3, 4}));
  EXPECT_EQ(spans[2], (Span{"LOC", 4, 5}));
  EXPECT_EQ(spans[3], (Span{"PER", 5, 6}));

  const std::vector<std::vector<std::string>> gold{{"B-PER", "I-PER", "O"}, {"B-LOC", "O"}};
  const std::vector<std::vector<std::string>> pred{{"B-PER", "O", "O"}, {"B-LOC", "O"}};
  // One of two predicted spans matches one of two gold spans.
  EXPECT_DOUBLE_EQ(span_f1(pred, gold), 0.5);
  EXPECT_DOUBLE_EQ(span_f1(gold, gold), 1.0);
}

// ---------------------------------------------------------------------------
// Task files

TEST(TaskSpec, RoundTripAndValidation) {
  TaskSpec s;
  s.name = "ner";
  s.kind = TaskKind::token_tagging;
  s.num_classes = 3;
  s.metric = MetricKind::span_f1;
  s.labels = {"O", "B-X", "I-X"};
  s.train = "train.txt";
  const auto back = TaskSpec::from_kv(s.to_kv());
  EXPECT_EQ(back.kind, s.kind);
  EXPECT_EQ(back.labels, s.labels);
  EXPECT_EQ(back.metric, s.metric);
  EXPECT_EQ(back.train, s.train);
  EXPECT_EQ(TaskSpec::from_kv(s.to_kv(), "/data").train, fs::path("/data/train.txt"));

  KeyValues reg;
  reg.set("kind", "regression");
  const auto r = TaskSpec::from_kv(reg);
  EXPECT_EQ(r.num_classes, 1u);
  EXPECT_EQ(r.metric, MetricKind::spearman);
  reg.set("classes", "2");
  EXPECT_THROW(TaskSpec::from_kv(reg), ConfigError);

  KeyValues bad;
  bad.set("kind", "single");
  bad.set("colour", "red");
  EXPECT_THROW(TaskSpec::from_kv(bad), ConfigError);
  bad = {};
  bad.set("kind", "single");
  bad.set("classes", "3");
  bad.set("metric", "mcc");
  EXPECT_THROW(TaskSpec::from_kv(bad), ConfigError);
}

TEST(TaskData, ReadsAllFormats) {
  std::istringstream single("1\tgood film\n0\tbad\n");
  const auto s = read_records(single, TaskKind::single_classification);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].label, "1");
  EXPECT_EQ(s[0].a, "good film");

  std::istringstream pair("0\ta b\tc d\n");
  const auto p = read_records(pair, TaskKind::pair_classification);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].b, "c d");

  std::istringstream tagged("John\tB-PER\nruns\tO\n\nhere\tO\n");
  const auto t = read_records(tagged, TaskKind::token_tagging);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].words, (std::vector<std::string>{"John", "runs"}));
  EXPECT_EQ(t[1].tags, (std::vector<std::string>{"O"}));

  std::ostringstream out;
  write_records(out, t, TaskKind::token_tagging);
  std::istringstream again(out.str());
  const auto t2 = read_records(again, TaskKind::token_tagging);
  EXPECT_EQ(t2[0].words, t[0].words);
  EXPECT_EQ(t2[1].tags, t[1].tags);

  std::istringstream broken("1\tonly\textra\n");
  EXPECT_THROW(read_records(broken, TaskKind::single_classification), textdata::FormatError);
  std::istringstream untagged("word\n");
  EXPECT_THROW(read_records(untagged, TaskKind::token_tagging), textdata::FormatError);
}

TEST(TaskData, TaggedWordScoredOnFirstPiece) {
  textdata::TokenizerOptions opts;
  opts.mode = textdata::TokenMode::character;
  opts.min_freq = 1;
  const auto tok = textdata::Tokenizer::build({"ab c", "ab c"}, opts);
  TaskSpec spec;
  spec.kind = TaskKind::token_tagging;
  spec.num_classes = 2;
  spec.labels = {"O", "X"};
  RawRecord r;
  r.words = {"ab", "c"};
  r.tags = {"X", "O"};
  const auto enc = encode_records({r}, spec, tok);
  ASSERT_EQ(enc.size(), 1u);
  ASSERT_EQ(enc[0].a.size(), enc[0].tags.size());
  ASSERT_GE(enc[0].a.size(), 3u);
  EXPECT_EQ(enc[0].tags.front(), 1u);
  std::size_t scored = 0;
  for (auto t : enc[0].tags) scored += t != kIgnoreTag;
  EXPECT_EQ(scored, 2u);
  EXPECT_EQ(enc[0].tags.back(), 0u);

  RawRecord unknown;
  unknown.words = {"ab"};
  unknown.tags = {"Y"};
  EXPECT_THROW(encode_records({unknown}, spec, tok), textdata::FormatError);
}

TEST(TaskData, ContinuationLabelsFollowTheChain) {
  textdata::SynthOptions lang;
  lang.kind = textdata::SynthKind::class_chain;
  lang.inner_vocab = 6;
  lang.class_size = 4;
  const auto task = continuation_task(lang, 200, 50, 3, 3);
  const auto chain = textdata::make_class_chain(6, 4, lang.seed);
  auto ids = [](const std::string& line) {
    std::istringstream in(line);
    std::vector<std::size_t> out;
    for (std::string w; in >> w;) out.push_back(std::stoul(w.substr(1)));
    return out;
  };
  std::size_t ones = 0;
  for (const auto& r : task.train) {
    const auto a = ids(r.a), b = ids(r.b);
    ASSERT_EQ(a.size(), 3u);
    ASSERT_EQ(b.size(), 3u);
    // Each segment is itself a valid chain walk.
    for (std::size_t i = 1; i < 3; ++i) EXPECT_TRUE(chain.follows(a[i - 1] / 4, a[i] / 4));
    // Two successors out of six classes: the label is the only link.
    const bool link = chain.follows(a.back() / 4, b.front() / 4);
    EXPECT_EQ(link, r.label == "1");
    ones += link;
  }
  EXPECT_EQ(ones, 100u);
  lang.kind = textdata::SynthKind::ngram;
  EXPECT_THROW(continuation_task(lang, 2, 2, 3, 1), std::invalid_argument);
}

TEST(TaskData, CenterTaskLabelsMatchTheTable) {
  textdata::SynthOptions lang;
  lang.inner_vocab = 5;
  const auto task = center_task(lang, 100, 20, 4);
  const auto table = textdata::make_neighbor_table(5, lang.seed);
  std::size_t ones = 0;
  for (const auto& r : task.train) {
    std::istringstream in(r.a);
    std::string l, c, rr;
    in >> l >> c >> rr;
    const bool match = textdata::center_token(table.at(std::stoul(l.substr(1)), std::stoul(rr.substr(1)))) == c;
    EXPECT_EQ(match, r.label == "1") << r.a;
    ones += match;
  }
  EXPECT_EQ(ones, 50u);
  lang.kind = textdata::SynthKind::copy;
  EXPECT_FALSE(downstream_task(lang, 4, 4, 1).has_value());
}

// ---------------------------------------------------------------------------
// Heads

TEST(TaskModel, ZeroHeadGivesExactlyLogC) {
  Rng rng(5);
  for (std::size_t c : {2u, 3u, 5u}) {
    const auto data = random_examples(rng, 8, c, c == 3);
    model::TwoTowerModel<double> pretrained(tiny_config(kVocab, 11));
    model::TwoTowerModel<double> fresh(tiny_config(kVocab, 99));
    double losses[2];
    int k = 0;
    for (const auto* m : {&pretrained, &fresh}) {
      TaskModel<double> tm(*m, classification(c, c == 3), quiet_config());
      ForwardContext ctx;
      const auto batch = tm.make_batch(pointers(data));
      const auto logits = tm.logits(batch, ctx);
      for (double v : logits.data()) EXPECT_EQ(v, 0.0);
      ForwardContext ctx2;
      losses[k++] = tm.loss(pointers(data), ctx2).item();
    }
    EXPECT_NEAR(losses[0], std::log(static_cast<double>(c)), 1e-12);
    EXPECT_EQ(losses[0], losses[1]);
  }
}

TEST(TaskModel, FeatureScaleMultipliesFirstHeadGradient) {
  Rng rng(8);
  const auto data = random_examples(rng, 6, 2, false);
  model::TwoTowerModel<double> base(tiny_config());
  double norms[2];
  double losses[2];
  int k = 0;
  for (double scale : {1.0, 16.0}) {
    auto cfg = quiet_config();
    cfg.feature_scale = scale;
    TaskModel<double> tm(base, classification(2), cfg);
    ForwardContext ctx;
    const auto loss = tm.loss(pointers(data), ctx);
    losses[k] = loss.item();
    numerics::backward(loss);
    double sq = 0;
    for (double g : tm.head().get("head.w1").grad()) sq += g * g;
    norms[k++] = std::sqrt(sq);
  }
  EXPECT_EQ(losses[0], losses[1]);
  ASSERT_GT(norms[0], 0.0);
  EXPECT_NEAR(norms[1] / norms[0], 16.0, 1e-9);
}

TEST(TaskModel, PairEncodingIsAsymmetric) {
  model::TwoTowerModel<double> base(tiny_config());
  TaskModel<double> tm(base, classification(2, true), quiet_config());
  TaskExample ab{{5, 6, 7}, {8, 9}, 0, 0, {}};
  TaskExample ba{{8, 9}, {5, 6, 7}, 0, 0, {}};
  EXPECT_EQ(tm.sequence(ab), (std::vector<std::size_t>{1, 5, 6, 7, 2, 8, 9, 1}));
  ForwardContext c1, c2;
  const auto f1 = tm.sentence_features(tm.make_batch({&ab}), c1);
  const auto f2 = tm.sentence_features(tm.make_batch({&ba}), c2);
  EXPECT_EQ(f1.dim(1), 48u);
  bool differs = false;
  for (std::size_t i = 0; i < f1.size(); ++i) differs = differs || f1[i] != f2[i];
  EXPECT_TRUE(differs);
}

TEST(TaskModel, RejectsBadInputs) {
  model::TwoTowerModel<double> base(tiny_config());
  TaskModel<double> pair(base, classification(2, true), quiet_config());
  EXPECT_THROW(pair.sequence(TaskExample{{5}, {}, 0, 0, {}}), FinetuneError);
  TaskModel<double> single(base, classification(2), quiet_config());
  EXPECT_THROW(single.sequence(TaskExample{std::vector<std::size_t>(63, 5), {}, 0, 0, {}}), FinetuneError);
  EXPECT_NO_THROW(single.sequence(TaskExample{std::vector<std::size_t>(62, 5), {}, 0, 0, {}}));
  EXPECT_THROW(single.sequence(TaskExample{{5}, {}, 2, 0, {}}), FinetuneError);

  TaskSpec tags;
  tags.kind = TaskKind::token_tagging;
  tags.num_classes = 2;
  tags.labels = {"A", "B"};
  TaskModel<double> tagger(base, tags, quiet_config());
  EXPECT_THROW(tagger.sequence(TaskExample{{5, 6}, {}, 0, 0, {0, 2}}), FinetuneError);
  EXPECT_NO_THROW(tagger.sequence(TaskExample{{5, 6}, {}, 0, 0, {0, kIgnoreTag}}));

  std::vector<TaskExample> train{TaskExample{{5}, {}, 0, 0, {}}};
  EXPECT_THROW(finetune_task(base, classification(2), train, {}, quiet_config()), FinetuneError);
}

TEST(TaskModel, EvaluationIsDeterministic) {
  Rng rng(2);
  const auto data = random_examples(rng, 10, 2, false);
  model::TwoTowerModel<double> base(tiny_config());
  TaskModel<double> tm(base, classification(2), FinetuneConfig{});
  tm.head().get("head.w1").mutable_data()[3] = 0.7;
  const auto a = tm.evaluate(data);
  const auto b = tm.evaluate(data);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.prediction.labels, b.prediction.labels);
}

TEST(TaskModel, UnmaskedExposesTheTokenItself) {
  // Tagging logits at position i: masked mode never depends on token i,
  // unmasked mode does for some position.
  model::TwoTowerModel<double> base(tiny_config());
  TaskSpec spec;
  spec.kind = TaskKind::token_tagging;
  spec.num_classes = 3;
  spec.labels = {"A", "B", "C"};
  Rng rng(4);
  bool unmasked_changed = false;
  for (auto mode : {CombineMode::train_masked, CombineMode::finetune_unmasked}) {
    auto cfg = quiet_config();
    cfg.mode = mode;
    TaskModel<double> tm(base, spec, cfg);
    for (auto& v : tm.head().get("head.tag.w").mutable_data()) v = rng.normal();
    TaskExample e{random_ids(rng, 6), {}, 0, 0, std::vector<std::size_t>(6, 0)};
    for (std::size_t i = 0; i < 6; ++i) {
      auto f = e;
      f.a[i] = f.a[i] == 5 ? 6 : 5;
      ForwardContext c1, c2;
      const auto l1 = tm.logits(tm.make_batch({&e}), c1);
      const auto l2 = tm.logits(tm.make_batch({&f}), c2);
      bool same = true;
      for (std::size_t k = 0; k < 3; ++k) same = same && l1.at(i + 1, k) == l2.at(i + 1, k);
      if (mode == CombineMode::train_masked) {
        EXPECT_TRUE(same) << "masked logits moved at position " << i + 1;
      } else if (!same) {
        unmasked_changed = true;
      }
    }
  }
  EXPECT_TRUE(unmasked_changed);
}

TEST(TaskModel, SaveLoadRoundTrip) {
  Rng rng(12);
  const auto data = random_examples(rng, 6, 3, true);
  model::TwoTowerModel<double> base(tiny_config());
  TaskModel<double> tm(base, classification(3, true), quiet_config());
  for (auto& v : tm.head().get("head.w2").mutable_data()) v = rng.normal();
  const auto dir = scratch("roundtrip");
  tm.save(dir);
  const auto back = TaskModel<double>::load(dir);
  EXPECT_EQ(tm.evaluate(data).loss, back.evaluate(data).loss);
}

// ---------------------------------------------------------------------------
// Layer mixing

TEST(LayerMix, OneHotSelectsLayerExactly) {
  model::TwoTowerModel<double> base(tiny_config());
  TaskSpec spec;
  spec.kind = TaskKind::token_tagging;
  spec.num_classes = 2;
  spec.labels = {"A", "B"};
  auto cfg = quiet_config();
  cfg.frozen_mix = true;
  TaskModel<double> tm(base, spec, cfg);
  const auto* mix = tm.layer_mix();
  ASSERT_NE(mix, nullptr);
  const auto p = mix->normalized();
  ASSERT_EQ(p.size(), 3u);
  double total = 0;
  for (double x : p) total += x;
  EXPECT_NEAR(total, 1.0, 1e-15);

  Rng rng(6);
  const TaskExample e{random_ids(rng, 5), {}, 0, 0, std::vector<std::size_t>(5, 0)};
  const auto batch = tm.make_batch({&e});
  ForwardContext ctx;
  model::ForwardOptions opts;
  opts.mode = CombineMode::finetune_unmasked;
  const auto layers = mixable_layers(tm.model().forward(batch, ctx, opts));
  for (std::size_t target = 0; target < 3; ++target) {
    auto w = mix->weights;
    for (std::size_t l = 0; l < 3; ++l) w.mutable_data()[l] = l == target ? 0.0 : -1e9;
    ForwardContext c;
    const auto f = tm.position_features(batch, c);
    ASSERT_EQ(f.size(), layers[target].size());
    for (std::size_t i = 0; i < f.size(); ++i) ASSERT_EQ(f[i], layers[target][i]) << "layer " << target;
  }
}

TEST(LayerMix, OnlyMixAndHeadReceiveGradients) {
  Rng rng(3);
  model::TwoTowerModel<double> base(tiny_config());
  auto cfg = quiet_config();
  cfg.frozen_mix = true;
  TaskModel<double> tm(base, classification(2), cfg);
  for (auto& v : tm.head().get("head.w1").mutable_data()) v = rng.normal();
  const auto data = random_examples(rng, 4, 2, false);
  ForwardContext ctx;
  numerics::backward(tm.loss(pointers(data), ctx));
  for (std::size_t i = 0; i < tm.model().params().size(); ++i) {
    EXPECT_FALSE(tm.model().params().at(i).has_grad()) << tm.model().params().names()[i];
  }
  double sq = 0;
  for (double g : tm.head().get("mix.weights").grad()) sq += g * g;
  EXPECT_GT(sq, 0.0);
}

// ---------------------------------------------------------------------------
// Grid search

TEST(Finetune, GridReportsEveryCellAndTheBest) {
  Rng rng(21);
  auto train = random_examples(rng, 20, 2, false);
  auto dev = random_examples(rng, 12, 2, false);
  model::TwoTowerModel<double> base(tiny_config());
  FinetuneConfig cfg;
  cfg.lrs = {1e-3, 1e-4};
  cfg.seeds = 2;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  const auto res = finetune_task(base, classification(2), train, dev, cfg);
  ASSERT_EQ(res.report.cells.size(), 8u);
  EXPECT_NEAR(res.report.initial_loss, std::log(2.0), 1e-12);
  double best = -1;
  for (const auto& c : res.report.cells) best = std::max(best, c.dev_score);
  EXPECT_EQ(res.report.best.dev_score, best);
  // The returned snapshot reproduces the selected cell's score.
  EXPECT_EQ(res.best->evaluate(dev).score, best);
  const auto j = res.report.to_json();
  EXPECT_EQ(j["cells"].size(), 8u);
  EXPECT_TRUE(j.contains("best"));
}

TEST(Finetune, RegressionUsesSquaredError) {
  Rng rng(9);
  auto train = random_examples(rng, 24, 2, false);
  for (auto& e : train) e.target = 1.0 + static_cast<double>(e.a.size());
  TaskSpec spec;
  spec.kind = TaskKind::regression;
  spec.num_classes = 1;
  spec.metric = MetricKind::spearman;
  model::TwoTowerModel<double> base(tiny_config());
  TaskModel<double> tm(base, spec, quiet_config());
  ForwardContext ctx;
  double mse = 0;
  for (const auto& e : train) mse += e.target * e.target;
  EXPECT_NEAR(tm.loss(pointers(train), ctx).item(), mse / 24.0, 1e-12);

  FinetuneConfig cfg = quiet_config();
  cfg.lrs = {3e-3};
  cfg.seeds = 1;
  cfg.epochs = 8;
  cfg.batch_size = 8;
  const auto res = finetune_task(base, spec, train, train, cfg);
  EXPECT_LT(res.report.cells.back().train_loss, mse / 24.0);
  EXPECT_GT(res.report.best.dev_score, 0.5);
}

TEST(Finetune, IdentityTaggingNeedsTheUnmaskedMode) {
  const auto task = identity_tagging_task(8, 2, 200, 48, 6, 1);
  std::vector<std::string> words;
  for (std::size_t w = 0; w < 8; ++w) words.push_back(textdata::ngram_token(w));
  textdata::TokenizerOptions opts;
  opts.mode = textdata::TokenMode::word;
  opts.min_freq = 1;
  const auto tok = textdata::Tokenizer::build(words, opts);
  const auto train = encode_records(task.train, task.spec, tok);
  const auto dev = encode_records(task.dev, task.spec, tok);
  model::TwoTowerModel<double> base(tiny_config(tok.vocab().size()));
  FinetuneConfig cfg = quiet_config();
  cfg.lrs = {1e-2};
  cfg.seeds = 1;
  cfg.epochs = 20;
  cfg.batch_size = 8;
  cfg.feature_scale = 1;
  const auto open = token_tagging(base, task.spec, train, dev, cfg, CombineMode::finetune_unmasked);
  const auto masked = token_tagging(base, task.spec, train, dev, cfg, CombineMode::train_masked);
  EXPECT_EQ(open.train_accuracy, 1.0);
  // 288 i.i.d. tokens, two classes: chance 0.5 with sigma ~0.03.
  EXPECT_LT(std::fabs(masked.dev_accuracy - 0.5), 3 * std::sqrt(0.25 / 288.0));
}

TEST(FinetuneConfig, RoundTripAndDefaults) {
  auto c = FinetuneConfig::for_task(TaskKind::token_tagging);
  EXPECT_EQ(c.epochs, 25u);
  EXPECT_TRUE(c.early_stop);
  EXPECT_EQ(c.lm_dropout, 0.3);
  FinetuneConfig d;
  d.apply(c.to_kv());
  EXPECT_EQ(d.to_kv().entries(), c.to_kv().entries());
  const auto g = FinetuneConfig::for_task(TaskKind::pair_classification);
  EXPECT_EQ(g.lrs, (std::vector<double>{1e-4, 5e-5, 3e-5}));
  EXPECT_EQ(g.feature_scale, 16.0);
  EXPECT_EQ(g.batch_size, 16u);
  c.warmup_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
