#include "cloze/finetune/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cloze/numerics/ops.hpp"
#include "cloze/textdata/vocab.hpp"
#include "cloze/trainer/optimizer.hpp"

namespace cloze::finetune {

namespace fs = std::filesystem;
namespace nx = cloze::numerics;
using numerics::ForwardContext;
using numerics::NoGradGuard;
using textdata::Batch;

CombineMode parse_combine_mode(const std::string& name) {
  if (name == "masked" || name == "train_masked") return CombineMode::train_masked;
  if (name == "unmasked" || name == "finetune_unmasked") return CombineMode::finetune_unmasked;
  throw ConfigError("unknown combination mode '" + name + "' (expected masked or unmasked)");
}

std::string to_string(CombineMode mode) {
  return mode == CombineMode::train_masked ? "masked" : "unmasked";
}

// ---------------------------------------------------------------------------
// Config

FinetuneConfig FinetuneConfig::for_task(TaskKind kind) {
  FinetuneConfig c;
  if (kind == TaskKind::token_tagging) {
    c.epochs = 25;
    c.early_stop = true;
    c.lm_dropout = 0.3;
    c.head_dropout = 0.3;
    c.feature_scale = 1.0;
    c.head_lr_scale = 16.0;
  }
  return c;
}

void FinetuneConfig::validate() const {
  if (lrs.empty()) throw ConfigError("finetune needs at least one learning rate");
  for (double lr : lrs) {
    if (!(lr > lr_floor)) throw ConfigError("every finetune lr must exceed lr_floor");
  }
  if (seeds == 0 || epochs == 0 || batch_size == 0 || eval_batch == 0) {
    throw ConfigError("seeds, epochs, batch_size and eval_batch must be positive");
  }
  if (!(warmup_fraction > 0 && warmup_fraction < 1)) throw ConfigError("warmup_fraction must lie in (0, 1)");
  if (!(lm_dropout >= 0 && lm_dropout < 1) || !(head_dropout >= 0 && head_dropout < 1)) {
    throw ConfigError("dropout rates must lie in [0, 1)");
  }
  if (!(feature_scale > 0) || !(head_lr_scale > 0)) throw ConfigError("feature_scale and head_lr_scale must be positive");
  if (!(lr_init > 0) || !(lr_floor >= 0)) throw ConfigError("lr_init must be positive and lr_floor non-negative");
}

const std::vector<std::string>& FinetuneConfig::keys() {
  static const std::vector<std::string> k{"lrs",          "seeds",         "epochs",      "early_stop",
                                          "batch_size",   "lm_dropout",    "head_dropout", "feature_scale",
                                          "head_lr_scale", "warmup_fraction", "lr_init",   "lr_floor",
                                          "seed",         "mode",          "frozen_mix",  "eval_batch"};
  return k;
}

KeyValues FinetuneConfig::to_kv() const {
  KeyValues kv;
  kv.set("lrs", join_doubles(lrs));
  kv.set("seeds", std::to_string(seeds));
  kv.set("epochs", std::to_string(epochs));
  kv.set("early_stop", early_stop ? "true" : "false");
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("lm_dropout", format_double(lm_dropout));
  kv.set("head_dropout", format_double(head_dropout));
  kv.set("feature_scale", format_double(feature_scale));
  kv.set("head_lr_scale", format_double(head_lr_scale));
  kv.set("warmup_fraction", format_double(warmup_fraction));
  kv.set("lr_init", format_double(lr_init));
  kv.set("lr_floor", format_double(lr_floor));
  kv.set("seed", std::to_string(seed));
  kv.set("mode", to_string(mode));
  kv.set("frozen_mix", frozen_mix ? "true" : "false");
  kv.set("eval_batch", std::to_string(eval_batch));
  return kv;
}

void FinetuneConfig::apply(const KeyValues& kv) {
  lrs = kv.get_doubles("lrs", lrs);
  seeds = kv.get_size("seeds", seeds);
  epochs = kv.get_size("epochs", epochs);
  early_stop = kv.get_bool("early_stop", early_stop);
  batch_size = kv.get_size("batch_size", batch_size);
  lm_dropout = kv.get_double("lm_dropout", lm_dropout);
  head_dropout = kv.get_double("head_dropout", head_dropout);
  feature_scale = kv.get_double("feature_scale", feature_scale);
  head_lr_scale = kv.get_double("head_lr_scale", head_lr_scale);
  warmup_fraction = kv.get_double("warmup_fraction", warmup_fraction);
  lr_init = kv.get_double("lr_init", lr_init);
  lr_floor = kv.get_double("lr_floor", lr_floor);
  seed = kv.get_u64("seed", seed);
  if (kv.has("mode")) mode = parse_combine_mode(kv.get("mode"));
  frozen_mix = kv.get_bool("frozen_mix", frozen_mix);
  eval_batch = kv.get_size("eval_batch", eval_batch);
}

// ---------------------------------------------------------------------------
// Layer mixing

template <typename T>
std::vector<double> LayerMix<T>::normalized() const {
  const auto w = weights.data();
  const double top = *std::max_element(w.begin(), w.end());
  std::vector<double> p(w.size());
  double z = 0;
  for (std::size_t i = 0; i < w.size(); ++i) z += p[i] = std::exp(static_cast<double>(w[i]) - top);
  for (auto& x : p) x /= z;
  return p;
}

template <typename T>
Tensor<T> LayerMix<T>::mix(const std::vector<Tensor<T>>& layers) const {
  if (layers.size() != weights.dim(1)) throw std::invalid_argument("layer mix: wrong number of layers");
  const std::size_t n = layers.front().dim(0), d = layers.front().dim(1);
  std::vector<Tensor<T>> cols;
  for (const auto& l : layers) cols.push_back(nx::reshape(l, {n * d, 1}));
  const auto stacked = nx::concat(std::span<const Tensor<T>>(cols), 1);                 // [N*d x L]
  const auto probs = nx::transpose(nx::softmax(weights, 1));                            // [L x 1]
  const auto mixed = nx::matmul(nx::matmul(stacked, probs), scale);                     // [N*d x 1]
  return nx::reshape(mixed, {n, d});
}

template <typename T>
std::vector<Tensor<T>> mixable_layers(const model::ModelOutput<T>& out) {
  std::vector<Tensor<T>> layers;
  const std::size_t n = out.fwd.layers.size();
  // The top block contributes its normalized output, the one the combination layer reads.
  for (std::size_t l = 0; l < n; ++l) {
    if (l + 1 == n) {
      layers.push_back(nx::add(out.fwd.final, out.bwd.final));
    } else {
      layers.push_back(nx::add(out.fwd.layers[l], out.bwd.layers[l]));
    }
  }
  layers.push_back(out.features);
  return layers;
}

// ---------------------------------------------------------------------------
// TaskModel

template <typename T>
TaskModel<T>::TaskModel(const TwoTowerModel<T>& pretrained, const TaskSpec& spec, const FinetuneConfig& config)
    : spec_(spec), config_(config), frozen_mix_(config.frozen_mix) {
  spec_.validate();
  config_.validate();
  auto mc = pretrained.config();
  if (spec_.is_pair() && mc.vocab_size <= textdata::kSepId) throw FinetuneError("pair tasks need <sep> in the vocabulary");
  mc.dropout = mc.attention_dropout = mc.relu_dropout = config_.lm_dropout;
  model_ = std::make_unique<TwoTowerModel<T>>(mc, pretrained.type_strings());
  model_->params().copy_from(pretrained.params());

  const std::size_t d = mc.d_model, c = spec_.outputs();
  if (spec_.is_tagging()) {
    head_.add("head.tag.w", {d, c}, model::Init::zeros);
    head_.add("head.tag.b", {c}, model::Init::zeros);
  } else if (spec_.is_pair()) {
    head_.add("head.w2", {3 * d, c}, model::Init::zeros);
    head_.add("head.b", {c}, model::Init::zeros);
  } else {
    head_.add("head.w1", {2 * d, c}, model::Init::zeros);
    head_.add("head.b", {c}, model::Init::zeros);
  }
  for (std::size_t i = 0; i < head_.size(); ++i) head_.at(i).set_requires_grad(true);
  if (frozen_mix_) {
    mix_.weights = head_.add("mix.weights", {1, mc.n_blocks + 1}, model::Init::zeros);
    mix_.scale = head_.add("mix.scale", {1, 1}, model::Init::ones);
    mix_.weights.set_requires_grad(true);
    mix_.scale.set_requires_grad(true);
    for (std::size_t i = 0; i < model_->params().size(); ++i) model_->params().at(i).set_requires_grad(false);
  }
}

template <typename T>
std::vector<std::size_t> TaskModel<T>::sequence(const TaskExample& e) const {
  using textdata::kBoundaryId;
  std::vector<std::size_t> ids{kBoundaryId};
  ids.insert(ids.end(), e.a.begin(), e.a.end());
  if (spec_.is_pair()) {
    if (e.a.empty() || e.b.empty()) throw FinetuneError("pair examples need two non-empty segments");
    ids.push_back(textdata::kSepId);
    ids.insert(ids.end(), e.b.begin(), e.b.end());
  }
  ids.push_back(kBoundaryId);
  if (ids.size() > model_->config().max_len) {
    throw FinetuneError("example of " + std::to_string(ids.size()) + " tokens exceeds max_len " +
                        std::to_string(model_->config().max_len) + " (no truncation)");
  }
  const std::size_t v = model_->config().vocab_size;
  for (auto id : ids) {
    if (id >= v) throw FinetuneError("token id " + std::to_string(id) + " outside the model vocabulary");
  }
  if (spec_.is_tagging()) {
    if (e.tags.size() != e.a.size()) throw FinetuneError("tag count differs from token count");
    for (auto t : e.tags) {
      if (t != kIgnoreTag && t >= spec_.num_classes) {
        throw FinetuneError("tag id " + std::to_string(t) + " out of range for " + std::to_string(spec_.num_classes) +
                            " tags");
      }
    }
  } else if (spec_.kind != TaskKind::regression && e.label >= spec_.num_classes) {
    throw FinetuneError("label " + std::to_string(e.label) + " out of range");
  }
  return ids;
}

template <typename T>
Batch TaskModel<T>::make_batch(const std::vector<const TaskExample*>& examples) const {
  std::vector<std::vector<std::size_t>> seqs;
  seqs.reserve(examples.size());
  for (const auto* e : examples) seqs.push_back(sequence(*e));
  std::vector<const std::vector<std::size_t>*> rows;
  std::vector<std::size_t> source;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    rows.push_back(&seqs[i]);
    source.push_back(i);
  }
  return textdata::make_batch(rows, source);
}

template <typename T>
Tensor<T> TaskModel<T>::position_features(const Batch& batch, ForwardContext& ctx) const {
  model::ForwardOptions opts;
  opts.mode = spec_.is_tagging() ? config_.mode : CombineMode::finetune_unmasked;
  if (!frozen_mix_) return model_->forward(batch, ctx, opts).features;
  std::vector<Tensor<T>> layers;
  {
    NoGradGuard guard;
    layers = mixable_layers(model_->forward(batch, ctx, opts));
  }
  return mix_.mix(layers);
}

template <typename T>
Tensor<T> TaskModel<T>::sentence_features(const Batch& batch, ForwardContext& ctx) const {
  const auto feats = position_features(batch, ctx);
  const std::size_t w = batch.width;
  std::vector<std::ptrdiff_t> first, last, sep;
  for (std::size_t b = 0; b < batch.rows; ++b) {
    const auto base = static_cast<std::ptrdiff_t>(b * w);
    first.push_back(base);
    last.push_back(base + static_cast<std::ptrdiff_t>(batch.lengths[b]) - 1);
    if (spec_.is_pair()) {
      std::ptrdiff_t at = -1;
      for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
        if (batch.at(b, t) == textdata::kSepId) {
          at = base + static_cast<std::ptrdiff_t>(t);
          break;
        }
      }
      sep.push_back(at);
    }
  }
  std::vector<Tensor<T>> parts{nx::gather_rows(feats, std::span<const std::ptrdiff_t>(first)),
                               nx::gather_rows(feats, std::span<const std::ptrdiff_t>(last))};
  if (spec_.is_pair()) parts.push_back(nx::gather_rows(feats, std::span<const std::ptrdiff_t>(sep)));
  return nx::scale(nx::concat(std::span<const Tensor<T>>(parts), 1), static_cast<T>(config_.feature_scale));
}

template <typename T>
Tensor<T> TaskModel<T>::logits(const Batch& batch, ForwardContext& ctx) const {
  const T p = static_cast<T>(config_.head_dropout);
  if (spec_.is_tagging()) {
    auto f = nx::scale(position_features(batch, ctx), static_cast<T>(config_.feature_scale));
    return nx::linear(nx::dropout(f, p, ctx), head_.get("head.tag.w"), head_.get("head.tag.b"));
  }
  const auto f = nx::dropout(sentence_features(batch, ctx), p, ctx);
  return nx::linear(f, head_.get(spec_.is_pair() ? "head.w2" : "head.w1"), head_.get("head.b"));
}

template <typename T>
Tensor<T> TaskModel<T>::loss(const std::vector<const TaskExample*>& examples, ForwardContext& ctx) const {
  const auto batch = make_batch(examples);
  const auto out = logits(batch, ctx);
  if (spec_.is_tagging()) {
    std::vector<std::ptrdiff_t> rows;
    std::vector<std::size_t> targets;
    for (std::size_t b = 0; b < examples.size(); ++b) {
      const auto& tags = examples[b]->tags;
      for (std::size_t i = 0; i < tags.size(); ++i) {
        if (tags[i] == kIgnoreTag) continue;
        rows.push_back(static_cast<std::ptrdiff_t>(b * batch.width + i + 1));
        targets.push_back(tags[i]);
      }
    }
    if (targets.empty()) throw FinetuneError("tagging batch has no scored tokens");
    const std::vector<T> weights(targets.size(), static_cast<T>(1.0 / static_cast<double>(targets.size())));
    const auto logp = nx::log_softmax(nx::gather_rows(out, std::span<const std::ptrdiff_t>(rows)));
    return nx::nll_sum(logp, std::span<const std::size_t>(targets), std::span<const T>(weights));
  }
  const double inv = 1.0 / static_cast<double>(examples.size());
  if (spec_.kind == TaskKind::regression) {
    std::vector<T> target;
    for (const auto* e : examples) target.push_back(static_cast<T>(e->target));
    return nx::scale(nx::squared_error_sum(out, std::span<const T>(target)), static_cast<T>(inv));
  }
  std::vector<std::size_t> labels;
  for (const auto* e : examples) labels.push_back(e->label);
  const std::vector<T> weights(labels.size(), static_cast<T>(inv));
  return nx::nll_sum(nx::log_softmax(out), std::span<const std::size_t>(labels), std::span<const T>(weights));
}

template <typename T>
TaskEval TaskModel<T>::evaluate(const std::vector<TaskExample>& data) const {
  if (data.empty()) throw FinetuneError("cannot evaluate on an empty set");
  NoGradGuard guard;
  TaskEval r;
  double loss_sum = 0;
  std::size_t scored = 0;
  std::vector<std::size_t> gold_labels;
  std::vector<double> gold_values;
  std::vector<std::vector<std::string>> pred_tags, gold_tags;
  for (std::size_t start = 0; start < data.size(); start += config_.eval_batch) {
    const std::size_t end = std::min(data.size(), start + config_.eval_batch);
    std::vector<const TaskExample*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&data[i]);
    ForwardContext ctx;
    const auto batch = make_batch(chunk);
    const auto out = logits(batch, ctx);
    const std::size_t c = out.dim(1);
    auto argmax = [&](std::size_t row) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k) {
        if (out.at(row, k) > out.at(row, best)) best = k;
      }
      return best;
    };
    auto nll = [&](std::size_t row, std::size_t target) {
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < c; ++k) top = std::max(top, static_cast<double>(out.at(row, k)));
      double z = 0;
      for (std::size_t k = 0; k < c; ++k) z += std::exp(static_cast<double>(out.at(row, k)) - top);
      return top + std::log(z) - static_cast<double>(out.at(row, target));
    };
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const auto& e = *chunk[b];
      if (spec_.is_tagging()) {
        std::vector<std::string> ps, gs;
        for (std::size_t i = 0; i < e.tags.size(); ++i) {
          if (e.tags[i] == kIgnoreTag) continue;
          const std::size_t row = b * batch.width + i + 1;
          const std::size_t pred = argmax(row);
          loss_sum += nll(row, e.tags[i]);
          ++scored;
          r.prediction.labels.push_back(pred);
          gold_labels.push_back(e.tags[i]);
          ps.push_back(spec_.label_name(pred));
          gs.push_back(spec_.label_name(e.tags[i]));
        }
        pred_tags.push_back(std::move(ps));
        gold_tags.push_back(std::move(gs));
      } else if (spec_.kind == TaskKind::regression) {
        const double v = static_cast<double>(out.at(b, 0));
        loss_sum += (v - e.target) * (v - e.target);
        ++scored;
        r.prediction.values.push_back(v);
        gold_values.push_back(e.target);
      } else {
        loss_sum += nll(b, e.label);
        ++scored;
        r.prediction.labels.push_back(argmax(b));
        gold_labels.push_back(e.label);
      }
    }
  }
  r.loss = scored ? loss_sum / static_cast<double>(scored) : 0.0;
  switch (spec_.metric) {
    case MetricKind::accuracy:
      if (gold_labels.size() < 2) throw FinetuneError("accuracy needs at least two scored items");
      r.score = accuracy(r.prediction.labels, gold_labels);
      break;
    case MetricKind::f1:
      r.score = binary_f1(r.prediction.labels, gold_labels, &r.warnings);
      break;
    case MetricKind::mcc:
      r.score = mcc(r.prediction.labels, gold_labels, &r.warnings);
      break;
    case MetricKind::spearman:
      r.score = spearman(r.prediction.values, gold_values, &r.warnings);
      break;
    case MetricKind::span_f1:
      r.score = span_f1(pred_tags, gold_tags, &r.warnings);
      break;
  }
  return r;
}

template <typename T>
std::vector<Tensor<T>*> TaskModel<T>::trainable() {
  std::vector<Tensor<T>*> out;
  if (!frozen_mix_) {
    for (std::size_t i = 0; i < model_->params().size(); ++i) out.push_back(&model_->params().at(i));
  }
  for (std::size_t i = 0; i < head_.size(); ++i) out.push_back(&head_.at(i));
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> TaskModel<T>::trainable() const {
  std::vector<const Tensor<T>*> out;
  if (!frozen_mix_) {
    for (std::size_t i = 0; i < model_->params().size(); ++i) out.push_back(&model_->params().at(i));
  }
  for (std::size_t i = 0; i < head_.size(); ++i) out.push_back(&head_.at(i));
  return out;
}

template <typename T>
std::vector<std::vector<T>> TaskModel<T>::snapshot() const {
  std::vector<std::vector<T>> out;
  for (const auto* t : trainable()) out.emplace_back(t->data().begin(), t->data().end());
  return out;
}

template <typename T>
void TaskModel<T>::restore(const std::vector<std::vector<T>>& values) {
  auto ts = trainable();
  if (ts.size() != values.size()) throw std::invalid_argument("snapshot does not match the task model");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    auto dst = ts[i]->mutable_data();
    if (dst.size() != values[i].size()) throw std::invalid_argument("snapshot does not match the task model");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

template <typename T>
void TaskModel<T>::save(const fs::path& dir) const {
  fs::create_directories(dir);
  model_->save(dir / "model");
  head_.save(dir / "head");
  TaskSpec stored = spec_;
  stored.train = stored.dev = stored.test = fs::path();
  stored.save(dir / "task.cfg");
  config_.to_kv().save(dir / "finetune.txt");
}

template <typename T>
TaskModel<T> TaskModel<T>::load(const fs::path& dir) {
  const auto spec = TaskSpec::load(dir / "task.cfg");
  FinetuneConfig cfg;
  cfg.apply(KeyValues::load(dir / "finetune.txt"));
  const auto base = TwoTowerModel<T>::load(dir / "model");
  TaskModel<T> tm(base, spec, cfg);
  tm.head_.load(dir / "head");
  return tm;
}

// ---------------------------------------------------------------------------
// Grid search

nlohmann::json FinetuneReport::to_json() const {
  auto cell = [](const CellResult& c) {
    return nlohmann::json{{"lr", c.lr},         {"seed", c.seed},         {"epoch", c.epoch},
                          {"dev_score", c.dev_score}, {"dev_loss", c.dev_loss}, {"train_loss", c.train_loss}};
  };
  nlohmann::json j;
  j["task"] = task;
  j["initial_loss"] = initial_loss;
  j["best"] = cell(best);
  j["cells"] = nlohmann::json::array();
  for (const auto& c : cells) j["cells"].push_back(cell(c));
  if (!warnings.empty()) j["warnings"] = warnings;
  return j;
}

template <typename T>
FinetuneResult<T> finetune_task(const TwoTowerModel<T>& pretrained, const TaskSpec& spec,
                                const std::vector<TaskExample>& train, const std::vector<TaskExample>& dev,
                                const FinetuneConfig& config) {
  config.validate();
  spec.validate();
  if (dev.empty()) throw FinetuneError("finetuning needs a non-empty validation set");
  if (train.empty()) throw FinetuneError("finetuning needs a non-empty training set");

  FinetuneResult<T> result;
  auto& report = result.report;
  report.task = spec.name;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<std::vector<T>> best_values;
  bool first_step = true;

  const std::size_t per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  trainer::Schedule sched;
  sched.lr_init = config.lr_init;
  sched.lr_floor = config.lr_floor;
  sched.total = total;
  sched.warmup = total > 1 ? std::max<std::size_t>(1, static_cast<std::size_t>(config.warmup_fraction *
                                                                                 static_cast<double>(total)))
                           : 0;

  for (double lr : config.lrs) {
    for (std::size_t s = 0; s < config.seeds; ++s) {
      TaskModel<T> tm(pretrained, spec, config);
      trainer::Adam<T> model_opt(tm.model().params());
      trainer::Adam<T> head_opt(tm.head());
      sched.lr_peak = lr;
      sched.validate();
      const std::string tag = std::to_string(s);
      numerics::Rng rng(numerics::derive_seed(config.seed, "finetune-order-" + tag));
      ForwardContext ctx;
      ctx.train = true;
      ctx.seed = numerics::derive_seed(config.seed, "finetune-dropout-" + tag);
      std::vector<std::size_t> order(train.size());
      std::size_t step = 0;
      double prev_dev_loss = std::numeric_limits<double>::infinity();
      for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
          std::vector<const TaskExample*> chunk;
          for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
            chunk.push_back(&train[order[i]]);
          }
          ctx.step = step;
          ctx.next_op = 0;
          tm.model().params().zero_grad();
          tm.head().zero_grad();
          const auto loss = tm.loss(chunk, ctx);
          const double value = static_cast<double>(loss.item());
          if (!std::isfinite(value)) throw std::runtime_error("finetuning loss became non-finite");
          if (first_step) {
            report.initial_loss = value;
            first_step = false;
          }
          loss_sum += value;
          nx::backward(loss);
          const double rate = trainer::lr_schedule(step, sched);
          if (!config.frozen_mix) model_opt.step(tm.model().params(), rate);
          head_opt.step(tm.head(), rate * config.head_lr_scale);
          ++step;
        }
        const auto ev = tm.evaluate(dev);
        CellResult cell{lr, s, epoch, ev.score, ev.loss, loss_sum / static_cast<double>(per_epoch)};
        report.cells.push_back(cell);
        for (const auto& w : ev.warnings) report.warnings.push_back(w);
        if (ev.score > best_score || (ev.score == best_score && ev.loss < report.best.dev_loss)) {
          best_score = ev.score;
          report.best = cell;
          best_values = tm.snapshot();
        }
        if (config.early_stop && !(ev.loss < prev_dev_loss)) break;
        prev_dev_loss = ev.loss;
      }
    }
  }
  result.best = std::make_unique<TaskModel<T>>(pretrained, spec, config);
  result.best->restore(best_values);
  return result;
}

template <typename T>
TaggingResult token_tagging(const TwoTowerModel<T>& pretrained, const TaskSpec& spec,
                            const std::vector<TaskExample>& train, const std::vector<TaskExample>& dev,
                            FinetuneConfig config, CombineMode mode) {
  if (!spec.is_tagging()) throw FinetuneError("token_tagging needs a tagging task");
  TaskSpec acc = spec;
  acc.metric = MetricKind::accuracy;
  config.mode = mode;
  auto run = finetune_task(pretrained, acc, train, dev, config);
  TaggingResult r;
  r.train_accuracy = run.best->evaluate(train).score;
  r.dev_accuracy = run.report.best.dev_score;
  r.report = std::move(run.report);
  return r;
}

#define CLOZE_INSTANTIATE(T)                                                                                     \
  template struct LayerMix<T>;                                                                                   \
  template std::vector<Tensor<T>> mixable_layers(const model::ModelOutput<T>&);                                  \
  template class TaskModel<T>;                                                                                   \
  template FinetuneResult<T> finetune_task(const TwoTowerModel<T>&, const TaskSpec&,                             \
                                           const std::vector<TaskExample>&, const std::vector<TaskExample>&,     \
                                           const FinetuneConfig&);                                               \
  template TaggingResult token_tagging(const TwoTowerModel<T>&, const TaskSpec&, const std::vector<TaskExample>&, \
                                       const std::vector<TaskExample>&, FinetuneConfig, CombineMode);

CLOZE_INSTANTIATE(float)
CLOZE_INSTANTIATE(double)

}  // namespace cloze::finetune
