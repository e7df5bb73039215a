#include "cloze/cli/run_config.hpp"

#include <algorithm>

#include "cloze/numerics/rng.hpp"

namespace cloze::cli {

namespace {

const std::vector<std::string> kDataKeys{"examples", "block_len", "heldout_fraction", "token_mode",
                                         "merges",   "min_freq",  "max_types"};
const std::vector<std::string> kCorpusKeys{"corpus",     "corpus_size", "corpus_seed",  "inner_vocab",
                                           "class_size", "line_tokens", "lines_per_doc"};
const std::vector<std::string> kTaskKeys{"task_train", "task_dev", "task_lrs", "task_epochs", "task_seeds", "task_batch"};

template <typename F>
auto parsed(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace

finetune::FinetuneConfig DownstreamConfig::finetune_config(std::uint64_t seed) const {
  finetune::FinetuneConfig c;
  c.lrs = lrs;
  c.epochs = epochs;
  c.seeds = seeds;
  c.batch_size = batch_size;
  c.seed = seed;
  return c;
}

RunConfig::RunConfig() {
  model.d_model = 32;
  model.n_heads = 4;
  model.ffn_dim = 128;
  model.final_heads = 4;
  model.max_len = 128;
  train.max_tokens = 512;
  corpus.size = 4000;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out = model::ModelConfig::keys();
    for (const auto* group : {&trainer::PretrainConfig::keys(), &kDataKeys, &kCorpusKeys, &kTaskKeys}) {
      out.insert(out.end(), group->begin(), group->end());
    }
    return out;
  }();
  return k;
}

void RunConfig::apply(const KeyValues& kv) {
  const auto unknown = kv.unknown_keys(keys());
  if (!unknown.empty()) throw ConfigError("unknown configuration key '" + unknown.front() + "'");
  parsed("model", [&] { model.apply(kv); });
  parsed("trainer", [&] { train.apply(kv); });

  if (kv.has("examples")) data.examples = parsed("examples", [&] { return textdata::parse_example_mode(kv.get("examples")); });
  data.block_len = kv.get_size("block_len", data.block_len);
  data.heldout_fraction = kv.get_double("heldout_fraction", data.heldout_fraction);
  if (kv.has("token_mode")) {
    data.token_mode = parsed("token_mode", [&] { return textdata::parse_token_mode(kv.get("token_mode")); });
  }
  data.merges = kv.get_size("merges", data.merges);
  data.min_freq = kv.get_u64("min_freq", data.min_freq);
  data.max_types = kv.get_size("max_types", data.max_types);

  if (kv.has("corpus")) corpus.kind = parsed("corpus", [&] { return textdata::parse_synth_kind(kv.get("corpus")); });
  corpus.size = kv.get_size("corpus_size", corpus.size);
  corpus.seed = kv.get_u64("corpus_seed", corpus.seed);
  corpus.inner_vocab = kv.get_size("inner_vocab", corpus.inner_vocab);
  corpus.class_size = kv.get_size("class_size", corpus.class_size);
  corpus.line_tokens = kv.get_size("line_tokens", corpus.line_tokens);
  corpus.lines_per_doc = kv.get_size("lines_per_doc", corpus.lines_per_doc);

  task.train = kv.get_size("task_train", task.train);
  task.dev = kv.get_size("task_dev", task.dev);
  task.lrs = kv.get_doubles("task_lrs", task.lrs);
  task.epochs = kv.get_size("task_epochs", task.epochs);
  task.seeds = kv.get_size("task_seeds", task.seeds);
  task.batch_size = kv.get_size("task_batch", task.batch_size);

  for (const auto& [key, value] : kv.entries()) explicit_.insert(key);
}

void RunConfig::set_seed(std::uint64_t seed) {
  train.seed = seed;
  explicit_.insert("seed");
  if (!explicit_.contains("init_seed")) model.init_seed = numerics::derive_seed(seed, "model-init");
  if (!explicit_.contains("corpus_seed")) corpus.seed = numerics::derive_seed(seed, "corpus");
}

void RunConfig::validate() const {
  train.validate();
  if (!(data.heldout_fraction >= 0 && data.heldout_fraction < 1)) throw ConfigError("heldout_fraction must be in [0, 1)");
  if (data.block_len == 0) throw ConfigError("block_len must be positive");
  if (corpus.size == 0) throw ConfigError("corpus_size must be positive");
  if (task.lrs.empty() || task.seeds == 0 || task.epochs == 0 || task.batch_size == 0) {
    throw ConfigError("task_lrs, task_seeds, task_epochs and task_batch must be non-empty / positive");
  }
}

KeyValues RunConfig::to_kv() const {
  KeyValues kv = model.to_kv();
  kv.merge(train.to_kv());
  kv.set("examples", textdata::to_string(data.examples));
  kv.set("block_len", std::to_string(data.block_len));
  kv.set("heldout_fraction", format_double(data.heldout_fraction));
  kv.set("token_mode", textdata::to_string(data.token_mode));
  kv.set("merges", std::to_string(data.merges));
  kv.set("min_freq", std::to_string(data.min_freq));
  kv.set("max_types", std::to_string(data.max_types));
  kv.set("corpus", textdata::to_string(corpus.kind));
  kv.set("corpus_size", std::to_string(corpus.size));
  kv.set("corpus_seed", std::to_string(corpus.seed));
  kv.set("inner_vocab", std::to_string(corpus.inner_vocab));
  kv.set("class_size", std::to_string(corpus.class_size));
  kv.set("line_tokens", std::to_string(corpus.line_tokens));
  kv.set("lines_per_doc", std::to_string(corpus.lines_per_doc));
  kv.set("task_train", std::to_string(task.train));
  kv.set("task_dev", std::to_string(task.dev));
  kv.set("task_lrs", join_doubles(task.lrs));
  kv.set("task_epochs", std::to_string(task.epochs));
  kv.set("task_seeds", std::to_string(task.seeds));
  kv.set("task_batch", std::to_string(task.batch_size));
  return kv;
}

KeyValues parse_overrides(const std::vector<std::string>& items) {
  KeyValues kv;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not key=value");
    kv.set(item.substr(0, eq), item.substr(eq + 1));
  }
  return kv;
}

}  // namespace cloze::cli
