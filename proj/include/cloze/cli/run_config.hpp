#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "cloze/finetune/finetune.hpp"
#include "cloze/model/config.hpp"
#include "cloze/numerics/keyvalue.hpp"
#include "cloze/textdata/examples.hpp"
#include "cloze/textdata/synth.hpp"
#include "cloze/trainer/pretrain.hpp"

namespace cloze::cli {

/// How raw text becomes examples, and how much of it is held out.
struct DataConfig {
  textdata::ExampleMode examples = textdata::ExampleMode::sentence;
  std::size_t block_len = 512;
  /// Share of documents (from the end of the corpus) kept for evaluation.
  double heldout_fraction = 0.05;
  textdata::TokenMode token_mode = textdata::TokenMode::word;
  std::size_t merges = 30000;
  std::uint64_t min_freq = 1;
  std::size_t max_types = 0;

  textdata::TokenizerOptions tokenizer() const { return {token_mode, merges, min_freq, max_types}; }
};

/// Fine-tuning run used to score a pretrained model on the synthetic
/// downstream task of its language.
struct DownstreamConfig {
  std::size_t train = 300;
  std::size_t dev = 300;
  std::vector<double> lrs{1e-3};
  std::size_t epochs = 20;
  std::size_t seeds = 1;
  std::size_t batch_size = 16;

  finetune::FinetuneConfig finetune_config(std::uint64_t seed) const;
};

/// One flat key=value namespace for pretraining runs and synthetic
/// experiments: model keys, trainer keys, data keys, corpus_* keys for the
/// generator and task_* keys for downstream scoring.
struct RunConfig {
  model::ModelConfig model;
  trainer::PretrainConfig train;
  DataConfig data;
  textdata::SynthOptions corpus;
  DownstreamConfig task;

  RunConfig();

  /// Rejects unknown keys with ConfigError. Keys applied here count as
  /// explicit and are not overwritten by set_seed.
  void apply(const KeyValues& kv);
  /// Run seed; init_seed and corpus_seed are derived from it unless given.
  void set_seed(std::uint64_t seed);
  void validate() const;
  /// Every key with its resolved value.
  KeyValues to_kv() const;
  static const std::vector<std::string>& keys();

 private:
  std::set<std::string> explicit_;
};

/// Applies "key=value" override strings; malformed entries raise ConfigError.
KeyValues parse_overrides(const std::vector<std::string>& items);

}  // namespace cloze::cli
