#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cloze/cli/run_config.hpp"
#include "cloze/finetune/finetune.hpp"
#include "cloze/objectives/objectives.hpp"
#include "json.hpp"

namespace cloze::cli {

using objectives::LossReport;
using objectives::Objective;
using textdata::Example;
using textdata::RawDoc;

struct PreparedData {
  textdata::Tokenizer tokenizer;
  std::vector<Example> train;
  std::vector<Example> heldout;
  std::vector<std::string> warnings;
};

/// The last ceil(fraction * documents) documents are held out; a corpus
/// with a single document is split by lines instead.
std::pair<std::vector<RawDoc>, std::vector<RawDoc>> split_heldout(const std::vector<RawDoc>& docs, double fraction);

/// Builds the tokenizer on the training documents (unless one is given) and
/// encodes both splits.
PreparedData prepare_data(const std::vector<RawDoc>& docs, const DataConfig& data,
                          const textdata::Tokenizer* tokenizer = nullptr);

std::size_t content_tokens(const std::vector<Example>& examples);

/// Longest prefix of `examples` holding at most `budget` content tokens.
/// A budget above the total is a ConfigError.
std::vector<Example> budget_prefix(const std::vector<Example>& examples, std::size_t budget);

/// The configured model with the tokenizer's vocabulary size, validated.
model::ModelConfig model_for(const RunConfig& config, const textdata::Tokenizer& tokenizer);

/// Trains a fresh model for config.train.max_updates. With `out_dir`, writes
/// checkpoints under <out_dir>/checkpoints and metrics to <out_dir>/metrics.jsonl.
std::unique_ptr<model::TwoTowerModel<float>> pretrain_model(const RunConfig& config, const textdata::Tokenizer& tokenizer,
                                                            std::vector<Example> train, std::vector<Example> heldout,
                                                            Objective objective,
                                                            const std::filesystem::path* out_dir = nullptr);

/// Perplexity of the objective's own prediction: cloze (cloze, triplet) or
/// both bilm directions pooled (bilm).
double own_perplexity(const LossReport& report, Objective objective);

struct DownstreamData {
  finetune::TaskSpec spec;
  std::vector<finetune::TaskExample> train;
  std::vector<finetune::TaskExample> dev;
};

/// The synthetic task of config.corpus, encoded with `tokenizer`.
std::optional<DownstreamData> synthetic_downstream(const RunConfig& config, const textdata::Tokenizer& tokenizer);

/// Best validation score of fine-tuning `pretrained` with the task_* settings.
double downstream_score(const model::TwoTowerModel<float>& pretrained, const DownstreamData& task,
                        const RunConfig& config);

struct AblationRow {
  Objective objective = Objective::cloze;
  LossReport heldout;
  double perplexity = 0;
  /// Cloze perplexity on determined positions (neighbor-determined corpora).
  std::optional<double> determined;
  std::optional<double> task_score;

  nlohmann::json to_json() const;
};

struct AblationTable {
  std::string task;
  std::vector<AblationRow> rows;

  /// Header plus one tab-separated row per objective.
  std::string to_tsv() const;
};

/// One model per objective, same seed, data and update budget.
AblationTable run_ablation(const RunConfig& config, const PreparedData& data, const std::vector<Objective>& objectives,
                           const std::optional<DownstreamData>& task, bool determined_positions = false);

struct ScaleRow {
  std::size_t budget = 0;
  std::size_t tokens = 0;
  std::size_t examples = 0;
  double perplexity = 0;
  std::optional<double> task_score;

  nlohmann::json to_json() const;
};

/// One model per ascending token budget, each trained on that prefix of the
/// training split with identical hyper-parameters; held-out perplexity of
/// the configured objective.
std::vector<ScaleRow> run_datascale(const RunConfig& config, const PreparedData& data,
                                    const std::vector<std::size_t>& budgets, const std::optional<DownstreamData>& task);

}  // namespace cloze::cli
