#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cloze/finetune/task.hpp"
#include "cloze/model/model.hpp"
#include "json.hpp"

namespace cloze::finetune {

using model::CombineMode;
using model::ParamSet;
using model::TwoTowerModel;
using numerics::Tensor;

/// Bad task data: overlong sequences, empty second segments, tags out of
/// range, empty validation sets.
class FinetuneError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

CombineMode parse_combine_mode(const std::string& name);
std::string to_string(CombineMode mode);

struct FinetuneConfig {
  std::vector<double> lrs{1e-4, 5e-5, 3e-5};
  std::size_t seeds = 3;
  std::size_t epochs = 3;
  /// Stop a cell once its validation loss fails to improve on the previous epoch.
  bool early_stop = false;
  std::size_t batch_size = 16;
  /// Dropout inside the pretrained model; 0 runs it in inference mode.
  double lm_dropout = 0.0;
  double head_dropout = 0.1;
  double feature_scale = 16.0;
  /// Learning-rate multiplier of the head parameters (explicit groups).
  double head_lr_scale = 1.0;
  double warmup_fraction = 0.1;
  double lr_init = 1e-7;
  double lr_floor = 1e-6;
  std::uint64_t seed = 1;
  /// Combination-layer masking for tagging heads; sentence heads always run unmasked.
  CombineMode mode = CombineMode::finetune_unmasked;
  /// Freeze the pretrained model and learn a softmax-weighted layer mix instead.
  bool frozen_mix = false;
  std::size_t eval_batch = 64;

  /// Sentence tasks: the defaults. Tagging: up to 25 epochs with early stopping,
  /// 0.3 dropout everywhere, unscaled features and a 16x head learning rate.
  static FinetuneConfig for_task(TaskKind kind);

  void validate() const;
  KeyValues to_kv() const;
  void apply(const KeyValues& kv);
  static const std::vector<std::string>& keys();
};

/// Softmax-normalized per-layer weights and a global scale over the summed
/// tower outputs F^l + B^l of every block and the combination output.
template <typename T>
struct LayerMix {
  /// [1 x L] logits of the mixing weights.
  Tensor<T> weights;
  /// [1 x 1].
  Tensor<T> scale;

  std::vector<double> normalized() const;
  /// `layers` are [N x d] each; result is scale * sum_l softmax(w)_l * layers[l].
  Tensor<T> mix(const std::vector<Tensor<T>>& layers) const;
};

/// Per-position layer outputs the mix combines: F^l + B^l for each block, then
/// the combination output.
template <typename T>
std::vector<Tensor<T>> mixable_layers(const model::ModelOutput<T>& out);

struct Prediction {
  /// Sentence tasks: one per example. Tagging: one per scored token, in order.
  std::vector<std::size_t> labels;
  std::vector<double> values;
};

struct TaskEval {
  double score = 0;
  double loss = 0;
  Prediction prediction;
  std::vector<std::string> warnings;
};

/// A private copy of a pretrained model plus a zero-initialized task head.
template <typename T>
class TaskModel {
 public:
  TaskModel(const TwoTowerModel<T>& pretrained, const TaskSpec& spec, const FinetuneConfig& config);

  const TaskSpec& spec() const { return spec_; }
  const FinetuneConfig& config() const { return config_; }
  TwoTowerModel<T>& model() { return *model_; }
  const TwoTowerModel<T>& model() const { return *model_; }
  ParamSet<T>& head() { return head_; }
  const ParamSet<T>& head() const { return head_; }
  const LayerMix<T>* layer_mix() const { return frozen_mix_ ? &mix_ : nullptr; }

  /// <s> a <s> or <s> a <sep> b <s>; tagging sequences are <s> a <s>.
  std::vector<std::size_t> sequence(const TaskExample& e) const;

  /// Per-position features [B*T x d] (combination output or layer mix).
  Tensor<T> position_features(const textdata::Batch& batch, numerics::ForwardContext& ctx) const;
  /// Sentence features: [out(first <s>); out(last <s>)] or with out(<sep>)
  /// appended for pairs, times feature_scale. [B x 2d] or [B x 3d].
  Tensor<T> sentence_features(const textdata::Batch& batch, numerics::ForwardContext& ctx) const;

  /// Head outputs: [B x C] for sentence tasks, [B*T x C] for tagging.
  Tensor<T> logits(const textdata::Batch& batch, numerics::ForwardContext& ctx) const;
  /// Mean NLL (classification, tagging over scored tokens) or mean squared error.
  Tensor<T> loss(const std::vector<const TaskExample*>& examples, numerics::ForwardContext& ctx) const;

  textdata::Batch make_batch(const std::vector<const TaskExample*>& examples) const;

  TaskEval evaluate(const std::vector<TaskExample>& data) const;

  /// Values of every trainable tensor (model, mix and head).
  std::vector<std::vector<T>> snapshot() const;
  void restore(const std::vector<std::vector<T>>& values);

  /// model/, head/, task.cfg and finetune.txt.
  void save(const std::filesystem::path& dir) const;
  static TaskModel load(const std::filesystem::path& dir);

 private:
  std::vector<Tensor<T>*> trainable();
  std::vector<const Tensor<T>*> trainable() const;

  TaskSpec spec_;
  FinetuneConfig config_;
  std::unique_ptr<TwoTowerModel<T>> model_;
  ParamSet<T> head_;
  bool frozen_mix_ = false;
  LayerMix<T> mix_;
};

struct CellResult {
  double lr = 0;
  std::size_t seed = 0;
  std::size_t epoch = 0;
  double dev_score = 0;
  double dev_loss = 0;
  double train_loss = 0;
};

struct FinetuneReport {
  std::string task;
  std::vector<CellResult> cells;
  CellResult best;
  /// Training loss before the first update of the first cell (ln C for a zero head).
  double initial_loss = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

template <typename T>
struct FinetuneResult {
  FinetuneReport report;
  /// The selected (lr, seed, epoch) snapshot.
  std::unique_ptr<TaskModel<T>> best;
};

/// Grid search over lrs x seeds; Adam with linear warmup from lr_init over
/// the first warmup_fraction of updates, then cosine decay to lr_floor. Each
/// cell starts from a fresh copy of `pretrained`. The best cell is chosen by
/// validation metric; ties go to the lower validation loss, then to the
/// earlier cell.
template <typename T>
FinetuneResult<T> finetune_task(const TwoTowerModel<T>& pretrained, const TaskSpec& spec,
                                const std::vector<TaskExample>& train, const std::vector<TaskExample>& dev,
                                const FinetuneConfig& config);

struct TaggingResult {
  double train_accuracy = 0;
  double dev_accuracy = 0;
  FinetuneReport report;
};

/// Per-token tag prediction from combination features under `mode`.
template <typename T>
TaggingResult token_tagging(const TwoTowerModel<T>& pretrained, const TaskSpec& spec,
                            const std::vector<TaskExample>& train, const std::vector<TaskExample>& dev,
                            FinetuneConfig config, CombineMode mode);

}  // namespace cloze::finetune
