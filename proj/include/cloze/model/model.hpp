#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "cloze/model/config.hpp"
#include "cloze/model/params.hpp"
#include "cloze/numerics/attention.hpp"
#include "cloze/numerics/rng.hpp"
#include "cloze/textdata/examples.hpp"

namespace cloze::model {

using numerics::AttentionMask;
using numerics::ForwardContext;
using textdata::Batch;

enum class Direction { forward, backward };
enum class CombineMode { train_masked, finetune_unmasked };

/// pe[t, 2k] = sin(t / 10000^(2k/d)), pe[t, 2k+1] = cos(t / 10000^(2k/d)).
template <typename T>
Tensor<T> sinusoidal_positions(std::size_t length, std::size_t d);

/// Forward: key j visible to query i iff j <= i. Backward: iff j >= i.
/// Keys at pad positions are never visible.
AttentionMask tower_mask(const Batch& batch, Direction direction);

/// Memory layout per row: [F_0 .. F_{T-1}, B_0 .. B_{T-1}]. In train_masked
/// mode target i sees F_j for j < i and B_j for j > i; finetune_unmasked
/// exposes every non-pad state. `unmask_target` additionally exposes F_i
/// and B_i; it exists only as a negative control for leak tests.
AttentionMask combination_mask(const Batch& batch, CombineMode mode, bool unmask_target = false);

/// y = g * relu(W_h x + b_h) + (1 - g) * x with g = sigmoid(W_g x + b_g).
template <typename T>
Tensor<T> highway(const Tensor<T>& x, const Tensor<T>& wh, const Tensor<T>& bh, const Tensor<T>& wg,
                  const Tensor<T>& bg);

template <typename T>
struct TowerStates {
  /// Output of each block, [B*T x d].
  std::vector<Tensor<T>> layers;
  /// Final layer norm of the last block.
  Tensor<T> final;
};

template <typename T>
struct ModelOutput {
  /// Encoder output plus positions.
  Tensor<T> input;
  TowerStates<T> fwd;
  TowerStates<T> bwd;
  /// Combination layer output, [B*T x d]; undefined when not combined.
  Tensor<T> features;
};

struct ForwardOptions {
  CombineMode mode = CombineMode::train_masked;
  bool combine = true;
  bool unmask_target = false;
};

/// Forward and backward towers over a shared input encoder, a target-masked
/// combination attention layer, and an output classifier.
template <typename T>
class TwoTowerModel {
 public:
  /// `type_strings` (one per vocabulary id) is required by the char-CNN encoder.
  explicit TwoTowerModel(ModelConfig config, std::vector<std::string> type_strings = {});

  const ModelConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const std::vector<std::string>& type_strings() const { return types_; }

  ModelOutput<T> forward(const Batch& batch, ForwardContext& ctx, const ForwardOptions& options = {}) const;

  Tensor<T> encode_inputs(const Batch& batch, ForwardContext& ctx) const;
  TowerStates<T> tower(const Tensor<T>& input, const Batch& batch, Direction direction, ForwardContext& ctx) const;
  Tensor<T> combine(const TowerStates<T>& fwd, const TowerStates<T>& bwd, const Batch& batch,
                    const ForwardOptions& options, ForwardContext& ctx) const;

  /// Log-probabilities over the whole vocabulary, [N x V].
  Tensor<T> log_probs(const Tensor<T>& features) const;

  /// Parameter elements excluding the output classifier.
  std::size_t parameter_count() const { return params_.element_count_excluding("cls."); }

  /// config.txt, types.txt (char-CNN), manifest.txt and params/.
  void save(const std::filesystem::path& dir) const;
  /// Loads parameters; the stored config must equal this model's config.
  void load_parameters(const std::filesystem::path& dir);
  static TwoTowerModel load(const std::filesystem::path& dir);

 private:
  Tensor<T> char_cnn(const Batch& batch) const;
  Tensor<T> attention_block(const std::string& prefix, const Tensor<T>& query_in, const Tensor<T>& memory,
                            const AttentionMask& mask, std::size_t heads, ForwardContext& ctx) const;
  Tensor<T> ffn_block(const std::string& prefix, const Tensor<T>& x, ForwardContext& ctx) const;
  void add_attention(const std::string& prefix);
  void add_ffn(const std::string& prefix, std::size_t hidden);
  void add_norm(const std::string& name);

  ModelConfig config_;
  std::vector<std::string> types_;
  ParamSet<T> params_;
};

ModelConfig load_model_config(const std::filesystem::path& dir);

}  // namespace cloze::model
