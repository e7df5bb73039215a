#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cloze/numerics/keyvalue.hpp"
#include "cloze/objectives/objectives.hpp"
#include "cloze/trainer/optimizer.hpp"
#include "json.hpp"

namespace cloze::trainer {

using model::TwoTowerModel;
using objectives::LossReport;
using objectives::Objective;
using textdata::Example;

struct PretrainConfig {
  Objective objective = Objective::cloze;
  double lambda = objectives::kDefaultBilmScale;
  std::size_t max_updates = 2000;
  std::size_t warmup_steps = 100;
  double lr_init = 1e-7;
  double lr_peak = 0.1;
  double lr_floor = 1e-4;
  double momentum = 0.99;
  double grad_norm_threshold = 0.1;
  std::uint64_t seed = 1;
  /// Padded tokens (rows x width) per micro-batch.
  std::size_t max_tokens = 4096;
  /// Micro-batches whose gradients are summed into one update.
  std::size_t accumulation = 1;
  /// 0 disables periodic checkpoints / evaluations (a final one is always written).
  std::size_t checkpoint_every = 0;
  std::size_t eval_every = 0;

  void validate() const;
  Schedule schedule() const;
  KeyValues to_kv() const;
  void apply(const KeyValues& kv);
  static PretrainConfig from_kv(const KeyValues& kv);
  static const std::vector<std::string>& keys();
};

/// Append-only JSON-lines sink; every record is flushed before returning.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path, bool append = true);

  bool is_open() const { return out_.is_open(); }
  void write(const nlohmann::json& record);

 private:
  std::ofstream out_;
};

/// Raised when the loss goes non-finite; checkpoints already written stay intact.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepResult {
  std::size_t step = 0;
  double lr = 0;
  LossReport report;
  RenormResult renorm;
  std::size_t tokens = 0;
  /// True when the update was dropped for a non-finite gradient norm.
  bool skipped = false;
};

/// Single-threaded pretraining loop: batches in a seeded per-epoch order,
/// objective, backward, gradient renormalization, scheduled NAG update.
/// Everything that affects the trajectory is in the checkpoint, so a
/// resumed run continues bit-identically.
template <typename T>
class Pretrainer {
 public:
  Pretrainer(TwoTowerModel<T>& model, PretrainConfig config, std::vector<Example> train,
             std::vector<Example> heldout = {});

  const PretrainConfig& config() const { return config_; }
  std::size_t step_count() const { return updates_; }
  bool done() const { return updates_ >= config_.max_updates; }

  void set_metrics(MetricsLog* log) { metrics_ = log; }
  /// Periodic and final checkpoints go to <dir>/step-NNNNNNN; <dir>/latest names the newest.
  void set_checkpoint_dir(std::filesystem::path dir) { checkpoint_dir_ = std::move(dir); }

  StepResult step();
  /// Steps until `until` updates (default max_updates) have been applied.
  void run(std::optional<std::size_t> until = std::nullopt);

  LossReport evaluate() const;

  /// Model, optimizer, config and loop counters.
  void save_checkpoint(const std::filesystem::path& dir) const;
  void load_checkpoint(const std::filesystem::path& dir);
  std::filesystem::path write_periodic_checkpoint();

 private:
  const textdata::Batch& next_batch();
  void log_step(const StepResult& r);
  void log_eval(const LossReport& r);

  TwoTowerModel<T>& model_;
  PretrainConfig config_;
  std::vector<Example> heldout_;
  std::vector<textdata::Batch> batches_;
  std::vector<std::size_t> order_;
  std::size_t order_epoch_ = static_cast<std::size_t>(-1);
  Nag<T> optimizer_;
  std::size_t updates_ = 0;
  std::size_t batches_seen_ = 0;
  std::size_t skipped_ = 0;
  MetricsLog* metrics_ = nullptr;
  std::optional<std::filesystem::path> checkpoint_dir_;
  std::chrono::steady_clock::time_point start_;
};

/// Reads the trainer config stored in a checkpoint directory.
PretrainConfig load_pretrain_config(const std::filesystem::path& dir);

/// Resolves <dir>/latest if present, otherwise returns dir itself.
std::filesystem::path resolve_checkpoint(const std::filesystem::path& dir);

}  // namespace cloze::trainer
