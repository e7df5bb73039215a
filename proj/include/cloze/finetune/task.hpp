#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cloze/finetune/metrics.hpp"
#include "cloze/numerics/keyvalue.hpp"
#include "cloze/textdata/synth.hpp"
#include "cloze/textdata/tokenizer.hpp"

namespace cloze::finetune {

enum class TaskKind { single_classification, pair_classification, regression, token_tagging };
TaskKind parse_task_kind(const std::string& name);
std::string to_string(TaskKind kind);

/// Task description, stored as a flat key=value file:
///   kind, classes, metric, labels (comma list), train/dev/test (paths
///   relative to the file).
struct TaskSpec {
  std::string name = "task";
  TaskKind kind = TaskKind::single_classification;
  std::size_t num_classes = 2;
  MetricKind metric = MetricKind::accuracy;
  /// Class or tag names; empty means classes are written as 0..C-1.
  std::vector<std::string> labels;
  std::filesystem::path train, dev, test;

  bool is_pair() const { return kind == TaskKind::pair_classification; }
  bool is_tagging() const { return kind == TaskKind::token_tagging; }
  /// Output width of the head: 1 for regression, C otherwise.
  std::size_t outputs() const { return kind == TaskKind::regression ? 1 : num_classes; }
  std::size_t label_index(const std::string& label) const;
  const std::string& label_name(std::size_t index) const;

  void validate() const;
  KeyValues to_kv() const;
  static TaskSpec from_kv(const KeyValues& kv, const std::filesystem::path& base = {});
  static TaskSpec load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// One line of task data before tokenization. Classification and
/// regression: "label<TAB>text" or "label<TAB>text_a<TAB>text_b". Tagging:
/// "token<TAB>tag" lines with blank lines between sentences.
struct RawRecord {
  std::string label;
  std::string a;
  std::string b;
  std::vector<std::string> words;
  std::vector<std::string> tags;
};

std::vector<RawRecord> read_records(std::istream& in, TaskKind kind, const std::string& origin = "<stream>");
std::vector<RawRecord> load_records(const std::filesystem::path& path, TaskKind kind);
void write_records(std::ostream& out, const std::vector<RawRecord>& records, TaskKind kind);
void save_records(const std::filesystem::path& path, const std::vector<RawRecord>& records, TaskKind kind);

/// Positions a tagging head does not score (continuation pieces of a word).
inline constexpr std::size_t kIgnoreTag = std::numeric_limits<std::size_t>::max();

struct TaskExample {
  std::vector<std::size_t> a;
  std::vector<std::size_t> b;
  std::size_t label = 0;
  double target = 0;
  /// Aligned with `a` for tagging.
  std::vector<std::size_t> tags;
};

/// Tokenizes records; labels are resolved through the spec. A tagged word
/// that splits into several pieces is scored on its first piece only.
std::vector<TaskExample> encode_records(const std::vector<RawRecord>& records, const TaskSpec& spec,
                                        const textdata::Tokenizer& tokenizer);

struct SyntheticTask {
  TaskSpec spec;
  std::vector<RawRecord> train;
  std::vector<RawRecord> dev;
};

/// Tokens "w0".."w{types-1}" drawn i.i.d.; each token's tag is its own class
/// (index mod classes). Unlearnable without access to the token itself.
SyntheticTask identity_tagging_task(std::size_t types, std::size_t classes, std::size_t train_sentences,
                                    std::size_t dev_sentences, std::size_t length, std::uint64_t seed);

/// Pairs (a, b) of class-chain segments; label 1 when the first class of b
/// may follow the last class of a under the chain. Classes are never shown,
/// so deciding needs the token classes and transitions that cloze
/// pretraining on the same language learns. Labels alternate 1, 0 before
/// shuffling.
SyntheticTask continuation_task(const textdata::SynthOptions& language, std::size_t train_pairs,
                                std::size_t dev_pairs, std::size_t segment_tokens, std::uint64_t seed);

/// Single sentences "l c r" of the neighbor-determined language; label 1
/// when c is the center its two neighbours determine, 0 for any other
/// center.
SyntheticTask center_task(const textdata::SynthOptions& language, std::size_t train_sentences,
                          std::size_t dev_sentences, std::uint64_t seed);

/// The pair or sentence task matching a synthetic language, if it has one.
std::optional<SyntheticTask> downstream_task(const textdata::SynthOptions& language, std::size_t train,
                                             std::size_t dev, std::uint64_t seed);

}  // namespace cloze::finetune
