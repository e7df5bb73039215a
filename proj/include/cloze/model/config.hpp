#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cloze/numerics/keyvalue.hpp"

namespace cloze::model {

enum class QueryMode { sum, concat };
enum class EncoderKind { embedding, char_cnn };
/// flat is an untied softmax layer, needed when the encoder has no
/// embedding matrix to share.
enum class ClassifierKind { flat_tied, flat, adaptive };

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_blocks = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t final_heads = 4;
  /// 0 means ffn_dim.
  std::size_t final_ffn_dim = 0;
  QueryMode query_mode = QueryMode::sum;
  EncoderKind encoder = EncoderKind::embedding;
  ClassifierKind classifier = ClassifierKind::flat_tied;
  double dropout = 0.1;
  double attention_dropout = 0.1;
  double relu_dropout = 0.05;
  std::size_t max_len = 512;

  std::size_t char_dim = 16;
  std::vector<std::size_t> char_widths{1, 2, 3, 4, 5, 6};
  std::vector<std::size_t> char_channels{8, 16, 24, 32, 32, 32};
  std::size_t max_chars = 20;

  /// Band starts after the head: head = [0, cutoffs[0]), band k =
  /// [cutoffs[k], cutoffs[k+1]) with the last band running to V.
  std::vector<std::size_t> cutoffs;
  std::vector<std::size_t> band_dims;

  std::uint64_t init_seed = 1;

  std::size_t comb_ffn_dim() const { return final_ffn_dim ? final_ffn_dim : ffn_dim; }
  std::size_t char_total_channels() const;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  KeyValues to_kv() const;
  /// Applies known keys from `kv` over the current values.
  void apply(const KeyValues& kv);
  static ModelConfig from_kv(const KeyValues& kv);
  static const std::vector<std::string>& keys();

  bool operator==(const ModelConfig&) const = default;
};

std::string to_string(QueryMode m);
std::string to_string(EncoderKind e);
std::string to_string(ClassifierKind c);
QueryMode parse_query_mode(const std::string& s);
EncoderKind parse_encoder(const std::string& s);
ClassifierKind parse_classifier(const std::string& s);

/// Parameters of encoder, towers and combination layer; the output
/// classifier is excluded.
std::size_t analytic_parameter_count(const ModelConfig& config);

/// Desk-scale banding in the proportions of a 60K / 160K / rest split of a
/// 1M vocabulary, with band dims d/4 and d/16.
void scale_bands(ModelConfig& config, double head_fraction = 0.06, double mid_fraction = 0.16);

}  // namespace cloze::model
