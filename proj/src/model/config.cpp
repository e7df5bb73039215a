#include "cloze/model/config.hpp"

#include "cloze/textdata/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cloze::model {

std::string to_string(QueryMode m) { return m == QueryMode::sum ? "sum" : "concat"; }
std::string to_string(EncoderKind e) { return e == EncoderKind::embedding ? "embedding" : "char_cnn"; }
std::string to_string(ClassifierKind c) {
  switch (c) {
    case ClassifierKind::flat_tied: return "flat_tied";
    case ClassifierKind::flat: return "flat";
    case ClassifierKind::adaptive: return "adaptive";
  }
  return "?";
}

QueryMode parse_query_mode(const std::string& s) {
  if (s == "sum") return QueryMode::sum;
  if (s == "concat") return QueryMode::concat;
  throw ConfigError("query_mode must be sum or concat, got '" + s + "'");
}

EncoderKind parse_encoder(const std::string& s) {
  if (s == "embedding") return EncoderKind::embedding;
  if (s == "char_cnn") return EncoderKind::char_cnn;
  throw ConfigError("encoder must be embedding or char_cnn, got '" + s + "'");
}

ClassifierKind parse_classifier(const std::string& s) {
  if (s == "flat_tied") return ClassifierKind::flat_tied;
  if (s == "flat") return ClassifierKind::flat;
  if (s == "adaptive") return ClassifierKind::adaptive;
  throw ConfigError("classifier must be flat_tied, flat or adaptive, got '" + s + "'");
}

std::size_t ModelConfig::char_total_channels() const {
  return std::accumulate(char_channels.begin(), char_channels.end(), std::size_t{0});
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (d_model == 0 || d_model % 2 != 0) fail("d_model must be positive and even");
  if (n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (final_heads == 0 || d_model % final_heads != 0) fail("d_model must be divisible by final_heads");
  if (n_blocks == 0) fail("n_blocks must be positive");
  if (ffn_dim == 0) fail("ffn_dim must be positive");
  for (double p : {dropout, attention_dropout, relu_dropout}) {
    if (!(p >= 0.0 && p < 1.0)) fail("dropout rates must lie in [0, 1)");
  }
  if (max_len < 1) fail("max_len must be positive");
  if (encoder == EncoderKind::char_cnn) {
    if (classifier == ClassifierKind::flat_tied) fail("flat_tied classifier needs the embedding encoder");
    if (char_widths.empty() || char_widths.size() != char_channels.size()) {
      fail("char_widths and char_channels must be non-empty and of equal length");
    }
    if (char_dim == 0 || max_chars < 3) fail("char_dim must be positive and max_chars at least 3");
    for (std::size_t i = 0; i < char_widths.size(); ++i) {
      if (char_widths[i] == 0 || char_widths[i] > max_chars || char_channels[i] == 0) {
        fail("each char filter needs width in [1, max_chars] and positive channels");
      }
    }
  }
  if (classifier == ClassifierKind::adaptive) {
    if (cutoffs.size() != band_dims.size()) fail("cutoffs and band_dims must have equal length");
    std::size_t prev = 0;
    for (std::size_t i = 0; i < cutoffs.size(); ++i) {
      if (cutoffs[i] <= prev || cutoffs[i] >= vocab_size) fail("cutoffs must be increasing within (0, vocab_size)");
      if (band_dims[i] == 0) fail("band_dims must be positive");
      prev = cutoffs[i];
    }
  }
}

const std::vector<std::string>& ModelConfig::keys() {
  static const std::vector<std::string> k{
      "vocab_size", "d_model",     "n_blocks",  "n_heads",   "ffn_dim",     "final_heads",   "final_ffn_dim",
      "query_mode", "encoder",     "classifier", "dropout",  "attention_dropout", "relu_dropout", "max_len",
      "char_dim",   "char_widths", "char_channels", "max_chars", "cutoffs", "band_dims",     "init_seed"};
  return k;
}

KeyValues ModelConfig::to_kv() const {
  KeyValues kv;
  kv.set("vocab_size", std::to_string(vocab_size));
  kv.set("d_model", std::to_string(d_model));
  kv.set("n_blocks", std::to_string(n_blocks));
  kv.set("n_heads", std::to_string(n_heads));
  kv.set("ffn_dim", std::to_string(ffn_dim));
  kv.set("final_heads", std::to_string(final_heads));
  kv.set("final_ffn_dim", std::to_string(final_ffn_dim));
  kv.set("query_mode", to_string(query_mode));
  kv.set("encoder", to_string(encoder));
  kv.set("classifier", to_string(classifier));
  kv.set("dropout", format_double(dropout));
  kv.set("attention_dropout", format_double(attention_dropout));
  kv.set("relu_dropout", format_double(relu_dropout));
  kv.set("max_len", std::to_string(max_len));
  kv.set("char_dim", std::to_string(char_dim));
  kv.set("char_widths", join_sizes(char_widths));
  kv.set("char_channels", join_sizes(char_channels));
  kv.set("max_chars", std::to_string(max_chars));
  kv.set("cutoffs", join_sizes(cutoffs));
  kv.set("band_dims", join_sizes(band_dims));
  kv.set("init_seed", std::to_string(init_seed));
  return kv;
}

void ModelConfig::apply(const KeyValues& kv) {
  vocab_size = kv.get_size("vocab_size", vocab_size);
  d_model = kv.get_size("d_model", d_model);
  n_blocks = kv.get_size("n_blocks", n_blocks);
  n_heads = kv.get_size("n_heads", n_heads);
  ffn_dim = kv.get_size("ffn_dim", ffn_dim);
  final_heads = kv.get_size("final_heads", final_heads);
  final_ffn_dim = kv.get_size("final_ffn_dim", final_ffn_dim);
  if (kv.has("query_mode")) query_mode = parse_query_mode(kv.get("query_mode"));
  if (kv.has("encoder")) encoder = parse_encoder(kv.get("encoder"));
  if (kv.has("classifier")) classifier = parse_classifier(kv.get("classifier"));
  dropout = kv.get_double("dropout", dropout);
  attention_dropout = kv.get_double("attention_dropout", attention_dropout);
  relu_dropout = kv.get_double("relu_dropout", relu_dropout);
  max_len = kv.get_size("max_len", max_len);
  char_dim = kv.get_size("char_dim", char_dim);
  char_widths = kv.get_sizes("char_widths", char_widths);
  char_channels = kv.get_sizes("char_channels", char_channels);
  max_chars = kv.get_size("max_chars", max_chars);
  cutoffs = kv.get_sizes("cutoffs", cutoffs);
  band_dims = kv.get_sizes("band_dims", band_dims);
  init_seed = kv.get_u64("init_seed", init_seed);
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  ModelConfig c;
  c.apply(kv);
  return c;
}

std::size_t analytic_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t ln = 2 * d;
  const std::size_t attn = 4 * (d * d + d);
  auto ffn = [d](std::size_t f) { return d * f + f + f * d + d; };

  std::size_t encoder = 0;
  if (c.encoder == EncoderKind::embedding) {
    encoder = c.vocab_size * d;
  } else {
    const std::size_t total = c.char_total_channels();
    encoder = textdata::kCharVocabSize * c.char_dim;
    for (std::size_t i = 0; i < c.char_widths.size(); ++i) {
      encoder += c.char_widths[i] * c.char_dim * c.char_channels[i] + c.char_channels[i];
    }
    encoder += 2 * (total * total + total);  // highway transform and gate
    encoder += total * d + d;                // projection
  }
  const std::size_t block = ln + attn + ln + ffn(c.ffn_dim);
  const std::size_t towers = 2 * (c.n_blocks * block + ln);
  std::size_t comb = ln + attn + ln + ffn(c.comb_ffn_dim()) + ln;
  if (c.query_mode == QueryMode::concat) comb += 2 * d * d;
  return encoder + towers + comb;
}

void scale_bands(ModelConfig& config, double head_fraction, double mid_fraction) {
  const std::size_t v = config.vocab_size;
  const std::size_t head = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(v * head_fraction)));
  const std::size_t mid = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(v * mid_fraction)));
  config.cutoffs.clear();
  config.band_dims.clear();
  if (head < v) {
    config.cutoffs.push_back(head);
    config.band_dims.push_back(std::max<std::size_t>(2, config.d_model / 4));
  }
  if (head + mid < v) {
    config.cutoffs.push_back(head + mid);
    config.band_dims.push_back(std::max<std::size_t>(2, config.d_model / 16));
  }
}

}  // namespace cloze::model
