#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cloze/textdata/bpe.hpp"
#include "cloze/textdata/vocab.hpp"

namespace cloze::textdata {

enum class TokenMode { word, bpe, character };

TokenMode parse_token_mode(const std::string& name);
std::string to_string(TokenMode mode);

struct TokenizerOptions {
  TokenMode mode = TokenMode::bpe;
  std::size_t merges = 30000;
  std::uint64_t min_freq = 3;
  std::size_t max_types = 0;
};

/// Line <-> id codec. Character mode is BPE with zero merges.
class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(TokenMode mode, Vocab vocab, BpeCode code = {});

  static Tokenizer build(const std::vector<std::string>& lines, const TokenizerOptions& options);

  TokenMode mode() const { return mode_; }
  const Vocab& vocab() const { return vocab_; }
  const BpeCode& code() const { return code_; }

  std::vector<std::string> pieces(const std::string& line) const;
  std::vector<std::size_t> encode(const std::string& line) const;
  std::string decode(std::span<const std::size_t> ids) const;

  /// Writes tokenizer.txt, vocab.txt and (subword modes) bpe.codes into `dir`.
  void save(const std::string& dir) const;
  static Tokenizer load(const std::string& dir);

 private:
  TokenMode mode_ = TokenMode::word;
  Vocab vocab_;
  BpeCode code_;
};

/// Byte-level character ids for the character CNN input encoder.
inline constexpr std::size_t kCharPad = 0;
inline constexpr std::size_t kCharBow = 1;
inline constexpr std::size_t kCharEow = 2;
inline constexpr std::size_t kCharOffset = 4;
inline constexpr std::size_t kCharVocabSize = 256 + kCharOffset;

/// [BOW, bytes..., EOW, pad...] of length max_len (>= 3). Overlong tokens
/// keep their leading bytes and end with EOW.
std::vector<std::size_t> encode_chars(const std::string& token, std::size_t max_len);

}  // namespace cloze::textdata
