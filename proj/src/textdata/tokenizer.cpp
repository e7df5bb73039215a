#include "cloze/textdata/tokenizer.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace cloze::textdata {

TokenMode parse_token_mode(const std::string& name) {
  if (name == "word") return TokenMode::word;
  if (name == "bpe") return TokenMode::bpe;
  if (name == "char") return TokenMode::character;
  throw std::invalid_argument("unknown token mode '" + name + "' (expected bpe, word or char)");
}

std::string to_string(TokenMode mode) {
  switch (mode) {
    case TokenMode::word: return "word";
    case TokenMode::bpe: return "bpe";
    case TokenMode::character: return "char";
  }
  return "?";
}

Tokenizer::Tokenizer(TokenMode mode, Vocab vocab, BpeCode code)
    : mode_(mode), vocab_(std::move(vocab)), code_(std::move(code)) {}

Tokenizer Tokenizer::build(const std::vector<std::string>& lines, const TokenizerOptions& options) {
  if (options.mode == TokenMode::word) {
    std::map<std::string, std::uint64_t> counts;
    for (const auto& line : lines) {
      for (auto& w : split_whitespace(line)) ++counts[w];
    }
    if (counts.empty()) throw std::invalid_argument("build vocabulary: empty corpus");
    return Tokenizer(TokenMode::word, Vocab::build(counts, options.min_freq, options.max_types));
  }
  const std::size_t merges = options.mode == TokenMode::bpe ? options.merges : 0;
  auto model = build_bpe(lines, merges, options.min_freq);
  return Tokenizer(options.mode, std::move(model.vocab), std::move(model.code));
}

std::vector<std::string> Tokenizer::pieces(const std::string& line) const {
  std::vector<std::string> out;
  for (const auto& w : split_whitespace(line)) {
    if (mode_ == TokenMode::word) {
      out.push_back(vocab_.contains(w) ? w : kUnkToken);
    } else {
      for (auto& p : segment_word(code_, vocab_, w)) out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<std::size_t> Tokenizer::encode(const std::string& line) const {
  std::vector<std::size_t> ids;
  for (const auto& p : pieces(line)) ids.push_back(vocab_.id(p));
  return ids;
}

std::string Tokenizer::decode(std::span<const std::size_t> ids) const {
  std::vector<std::string> strs;
  for (std::size_t id : ids) {
    if (id != kPadId) strs.push_back(vocab_.str(id));
  }
  if (mode_ != TokenMode::word) return join_pieces(strs);
  std::string out;
  for (const auto& s : strs) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

void Tokenizer::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream meta(fs::path(dir) / "tokenizer.txt");
    if (!meta) throw FormatError("cannot write tokenizer in " + dir);
    meta << "mode=" << to_string(mode_) << '\n';
  }
  vocab_.save((fs::path(dir) / "vocab.txt").string());
  if (mode_ != TokenMode::word) code_.save((fs::path(dir) / "bpe.codes").string());
}

Tokenizer Tokenizer::load(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream meta(fs::path(dir) / "tokenizer.txt");
  if (!meta) throw FormatError("no tokenizer.txt in " + dir);
  std::string line;
  TokenMode mode = TokenMode::word;
  bool found = false;
  while (std::getline(meta, line)) {
    if (line.rfind("mode=", 0) == 0) {
      mode = parse_token_mode(line.substr(5));
      found = true;
    }
  }
  if (!found) throw FormatError("tokenizer.txt in " + dir + " has no mode");
  auto vocab = Vocab::load((fs::path(dir) / "vocab.txt").string());
  BpeCode code;
  if (mode != TokenMode::word) code = BpeCode::load((fs::path(dir) / "bpe.codes").string());
  return Tokenizer(mode, std::move(vocab), std::move(code));
}

std::vector<std::size_t> encode_chars(const std::string& token, std::size_t max_len) {
  if (max_len < 3) throw std::invalid_argument("encode_chars: max_len must be at least 3");
  std::vector<std::size_t> out(max_len, kCharPad);
  out[0] = kCharBow;
  const std::size_t n = std::min(token.size(), max_len - 2);
  for (std::size_t i = 0; i < n; ++i) out[i + 1] = static_cast<unsigned char>(token[i]) + kCharOffset;
  out[n + 1] = kCharEow;
  return out;
}

}  // namespace cloze::textdata
