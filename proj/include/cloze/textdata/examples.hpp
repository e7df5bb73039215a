#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "cloze/textdata/tokenizer.hpp"

namespace cloze::textdata {

/// One document: its non-blank lines in order.
using RawDoc = std::vector<std::string>;
/// One document with each line already encoded to content ids.
using EncodedDoc = std::vector<std::vector<std::size_t>>;

/// One example per line, blank line = document break.
std::vector<RawDoc> read_corpus(std::istream& in);
std::vector<RawDoc> load_corpus(const std::string& path);
void write_corpus(std::ostream& out, const std::vector<RawDoc>& docs);
std::vector<std::string> corpus_lines(const std::vector<RawDoc>& docs);

enum class ExampleMode { sentence, paragraph, block };
ExampleMode parse_example_mode(const std::string& name);
std::string to_string(ExampleMode mode);

struct ExampleOptions {
  ExampleMode mode = ExampleMode::sentence;
  /// Content tokens per block in block mode.
  std::size_t block_len = 512;
};

/// Marker-wrapped id sequence: <s> content... <s>.
struct Example {
  std::vector<std::size_t> ids;
  ExampleMode origin = ExampleMode::sentence;

  std::size_t size() const { return ids.size(); }
  std::size_t content_tokens() const { return ids.size() - 2; }
};

/// Sentence mode: one example per line. Paragraph mode: one per document.
/// Block mode: all content concatenated and cut into block_len-token
/// pieces; the final short piece is kept. Empty units are skipped and a
/// message is appended to `warnings` when given.
std::vector<Example> make_examples(const std::vector<EncodedDoc>& docs, const ExampleOptions& options,
                                   std::vector<std::string>* warnings = nullptr);
std::vector<Example> make_examples(const std::vector<RawDoc>& docs, const Tokenizer& tokenizer,
                                   const ExampleOptions& options, std::vector<std::string>* warnings = nullptr);

/// Padded B x T id matrix. Rows beyond lengths[b] hold <pad> and valid = 0.
struct Batch {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> lengths;
  std::vector<std::uint8_t> valid;
  /// Position of each row's example in the input sequence.
  std::vector<std::size_t> source;

  std::size_t at(std::size_t b, std::size_t t) const { return ids[b * width + t]; }
  bool is_valid(std::size_t b, std::size_t t) const { return valid[b * width + t] != 0; }
  std::size_t tokens() const;
};

class BatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Batch make_batch(const std::vector<const std::vector<std::size_t>*>& rows, const std::vector<std::size_t>& source);

/// Sorts by length (stable) and packs greedily while rows * longest fits
/// in max_tokens.
std::vector<Batch> make_batches(const std::vector<Example>& examples, std::size_t max_tokens);

}  // namespace cloze::textdata
