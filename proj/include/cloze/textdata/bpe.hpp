#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cloze/textdata/vocab.hpp"

namespace cloze::textdata {

/// Suffix marking a subword that continues into the next piece of the same word.
inline constexpr const char* kContinuation = "@@";

/// Ordered merge list. Merging operates within words on code points.
class BpeCode {
 public:
  using Merge = std::pair<std::string, std::string>;

  BpeCode() = default;
  explicit BpeCode(std::vector<Merge> merges);

  const std::vector<Merge>& merges() const { return merges_; }
  std::size_t size() const { return merges_.size(); }

  /// Applies merges by rank until none applies; returns unmarked units.
  std::vector<std::string> apply(const std::string& word) const;
  /// The merge that produced `symbol`, if any.
  const Merge* origin(const std::string& symbol) const;

  void write(std::ostream& out) const;
  static BpeCode read(std::istream& in);
  void save(const std::string& path) const;
  static BpeCode load(const std::string& path);

  bool operator==(const BpeCode& other) const { return merges_ == other.merges_; }

 private:
  std::vector<Merge> merges_;
  std::map<Merge, std::size_t> rank_;
  std::map<std::string, std::size_t> produced_;
};

/// Learns up to num_merges merges from word counts. Each round merges the
/// most frequent adjacent pair; ties go to the smallest (left, right).
/// Stops early when no pair occurs at least twice.
BpeCode learn_bpe(const std::map<std::string, std::uint64_t>& word_counts, std::size_t num_merges);

/// Pieces of one word with continuation markers, restricted to `vocab`:
/// units missing from the vocab are split back through their merge; a
/// missing single code point becomes <unk>.
std::vector<std::string> segment_word(const BpeCode& code, const Vocab& vocab, const std::string& word);

/// Inverse of segmentation on a piece stream: joins marked pieces.
std::string join_pieces(std::span<const std::string> pieces);

struct BpeModel {
  BpeCode code;
  Vocab vocab;
};

/// Learns merges on the whitespace-pretokenized lines, then keeps subword
/// types occurring at least min_freq times in the segmented corpus.
BpeModel build_bpe(const std::vector<std::string>& lines, std::size_t num_merges, std::uint64_t min_freq);

}  // namespace cloze::textdata
