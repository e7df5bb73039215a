#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cloze/numerics/rng.hpp"
#include "cloze/textdata/examples.hpp"

namespace cloze::textdata {

enum class SynthKind { neighbor_determined, ngram, copy, class_chain };
SynthKind parse_synth_kind(const std::string& name);
std::string to_string(SynthKind kind);

struct SynthOptions {
  SynthKind kind = SynthKind::neighbor_determined;
  std::uint64_t seed = 1;
  /// Number of lines.
  std::size_t size = 1000;
  /// Inner vocabulary size K: K context types (and K*K center types for
  /// neighbor-determined); the number of classes for class-chain.
  std::size_t inner_vocab = 8;
  /// Tokens per class (class-chain only).
  std::size_t class_size = 16;
  /// Content tokens per line (rounded to odd for neighbor-determined, even for copy).
  std::size_t line_tokens = 9;
  std::size_t lines_per_doc = 8;
};

/// Random bijection from (left, right) context pairs onto K*K center types.
/// Both neighbours together fix the center; either one alone leaves K
/// equally likely candidates.
struct NeighborTable {
  std::size_t k = 0;
  std::vector<std::size_t> center;

  std::size_t at(std::size_t left, std::size_t right) const { return center[left * k + right]; }
};

/// p(w | u, v) over K types.
struct TrigramModel {
  std::size_t k = 0;
  std::vector<double> probs;

  double prob(std::size_t u, std::size_t v, std::size_t w) const { return probs[(u * k + v) * k + w]; }
};

/// Class-level Markov chain: each class has two successor classes and every
/// token is drawn uniformly from its class. Token class_token(c * M + m) is
/// member m of class c; same-class tokens share all their contexts.
struct ClassChain {
  std::size_t classes = 0;
  std::size_t members = 0;
  std::vector<std::size_t> successors;  // [classes x 2]

  std::size_t class_of(std::size_t token) const { return token / members; }
  bool follows(std::size_t from_class, std::size_t to_class) const {
    return successors[2 * from_class] == to_class || successors[2 * from_class + 1] == to_class;
  }
};

struct SynthCorpus {
  std::vector<RawDoc> docs;
  NeighborTable table;
  TrigramModel trigram;
  ClassChain chain;
};

SynthCorpus synth_corpus(const SynthOptions& options);

NeighborTable make_neighbor_table(std::size_t k, std::uint64_t seed);
TrigramModel make_trigram_model(std::size_t k, std::uint64_t seed);
ClassChain make_class_chain(std::size_t classes, std::size_t members, std::uint64_t seed);
/// One class-chain line as token indices; the first class is uniform.
std::vector<std::size_t> class_chain_line(const ClassChain& chain, std::size_t length, numerics::Rng& rng);

std::string context_token(std::size_t i);
std::string center_token(std::size_t i);
std::string ngram_token(std::size_t i);
std::string copy_token(std::size_t i);
std::string class_token(std::size_t i);

/// True for center tokens of the neighbor-determined language, the
/// positions fully predictable from both neighbours.
bool is_determined_token(const std::string& token);

}  // namespace cloze::textdata
