#pragma once

#include <cstdint>
#include <vector>

#include "cloze/model/config.hpp"
#include "cloze/numerics/rng.hpp"
#include "cloze/textdata/examples.hpp"
#include "cloze/textdata/vocab.hpp"

namespace cloze::testing {

inline model::ModelConfig tiny_config(std::size_t vocab = 20, std::uint64_t seed = 1) {
  model::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.ffn_dim = 24;
  c.final_heads = 2;
  c.max_len = 64;
  c.init_seed = seed;
  return c;
}

/// `<s> w* <s>` rows of the given lengths with random inner ids.
inline std::vector<std::vector<std::size_t>> random_rows(numerics::Rng& rng, const std::vector<std::size_t>& lengths,
                                                         std::size_t vocab) {
  std::vector<std::vector<std::size_t>> rows;
  for (std::size_t len : lengths) {
    std::vector<std::size_t> r{textdata::kBoundaryId};
    for (std::size_t i = 0; i + 2 < len; ++i) {
      r.push_back(textdata::kNumReserved + rng.index(vocab - textdata::kNumReserved));
    }
    if (len >= 2) r.push_back(textdata::kBoundaryId);
    r.resize(len);
    rows.push_back(r);
  }
  return rows;
}

inline textdata::Batch batch_of(const std::vector<std::vector<std::size_t>>& rows) {
  std::vector<const std::vector<std::size_t>*> ptrs;
  std::vector<std::size_t> source;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ptrs.push_back(&rows[i]);
    source.push_back(i);
  }
  return textdata::make_batch(ptrs, source);
}

inline textdata::Batch random_batch(numerics::Rng& rng, const std::vector<std::size_t>& lengths, std::size_t vocab) {
  return batch_of(random_rows(rng, lengths, vocab));
}

}  // namespace cloze::testing
