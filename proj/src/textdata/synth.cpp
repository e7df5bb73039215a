#include "cloze/textdata/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cloze/numerics/rng.hpp"

namespace cloze::textdata {

using numerics::derive_seed;
using numerics::Rng;

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "neighbor" || name == "neighbor-determined") return SynthKind::neighbor_determined;
  if (name == "ngram") return SynthKind::ngram;
  if (name == "copy") return SynthKind::copy;
  if (name == "classes" || name == "class-chain") return SynthKind::class_chain;
  throw std::invalid_argument("unknown synthetic corpus kind '" + name +
                              "' (expected neighbor-determined, ngram, copy or class-chain)");
}

std::string to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::neighbor_determined: return "neighbor-determined";
    case SynthKind::ngram: return "ngram";
    case SynthKind::copy: return "copy";
    case SynthKind::class_chain: return "class-chain";
  }
  return "?";
}

std::string context_token(std::size_t i) { return "a" + std::to_string(i); }
std::string center_token(std::size_t i) { return "b" + std::to_string(i); }
std::string ngram_token(std::size_t i) { return "w" + std::to_string(i); }
std::string copy_token(std::size_t i) { return "c" + std::to_string(i); }
std::string class_token(std::size_t i) { return "t" + std::to_string(i); }

bool is_determined_token(const std::string& token) {
  return token.size() >= 2 && token[0] == 'b' &&
         std::all_of(token.begin() + 1, token.end(), [](char c) { return c >= '0' && c <= '9'; });
}

namespace {

std::vector<std::size_t> permutation(std::size_t k, Rng& rng) {
  std::vector<std::size_t> p(k);
  std::iota(p.begin(), p.end(), 0);
  rng.shuffle(p);
  return p;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace

NeighborTable make_neighbor_table(std::size_t k, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "neighbor-table"));
  return NeighborTable{k, permutation(k * k, rng)};
}

TrigramModel make_trigram_model(std::size_t k, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "trigram-model"));
  TrigramModel m{k, std::vector<double>(k * k * k)};
  for (std::size_t ctx = 0; ctx < k * k; ++ctx) {
    double total = 0;
    for (std::size_t w = 0; w < k; ++w) {
      double u = rng.uniform();
      while (u <= 0.0) u = rng.uniform();
      m.probs[ctx * k + w] = -std::log(u);
      total += m.probs[ctx * k + w];
    }
    for (std::size_t w = 0; w < k; ++w) m.probs[ctx * k + w] /= total;
  }
  return m;
}

ClassChain make_class_chain(std::size_t classes, std::size_t members, std::uint64_t seed) {
  if (classes < 3 || members == 0) throw std::invalid_argument("class chain needs >= 3 classes and >= 1 member");
  Rng rng(derive_seed(seed, "class-chain"));
  ClassChain c{classes, members, std::vector<std::size_t>(2 * classes)};
  for (std::size_t k = 0; k < classes; ++k) {
    c.successors[2 * k] = rng.index(classes);
    std::size_t second = rng.index(classes - 1);
    if (second >= c.successors[2 * k]) ++second;
    c.successors[2 * k + 1] = second;
  }
  return c;
}

std::vector<std::size_t> class_chain_line(const ClassChain& chain, std::size_t length, Rng& rng) {
  std::vector<std::size_t> out;
  std::size_t cls = rng.index(chain.classes);
  for (std::size_t i = 0; i < length; ++i) {
    if (i > 0) cls = chain.successors[2 * cls + rng.index(2)];
    out.push_back(cls * chain.members + rng.index(chain.members));
  }
  return out;
}

SynthCorpus synth_corpus(const SynthOptions& options) {
  if (options.size == 0) throw std::invalid_argument("synth_corpus: size must be positive");
  if (options.inner_vocab == 0) throw std::invalid_argument("synth_corpus: inner_vocab must be positive");
  const std::size_t k = options.inner_vocab;
  SynthCorpus corpus;
  Rng rng(derive_seed(options.seed, "synth-lines:" + to_string(options.kind)));
  std::vector<std::string> lines;
  lines.reserve(options.size);

  switch (options.kind) {
    case SynthKind::neighbor_determined: {
      corpus.table = make_neighbor_table(k, options.seed);
      const std::size_t pairs = std::max<std::size_t>(1, options.line_tokens / 2);
      for (std::size_t n = 0; n < options.size; ++n) {
        std::vector<std::size_t> ctx(pairs + 1);
        for (auto& c : ctx) c = rng.index(k);
        std::vector<std::string> toks;
        for (std::size_t i = 0; i < pairs; ++i) {
          toks.push_back(context_token(ctx[i]));
          toks.push_back(center_token(corpus.table.at(ctx[i], ctx[i + 1])));
        }
        toks.push_back(context_token(ctx[pairs]));
        lines.push_back(join(toks));
      }
      break;
    }
    case SynthKind::ngram: {
      corpus.trigram = make_trigram_model(k, options.seed);
      const std::size_t len = std::max<std::size_t>(3, options.line_tokens);
      for (std::size_t n = 0; n < options.size; ++n) {
        std::vector<std::size_t> ids{rng.index(k), rng.index(k)};
        while (ids.size() < len) {
          const std::size_t u = ids[ids.size() - 2], v = ids.back();
          const double x = rng.uniform();
          double acc = 0;
          std::size_t w = k - 1;
          for (std::size_t c = 0; c < k; ++c) {
            acc += corpus.trigram.prob(u, v, c);
            if (x < acc) {
              w = c;
              break;
            }
          }
          ids.push_back(w);
        }
        std::vector<std::string> toks;
        for (auto id : ids) toks.push_back(ngram_token(id));
        lines.push_back(join(toks));
      }
      break;
    }
    case SynthKind::copy: {
      const std::size_t half = std::max<std::size_t>(1, options.line_tokens / 2);
      for (std::size_t n = 0; n < options.size; ++n) {
        std::vector<std::string> toks;
        for (std::size_t i = 0; i < half; ++i) toks.push_back(copy_token(rng.index(k)));
        for (std::size_t i = 0; i < half; ++i) toks.push_back(toks[i]);
        lines.push_back(join(toks));
      }
      break;
    }
    case SynthKind::class_chain: {
      corpus.chain = make_class_chain(k, options.class_size, options.seed);
      for (std::size_t n = 0; n < options.size; ++n) {
        std::vector<std::string> toks;
        for (auto id : class_chain_line(corpus.chain, std::max<std::size_t>(1, options.line_tokens), rng)) {
          toks.push_back(class_token(id));
        }
        lines.push_back(join(toks));
      }
      break;
    }
  }

  const std::size_t per_doc = std::max<std::size_t>(1, options.lines_per_doc);
  for (std::size_t i = 0; i < lines.size(); i += per_doc) {
    corpus.docs.emplace_back(lines.begin() + static_cast<std::ptrdiff_t>(i),
                             lines.begin() + static_cast<std::ptrdiff_t>(std::min(lines.size(), i + per_doc)));
  }
  return corpus;
}

}  // namespace cloze::textdata
