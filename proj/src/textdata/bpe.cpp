#include "cloze/textdata/bpe.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>

namespace cloze::textdata {

BpeCode::BpeCode(std::vector<Merge> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    rank_.emplace(merges_[i], i);
    produced_.emplace(merges_[i].first + merges_[i].second, i);
  }
}

namespace {

// Merges every non-overlapping occurrence of (left, right), scanning left to right.
bool merge_pair(std::vector<std::string>& symbols, const BpeCode::Merge& pair) {
  bool changed = false;
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == pair.first && symbols[i + 1] == pair.second) {
      out.push_back(pair.first + pair.second);
      ++i;
      changed = true;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
  return changed;
}

}  // namespace

std::vector<std::string> BpeCode::apply(const std::string& word) const {
  auto symbols = utf8_units(word);
  while (symbols.size() > 1) {
    std::size_t best = merges_.size();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const auto it = rank_.find({symbols[i], symbols[i + 1]});
      if (it != rank_.end() && it->second < best) best = it->second;
    }
    if (best == merges_.size()) break;
    merge_pair(symbols, merges_[best]);
  }
  return symbols;
}

const BpeCode::Merge* BpeCode::origin(const std::string& symbol) const {
  const auto it = produced_.find(symbol);
  return it == produced_.end() ? nullptr : &merges_[it->second];
}

void BpeCode::write(std::ostream& out) const {
  for (const auto& [l, r] : merges_) out << l << ' ' << r << '\n';
}

BpeCode BpeCode::read(std::istream& in) {
  std::vector<Merge> merges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() || line.find(' ', sp + 1) != std::string::npos) {
      throw FormatError("bpe code line " + std::to_string(lineno) + ": expected 'left right'");
    }
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return BpeCode(std::move(merges));
}

void BpeCode::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  write(out);
}

BpeCode BpeCode::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  return read(in);
}

namespace {

class PairStats {
 public:
  void change(const BpeCode::Merge& pair, std::int64_t delta) {
    auto& c = counts_[pair];
    if (c > 0) order_.erase({-c, pair});
    c += delta;
    if (c > 0) order_.insert({-c, pair});
  }
  bool empty() const { return order_.empty(); }
  std::int64_t best_count() const { return -order_.begin()->first; }
  const BpeCode::Merge& best() const { return order_.begin()->second; }

 private:
  std::map<BpeCode::Merge, std::int64_t> counts_;
  std::set<std::pair<std::int64_t, BpeCode::Merge>> order_;
};

}  // namespace

BpeCode learn_bpe(const std::map<std::string, std::uint64_t>& word_counts, std::size_t num_merges) {
  std::vector<std::vector<std::string>> words;
  std::vector<std::int64_t> freq;
  for (const auto& [w, c] : word_counts) {
    words.push_back(utf8_units(w));
    freq.push_back(static_cast<std::int64_t>(c));
  }
  PairStats stats;
  std::map<BpeCode::Merge, std::set<std::size_t>> where;
  auto account = [&](std::size_t w, int sign) {
    const auto& s = words[w];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      BpeCode::Merge p{s[i], s[i + 1]};
      stats.change(p, sign * freq[w]);
      if (sign > 0) where[p].insert(w);
    }
  };
  for (std::size_t w = 0; w < words.size(); ++w) account(w, +1);

  std::vector<BpeCode::Merge> merges;
  while (merges.size() < num_merges && !stats.empty() && stats.best_count() >= 2) {
    const BpeCode::Merge pair = stats.best();
    merges.push_back(pair);
    const auto touched = where[pair];
    for (std::size_t w : touched) {
      auto& s = words[w];
      bool present = false;
      for (std::size_t i = 0; i + 1 < s.size() && !present; ++i) present = s[i] == pair.first && s[i + 1] == pair.second;
      if (!present) continue;
      account(w, -1);
      merge_pair(s, pair);
      account(w, +1);
    }
    where.erase(pair);
  }
  return BpeCode(std::move(merges));
}

namespace {

void split_to_vocab(const BpeCode& code, const Vocab& vocab, const std::string& unit, bool last,
                    std::vector<std::string>& out) {
  std::string name = last ? unit : unit + kContinuation;
  if (vocab.contains(name)) {
    out.push_back(std::move(name));
    return;
  }
  if (const auto* merge = code.origin(unit)) {
    split_to_vocab(code, vocab, merge->first, false, out);
    split_to_vocab(code, vocab, merge->second, last, out);
    return;
  }
  out.push_back(kUnkToken);
}

std::vector<std::string> marked_units(const BpeCode& code, const std::string& word) {
  auto units = code.apply(word);
  for (std::size_t i = 0; i + 1 < units.size(); ++i) units[i] += kContinuation;
  return units;
}

}  // namespace

std::vector<std::string> segment_word(const BpeCode& code, const Vocab& vocab, const std::string& word) {
  std::vector<std::string> out;
  const auto units = code.apply(word);
  for (std::size_t i = 0; i < units.size(); ++i) split_to_vocab(code, vocab, units[i], i + 1 == units.size(), out);
  return out;
}

std::string join_pieces(std::span<const std::string> pieces) {
  static const std::string marker = kContinuation;
  std::string out;
  bool open = false;
  for (const auto& p : pieces) {
    if (!open && !out.empty()) out += ' ';
    if (p.size() >= marker.size() && p.compare(p.size() - marker.size(), marker.size(), marker) == 0) {
      out.append(p, 0, p.size() - marker.size());
      open = true;
    } else {
      out += p;
      open = false;
    }
  }
  return out;
}

BpeModel build_bpe(const std::vector<std::string>& lines, std::size_t num_merges, std::uint64_t min_freq) {
  std::map<std::string, std::uint64_t> word_counts;
  for (const auto& line : lines) {
    for (auto& w : split_whitespace(line)) ++word_counts[w];
  }
  if (word_counts.empty()) throw std::invalid_argument("build_bpe: empty corpus");
  BpeModel model{learn_bpe(word_counts, num_merges), Vocab()};

  std::map<std::string, std::uint64_t> unit_counts;
  for (const auto& [w, c] : word_counts) {
    for (auto& u : marked_units(model.code, w)) unit_counts[u] += c;
  }
  const Vocab kept = Vocab::build(unit_counts, min_freq);

  // Splitting dropped units only raises the counts of kept ones, so every
  // kept type still clears min_freq in the final segmentation.
  std::map<std::string, std::uint64_t> final_counts;
  for (const auto& [w, c] : word_counts) {
    for (auto& p : segment_word(model.code, kept, w)) {
      if (p != kUnkToken) final_counts[p] += c;
    }
  }
  model.vocab = Vocab::build(final_counts, min_freq);
  return model;
}

}  // namespace cloze::textdata
