#include "cloze/textdata/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

namespace cloze::textdata {

Vocab::Vocab() {
  add(kPadToken, 0);
  add(kBoundaryToken, 0);
  add(kSepToken, 0);
  add(kUnkToken, 0);
}

void Vocab::add(std::string type, std::uint64_t count) {
  if (index_.contains(type)) throw FormatError("duplicate vocabulary type '" + type + "'");
  index_.emplace(type, types_.size());
  types_.push_back(std::move(type));
  counts_.push_back(count);
}

Vocab Vocab::build(const std::map<std::string, std::uint64_t>& counts, std::uint64_t min_freq,
                   std::size_t max_types) {
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  Vocab reserved;
  for (const auto& [type, count] : counts) {
    if (count >= min_freq && count > 0 && !reserved.contains(type)) kept.emplace_back(type, count);
  }
  // std::map iteration is already byte-ordered, so a stable sort on count
  // leaves ties lexicographic.
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (max_types > 0 && kept.size() > max_types) kept.resize(max_types);
  Vocab v;
  for (auto& [type, count] : kept) v.add(std::move(type), count);
  return v;
}

std::size_t Vocab::id(const std::string& type) const {
  const auto it = index_.find(type);
  return it == index_.end() ? kUnkId : it->second;
}

void Vocab::write(std::ostream& out) const {
  for (std::size_t i = 0; i < types_.size(); ++i) out << types_[i] << '\t' << counts_[i] << '\n';
}

Vocab Vocab::read(std::istream& in) {
  Vocab v;
  std::string line;
  std::size_t lineno = 0, seen = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ++seen;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw FormatError("vocab line " + std::to_string(lineno) + ": missing tab");
    std::string type = line.substr(0, tab);
    std::uint64_t count = 0;
    try {
      count = std::stoull(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw FormatError("vocab line " + std::to_string(lineno) + ": bad count");
    }
    if (seen <= kNumReserved) {
      if (type != v.types_[seen - 1]) {
        throw FormatError("vocab line " + std::to_string(lineno) + ": expected reserved type " + v.types_[seen - 1]);
      }
      v.counts_[seen - 1] = count;
      continue;
    }
    v.add(std::move(type), count);
  }
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  write(out);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  return read(in);
}

std::vector<std::string> split_whitespace(const std::string& line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < line.size()) {
    while (i < line.size() && space(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !space(line[i])) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::vector<std::string> utf8_units(const std::string& word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (lead >= 0xF0 && lead < 0xF8) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    if (lead >= 0xF8 || i + len > word.size()) len = 1;
    for (std::size_t j = 1; j < len; ++j) {
      if ((static_cast<unsigned char>(word[i + j]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.push_back(word.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace cloze::textdata
