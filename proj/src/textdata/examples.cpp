#include "cloze/textdata/examples.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

namespace cloze::textdata {

namespace {

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

}  // namespace

std::vector<RawDoc> read_corpus(std::istream& in) {
  std::vector<RawDoc> docs;
  RawDoc current;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (blank(line)) {
      if (!current.empty()) docs.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(line);
    }
  }
  if (!current.empty()) docs.push_back(std::move(current));
  return docs;
}

std::vector<RawDoc> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus " + path);
  return read_corpus(in);
}

void write_corpus(std::ostream& out, const std::vector<RawDoc>& docs) {
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (d > 0) out << '\n';
    for (const auto& line : docs[d]) out << line << '\n';
  }
}

std::vector<std::string> corpus_lines(const std::vector<RawDoc>& docs) {
  std::vector<std::string> lines;
  for (const auto& d : docs) lines.insert(lines.end(), d.begin(), d.end());
  return lines;
}

ExampleMode parse_example_mode(const std::string& name) {
  if (name == "sentence") return ExampleMode::sentence;
  if (name == "paragraph") return ExampleMode::paragraph;
  if (name == "block") return ExampleMode::block;
  throw std::invalid_argument("unknown example mode '" + name + "' (expected sentence, paragraph or block)");
}

std::string to_string(ExampleMode mode) {
  switch (mode) {
    case ExampleMode::sentence: return "sentence";
    case ExampleMode::paragraph: return "paragraph";
    case ExampleMode::block: return "block";
  }
  return "?";
}

namespace {

Example wrap(std::vector<std::size_t>::const_iterator first, std::vector<std::size_t>::const_iterator last,
             ExampleMode origin) {
  Example ex;
  ex.origin = origin;
  ex.ids.reserve(static_cast<std::size_t>(last - first) + 2);
  ex.ids.push_back(kBoundaryId);
  ex.ids.insert(ex.ids.end(), first, last);
  ex.ids.push_back(kBoundaryId);
  return ex;
}

}  // namespace

std::vector<Example> make_examples(const std::vector<EncodedDoc>& docs, const ExampleOptions& options,
                                   std::vector<std::string>* warnings) {
  if (options.mode == ExampleMode::block && options.block_len < 2) {
    throw std::invalid_argument("block mode needs block_len >= 2");
  }
  auto warn = [&](std::string msg) {
    if (warnings) warnings->push_back(std::move(msg));
  };
  std::vector<Example> out;
  std::vector<std::size_t> stream;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    std::vector<std::size_t> paragraph;
    for (std::size_t l = 0; l < docs[d].size(); ++l) {
      const auto& line = docs[d][l];
      if (options.mode == ExampleMode::sentence) {
        if (line.empty()) {
          warn("document " + std::to_string(d) + " line " + std::to_string(l) + ": no tokens, skipped");
          continue;
        }
        out.push_back(wrap(line.begin(), line.end(), ExampleMode::sentence));
      } else {
        paragraph.insert(paragraph.end(), line.begin(), line.end());
      }
    }
    if (options.mode == ExampleMode::sentence) continue;
    if (paragraph.empty()) {
      warn("document " + std::to_string(d) + ": no tokens, skipped");
      continue;
    }
    if (options.mode == ExampleMode::paragraph) {
      out.push_back(wrap(paragraph.begin(), paragraph.end(), ExampleMode::paragraph));
    } else {
      stream.insert(stream.end(), paragraph.begin(), paragraph.end());
    }
  }
  if (options.mode == ExampleMode::block) {
    for (std::size_t start = 0; start < stream.size(); start += options.block_len) {
      const std::size_t end = std::min(stream.size(), start + options.block_len);
      out.push_back(wrap(stream.begin() + static_cast<std::ptrdiff_t>(start),
                         stream.begin() + static_cast<std::ptrdiff_t>(end), ExampleMode::block));
    }
  }
  return out;
}

std::vector<Example> make_examples(const std::vector<RawDoc>& docs, const Tokenizer& tokenizer,
                                   const ExampleOptions& options, std::vector<std::string>* warnings) {
  std::vector<EncodedDoc> encoded;
  encoded.reserve(docs.size());
  for (const auto& doc : docs) {
    EncodedDoc e;
    for (const auto& line : doc) e.push_back(tokenizer.encode(line));
    encoded.push_back(std::move(e));
  }
  return make_examples(encoded, options, warnings);
}

std::size_t Batch::tokens() const { return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}); }

Batch make_batch(const std::vector<const std::vector<std::size_t>*>& rows, const std::vector<std::size_t>& source) {
  if (rows.empty()) throw BatchError("make_batch: no examples");
  Batch b;
  b.rows = rows.size();
  for (const auto* r : rows) b.width = std::max(b.width, r->size());
  b.ids.assign(b.rows * b.width, kPadId);
  b.valid.assign(b.rows * b.width, 0);
  b.source = source;
  for (std::size_t i = 0; i < b.rows; ++i) {
    const auto& r = *rows[i];
    b.lengths.push_back(r.size());
    for (std::size_t t = 0; t < r.size(); ++t) {
      b.ids[i * b.width + t] = r[t];
      b.valid[i * b.width + t] = 1;
    }
  }
  return b;
}

std::vector<Batch> make_batches(const std::vector<Example>& examples, std::size_t max_tokens) {
  if (examples.empty()) throw BatchError("make_batches: no examples");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return examples[a].size() < examples[b].size(); });
  std::vector<Batch> out;
  std::vector<const std::vector<std::size_t>*> rows;
  std::vector<std::size_t> source;
  auto flush = [&] {
    if (rows.empty()) return;
    out.push_back(make_batch(rows, source));
    rows.clear();
    source.clear();
  };
  for (std::size_t idx : order) {
    const std::size_t len = examples[idx].size();
    if (len > max_tokens) {
      throw BatchError("example " + std::to_string(idx) + " has " + std::to_string(len) +
                       " tokens, more than the batch budget of " + std::to_string(max_tokens));
    }
    if ((rows.size() + 1) * len > max_tokens) flush();
    rows.push_back(&examples[idx].ids);
    source.push_back(idx);
  }
  flush();
  return out;
}

}  // namespace cloze::textdata
