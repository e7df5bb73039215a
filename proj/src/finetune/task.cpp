#include "cloze/finetune/task.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cloze/numerics/rng.hpp"
#include "cloze/textdata/vocab.hpp"

namespace cloze::finetune {

namespace fs = std::filesystem;
using numerics::Rng;

TaskKind parse_task_kind(const std::string& name) {
  if (name == "single" || name == "single_classification") return TaskKind::single_classification;
  if (name == "pair" || name == "pair_classification") return TaskKind::pair_classification;
  if (name == "regression") return TaskKind::regression;
  if (name == "tagging" || name == "token_tagging") return TaskKind::token_tagging;
  throw ConfigError("unknown task kind '" + name + "' (expected single, pair, regression or tagging)");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::single_classification: return "single";
    case TaskKind::pair_classification: return "pair";
    case TaskKind::regression: return "regression";
    case TaskKind::token_tagging: return "tagging";
  }
  return "?";
}

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

}  // namespace

std::size_t TaskSpec::label_index(const std::string& label) const {
  if (!labels.empty()) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) return i;
    }
    throw textdata::FormatError("unknown label '" + label + "' for task " + name);
  }
  std::size_t v = 0;
  const auto [p, ec] = std::from_chars(label.data(), label.data() + label.size(), v);
  if (ec != std::errc() || p != label.data() + label.size()) {
    throw textdata::FormatError("label '" + label + "' is not a class index");
  }
  if (v >= num_classes) {
    throw textdata::FormatError("label " + label + " out of range for " + std::to_string(num_classes) + " classes");
  }
  return v;
}

const std::string& TaskSpec::label_name(std::size_t index) const {
  static thread_local std::string buf;
  if (!labels.empty()) return labels.at(index);
  buf = std::to_string(index);
  return buf;
}

void TaskSpec::validate() const {
  if (kind == TaskKind::regression) {
    if (num_classes != 1) throw ConfigError("regression tasks use exactly one output (classes=1)");
  } else if (num_classes < 2) {
    throw ConfigError("classification and tagging tasks need at least two classes");
  }
  if (!labels.empty() && labels.size() != num_classes) {
    throw ConfigError("task " + name + " lists " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(num_classes) + " classes");
  }
  if (kind == TaskKind::token_tagging && labels.empty()) throw ConfigError("tagging tasks must list their tags");
  if (metric == MetricKind::spearman && kind != TaskKind::regression) {
    throw ConfigError("spearman is only defined for regression tasks");
  }
  if (kind == TaskKind::regression && metric != MetricKind::spearman) {
    throw ConfigError("regression tasks are scored with spearman");
  }
  if ((metric == MetricKind::f1 || metric == MetricKind::mcc) && num_classes != 2) {
    throw ConfigError(to_string(metric) + " needs a binary task");
  }
  if (metric == MetricKind::span_f1 && kind != TaskKind::token_tagging) {
    throw ConfigError("span_f1 is only defined for tagging tasks");
  }
}

KeyValues TaskSpec::to_kv() const {
  KeyValues kv;
  kv.set("name", name);
  kv.set("kind", to_string(kind));
  kv.set("classes", std::to_string(num_classes));
  kv.set("metric", to_string(metric));
  if (!labels.empty()) kv.set("labels", join(labels, ","));
  if (!train.empty()) kv.set("train", train.string());
  if (!dev.empty()) kv.set("dev", dev.string());
  if (!test.empty()) kv.set("test", test.string());
  return kv;
}

TaskSpec TaskSpec::from_kv(const KeyValues& kv, const fs::path& base) {
  TaskSpec s;
  s.name = kv.get("name", s.name);
  if (kv.has("kind")) s.kind = parse_task_kind(kv.get("kind"));
  if (s.kind == TaskKind::regression) s.num_classes = 1;
  s.num_classes = kv.get_size("classes", s.num_classes);
  if (kv.has("metric")) {
    try {
      s.metric = parse_metric(kv.get("metric"));
    } catch (const MetricError& e) {
      throw ConfigError(e.what());
    }
  } else if (s.kind == TaskKind::regression) {
    s.metric = MetricKind::spearman;
  }
  if (kv.has("labels")) s.labels = split_on(kv.get("labels"), ',');
  auto path = [&](const char* key) -> fs::path {
    if (!kv.has(key)) return {};
    const fs::path p = kv.get(key);
    return p.is_absolute() || base.empty() ? p : base / p;
  };
  s.train = path("train");
  s.dev = path("dev");
  s.test = path("test");
  const auto unknown = kv.unknown_keys({"name", "kind", "classes", "metric", "labels", "train", "dev", "test"});
  if (!unknown.empty()) throw ConfigError("unknown task key '" + unknown.front() + "'");
  s.validate();
  return s;
}

TaskSpec TaskSpec::load(const fs::path& path) { return from_kv(KeyValues::load(path), path.parent_path()); }

void TaskSpec::save(const fs::path& path) const { to_kv().save(path); }

std::vector<RawRecord> read_records(std::istream& in, TaskKind kind, const std::string& origin) {
  std::vector<RawRecord> out;
  std::string line;
  std::size_t lineno = 0;
  if (kind == TaskKind::token_tagging) {
    RawRecord cur;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) {
        if (!cur.words.empty()) out.push_back(std::move(cur));
        cur = {};
        continue;
      }
      const auto tab = line.find('\t');
      if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
        throw textdata::FormatError(origin + ":" + std::to_string(lineno) + ": expected token<TAB>tag");
      }
      cur.words.push_back(line.substr(0, tab));
      cur.tags.push_back(line.substr(tab + 1));
    }
    if (!cur.words.empty()) out.push_back(std::move(cur));
    return out;
  }
  const std::size_t fields = kind == TaskKind::pair_classification ? 3 : 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto parts = split_on(line, '\t');
    if (parts.size() != fields) {
      throw textdata::FormatError(origin + ":" + std::to_string(lineno) + ": expected " + std::to_string(fields) +
                                  " tab-separated fields, found " + std::to_string(parts.size()));
    }
    RawRecord r;
    r.label = parts[0];
    r.a = parts[1];
    if (fields == 3) r.b = parts[2];
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RawRecord> load_records(const fs::path& path, TaskKind kind) {
  std::ifstream in(path);
  if (!in) throw textdata::FormatError("cannot read task data " + path.string());
  return read_records(in, kind, path.string());
}

void write_records(std::ostream& out, const std::vector<RawRecord>& records, TaskKind kind) {
  for (const auto& r : records) {
    if (kind == TaskKind::token_tagging) {
      for (std::size_t i = 0; i < r.words.size(); ++i) out << r.words[i] << '\t' << r.tags[i] << '\n';
      out << '\n';
    } else if (kind == TaskKind::pair_classification) {
      out << r.label << '\t' << r.a << '\t' << r.b << '\n';
    } else {
      out << r.label << '\t' << r.a << '\n';
    }
  }
}

void save_records(const fs::path& path, const std::vector<RawRecord>& records, TaskKind kind) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw textdata::FormatError("cannot write " + path.string());
  write_records(out, records, kind);
}

std::vector<TaskExample> encode_records(const std::vector<RawRecord>& records, const TaskSpec& spec,
                                        const textdata::Tokenizer& tokenizer) {
  std::vector<TaskExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    TaskExample e;
    if (spec.is_tagging()) {
      for (std::size_t i = 0; i < r.words.size(); ++i) {
        const auto ids = tokenizer.encode(r.words[i]);
        const std::size_t tag = spec.label_index(r.tags[i]);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          e.a.push_back(ids[k]);
          e.tags.push_back(k == 0 ? tag : kIgnoreTag);
        }
      }
    } else {
      e.a = tokenizer.encode(r.a);
      if (spec.is_pair()) e.b = tokenizer.encode(r.b);
      if (spec.kind == TaskKind::regression) {
        try {
          std::size_t used = 0;
          e.target = std::stod(r.label, &used);
          if (used != r.label.size()) throw std::invalid_argument(r.label);
        } catch (const std::exception&) {
          throw textdata::FormatError("regression target '" + r.label + "' is not a number");
        }
      } else {
        e.label = spec.label_index(r.label);
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

SyntheticTask identity_tagging_task(std::size_t types, std::size_t classes, std::size_t train_sentences,
                                    std::size_t dev_sentences, std::size_t length, std::uint64_t seed) {
  if (types < classes || classes < 2) throw std::invalid_argument("identity tagging needs types >= classes >= 2");
  SyntheticTask t;
  t.spec.name = "identity-tagging";
  t.spec.kind = TaskKind::token_tagging;
  t.spec.num_classes = classes;
  for (std::size_t c = 0; c < classes; ++c) t.spec.labels.push_back("T" + std::to_string(c));
  Rng rng(numerics::derive_seed(seed, "identity-tagging"));
  auto make = [&](std::size_t n) {
    std::vector<RawRecord> out(n);
    for (auto& r : out) {
      for (std::size_t i = 0; i < length; ++i) {
        const std::size_t w = rng.index(types);
        r.words.push_back(textdata::ngram_token(w));
        r.tags.push_back(t.spec.labels[w % classes]);
      }
    }
    return out;
  };
  t.train = make(train_sentences);
  t.dev = make(dev_sentences);
  return t;
}

SyntheticTask continuation_task(const textdata::SynthOptions& language, std::size_t train_pairs,
                                std::size_t dev_pairs, std::size_t segment_tokens, std::uint64_t seed) {
  if (language.kind != textdata::SynthKind::class_chain) {
    throw std::invalid_argument("continuation task needs a class-chain language");
  }
  if (segment_tokens == 0) throw std::invalid_argument("continuation task needs non-empty segments");
  const auto chain = textdata::make_class_chain(language.inner_vocab, language.class_size, language.seed);
  SyntheticTask t;
  t.spec.name = "continuation";
  t.spec.kind = TaskKind::pair_classification;
  t.spec.num_classes = 2;
  Rng rng(numerics::derive_seed(seed, "continuation-task"));
  auto render = [](const std::vector<std::size_t>& ids) {
    std::string s;
    for (auto id : ids) s += (s.empty() ? "" : " ") + textdata::class_token(id);
    return s;
  };
  auto make = [&](std::size_t n) {
    std::vector<RawRecord> out(n);
    for (std::size_t e = 0; e < n; ++e) {
      const bool positive = e % 2 == 0;
      std::vector<std::size_t> a, b;
      do {
        a = textdata::class_chain_line(chain, segment_tokens, rng);
        b = textdata::class_chain_line(chain, segment_tokens, rng);
      } while (chain.follows(chain.class_of(a.back()), chain.class_of(b.front())) != positive);
      out[e].label = positive ? "1" : "0";
      out[e].a = render(a);
      out[e].b = render(b);
    }
    rng.shuffle(out);
    return out;
  };
  t.train = make(train_pairs);
  t.dev = make(dev_pairs);
  return t;
}

SyntheticTask center_task(const textdata::SynthOptions& language, std::size_t train_sentences,
                          std::size_t dev_sentences, std::uint64_t seed) {
  if (language.kind != textdata::SynthKind::neighbor_determined) {
    throw std::invalid_argument("center task needs a neighbor-determined language");
  }
  const std::size_t k = language.inner_vocab;
  if (k < 2) throw std::invalid_argument("center task needs at least two context types");
  const auto table = textdata::make_neighbor_table(k, language.seed);
  SyntheticTask t;
  t.spec.name = "center";
  t.spec.kind = TaskKind::single_classification;
  t.spec.num_classes = 2;
  Rng rng(numerics::derive_seed(seed, "center-task"));
  auto make = [&](std::size_t n) {
    std::vector<RawRecord> out(n);
    for (std::size_t e = 0; e < n; ++e) {
      const std::size_t l = rng.index(k), r = rng.index(k);
      std::size_t c = table.at(l, r);
      if (e % 2 == 1) c = (c + 1 + rng.index(k * k - 1)) % (k * k);
      out[e].label = e % 2 == 0 ? "1" : "0";
      out[e].a = textdata::context_token(l) + " " + textdata::center_token(c) + " " + textdata::context_token(r);
    }
    rng.shuffle(out);
    return out;
  };
  t.train = make(train_sentences);
  t.dev = make(dev_sentences);
  return t;
}

std::optional<SyntheticTask> downstream_task(const textdata::SynthOptions& language, std::size_t train,
                                             std::size_t dev, std::uint64_t seed) {
  switch (language.kind) {
    case textdata::SynthKind::class_chain:
      return continuation_task(language, train, dev, 3, seed);
    case textdata::SynthKind::neighbor_determined:
      return center_task(language, train, dev, seed);
    default:
      return std::nullopt;
  }
}

}  // namespace cloze::finetune
