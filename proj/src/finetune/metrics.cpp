#include "cloze/finetune/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

namespace cloze::finetune {

MetricKind parse_metric(const std::string& name) {
  if (name == "accuracy" || name == "acc") return MetricKind::accuracy;
  if (name == "f1") return MetricKind::f1;
  if (name == "mcc") return MetricKind::mcc;
  if (name == "spearman" || name == "scc") return MetricKind::spearman;
  if (name == "span_f1" || name == "span-f1") return MetricKind::span_f1;
  throw MetricError("unknown metric '" + name + "'");
}

std::string to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::f1: return "f1";
    case MetricKind::mcc: return "mcc";
    case MetricKind::spearman: return "spearman";
    case MetricKind::span_f1: return "span_f1";
  }
  return "?";
}

namespace {

template <typename A, typename B>
void check_lengths(const A& preds, const B& golds, const char* what) {
  if (preds.size() != golds.size()) {
    throw MetricError(std::string(what) + ": " + std::to_string(preds.size()) + " predictions for " +
                      std::to_string(golds.size()) + " labels");
  }
  if (golds.size() < 2) throw MetricError(std::string(what) + ": need at least two items");
}

void check_binary(const std::vector<std::size_t>& v, const char* what) {
  for (auto x : v) {
    if (x > 1) throw MetricError(std::string(what) + ": label " + std::to_string(x) + " is not binary");
  }
}

void warn(std::vector<std::string>* warnings, const std::string& msg) {
  if (warnings) warnings->push_back(msg);
}

struct Confusion {
  double tp = 0, fp = 0, fn = 0, tn = 0;
};

Confusion confusion(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& golds) {
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == 1 && golds[i] == 1) ++c.tp;
    else if (preds[i] == 1) ++c.fp;
    else if (golds[i] == 1) ++c.fn;
    else ++c.tn;
  }
  return c;
}

}  // namespace

double accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& golds) {
  check_lengths(preds, golds, "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == golds[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double binary_f1(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& golds,
                 std::vector<std::string>* warnings) {
  check_lengths(preds, golds, "f1");
  check_binary(preds, "f1");
  check_binary(golds, "f1");
  const auto c = confusion(preds, golds);
  const double denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) {
    warn(warnings, "f1: no positive predictions or labels; scored 0");
    return 0.0;
  }
  return 2 * c.tp / denom;
}

double mcc(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& golds,
           std::vector<std::string>* warnings) {
  check_lengths(preds, golds, "mcc");
  check_binary(preds, "mcc");
  check_binary(golds, "mcc");
  const auto c = confusion(preds, golds);
  const double denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn);
  if (denom == 0) {
    warn(warnings, "mcc: a single class in predictions or labels; scored 0");
    return 0.0;
  }
  return (c.tp * c.tn - c.fp * c.fn) / std::sqrt(denom);
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& preds, const std::vector<double>& golds,
                std::vector<std::string>* warnings) {
  check_lengths(preds, golds, "spearman");
  const auto a = average_ranks(preds);
  const auto b = average_ranks(golds);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) {
    warn(warnings, "spearman: constant predictions or labels; scored 0");
    return 0.0;
  }
  return sab / std::sqrt(saa * sbb);
}

bool Span::operator<(const Span& o) const {
  return std::tie(begin, end, type) < std::tie(o.begin, o.end, o.type);
}

std::vector<Span> bio_spans(const std::vector<std::string>& tags) {
  std::vector<Span> spans;
  bool open = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const auto& t = tags[i];
    const bool begin = t.rfind("B-", 0) == 0;
    const bool inside = t.rfind("I-", 0) == 0;
    if (!begin && !inside) {
      open = false;
      continue;
    }
    const std::string type = t.substr(2);
    if (inside && open && spans.back().type == type) {
      spans.back().end = i + 1;
      continue;
    }
    spans.push_back({type, i, i + 1});
    open = true;
  }
  return spans;
}

double span_f1(const std::vector<std::vector<std::string>>& preds, const std::vector<std::vector<std::string>>& golds,
               std::vector<std::string>* warnings) {
  if (preds.size() != golds.size()) throw MetricError("span_f1: sentence counts differ");
  double tp = 0, np = 0, ng = 0;
  std::size_t tokens = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    if (preds[s].size() != golds[s].size()) {
      throw MetricError("span_f1: sentence " + std::to_string(s) + " has mismatched tag counts");
    }
    tokens += golds[s].size();
    const auto p = bio_spans(preds[s]);
    const auto g = bio_spans(golds[s]);
    const std::set<Span> gs(g.begin(), g.end());
    for (const auto& sp : p) tp += gs.contains(sp);
    np += static_cast<double>(p.size());
    ng += static_cast<double>(g.size());
  }
  if (tokens < 2) throw MetricError("span_f1: need at least two items");
  if (np + ng == 0) {
    warn(warnings, "span_f1: no spans predicted or annotated; scored 0");
    return 0.0;
  }
  return 2 * tp / (np + ng);
}

}  // namespace cloze::finetune
