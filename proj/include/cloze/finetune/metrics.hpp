#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cloze::finetune {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class MetricKind { accuracy, f1, mcc, spearman, span_f1 };
MetricKind parse_metric(const std::string& name);
std::string to_string(MetricKind kind);

/// Degenerate inputs (a zero denominator) score 0 and append a note to
/// `warnings` when given. Every metric requires equal lengths >= 2.
double accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& golds);
/// Binary F1 with class 1 as positive.
double binary_f1(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& golds,
                 std::vector<std::string>* warnings = nullptr);
/// Matthews correlation for binary labels.
double mcc(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& golds,
           std::vector<std::string>* warnings = nullptr);
/// Pearson correlation of average ranks.
double spearman(const std::vector<double>& preds, const std::vector<double>& golds,
                std::vector<std::string>* warnings = nullptr);

/// Ranks starting at 1; tied values share the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& values);

struct Span {
  std::string type;
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  bool operator==(const Span&) const = default;
  bool operator<(const Span& o) const;
};

/// BIO decoding ("B-X", "I-X", "O"). An I- tag that does not continue a
/// span of the same type opens a new span.
std::vector<Span> bio_spans(const std::vector<std::string>& tags);

/// Micro-averaged exact-match span F1 over sentences.
double span_f1(const std::vector<std::vector<std::string>>& preds, const std::vector<std::vector<std::string>>& golds,
               std::vector<std::string>* warnings = nullptr);

}  // namespace cloze::finetune
