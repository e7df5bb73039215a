#include "cloze/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "cloze/numerics/rng.hpp"

namespace cloze::numerics {

double GradCheckReport::worst() const {
  double w = 0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << (e.passed ? "ok   " : "FAIL ") << e.name << " checked=" << e.checked << " max_rel=" << e.max_rel_error
       << " max_abs=" << e.max_abs_error << '\n';
  }
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& loss, std::span<const NamedParam> params,
                           const GradCheckOptions& options) {
  for (const auto& p : params) {
    Tensor<double> t = p.tensor;
    t.zero_grad();
  }
  {
    Tensor<double> value = loss();
    backward(value);
  }
  GradCheckReport report;
  report.tolerance = options.tolerance;
  std::mt19937_64 rng(derive_seed(options.seed, "grad_check"));

  for (const auto& p : params) {
    Tensor<double> t = p.tensor;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> indices(t.size());
    std::iota(indices.begin(), indices.end(), 0);
    if (options.max_elements != 0 && indices.size() > options.max_elements) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_elements);
      std::sort(indices.begin(), indices.end());
    }
    GradCheckEntry entry;
    entry.name = p.name;
    auto values = t.mutable_data();
    NoGradGuard no_grad;
    for (std::size_t idx : indices) {
      const double original = values[idx];
      values[idx] = original + options.eps;
      const double up = loss().item();
      values[idx] = original - options.eps;
      const double down = loss().item();
      values[idx] = original;
      const double numeric = (up - down) / (2 * options.eps);
      const double a = analytic[idx];
      if (!std::isfinite(a) || !std::isfinite(numeric)) {
        std::ostringstream os;
        os << "non-finite gradient for " << p.name << "[" << idx << "]: analytic=" << a << " numeric=" << numeric;
        throw GradCheckError(os.str());
      }
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = idx;
      }
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      ++entry.checked;
    }
    entry.passed = entry.max_rel_error < options.tolerance;
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace cloze::numerics
