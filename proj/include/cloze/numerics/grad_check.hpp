#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cloze/numerics/tensor.hpp"

namespace cloze::numerics {

struct NamedParam {
  std::string name;
  Tensor<double> tensor;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t worst_index = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0;
  bool passed = true;

  double worst() const;
  std::string summary() const;
};

/// Thrown when an analytic or numeric derivative is not finite.
class GradCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error, so derivatives that are zero
  /// up to rounding are compared absolutely.
  double floor = 1e-5;
  /// 0 checks every element; otherwise a seeded sample of this many.
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of scalar `loss()` against central
/// differences, element by element, for every listed parameter. Relative
/// error is |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const std::function<Tensor<double>()>& loss, std::span<const NamedParam> params,
                           const GradCheckOptions& options = {});

}  // namespace cloze::numerics
