#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cloze/model/model.hpp"

namespace cloze::objectives {

using model::TwoTowerModel;
using numerics::ForwardContext;
using numerics::Tensor;
using textdata::Batch;
using textdata::Example;

enum class Objective { cloze, bilm, triplet };
Objective parse_objective(const std::string& name);
std::string to_string(Objective o);

inline constexpr double kDefaultBilmScale = 0.15;

struct LossComponent {
  double nll_sum = 0;
  std::size_t tokens = 0;

  double mean() const { return tokens ? nll_sum / static_cast<double>(tokens) : 0.0; }
  double perplexity() const;
  LossComponent& operator+=(const LossComponent& o) {
    nll_sum += o.nll_sum;
    tokens += o.tokens;
    return *this;
  }
};

struct LossReport {
  Objective objective = Objective::cloze;
  double lambda = 0;
  LossComponent cloze;
  LossComponent fwd;
  LossComponent bwd;

  /// Per-token mean of the optimized quantity: cloze, fwd + bwd, or cloze + lambda (fwd + bwd).
  double total() const;
  /// Pooled perplexity of both bilm directions.
  double bilm_perplexity() const;
  std::string to_json() const;
};

/// Restricts which target ids are scored; empty means all non-pad targets.
using TargetFilter = std::function<bool(std::size_t target_id)>;

template <typename T>
struct LossTerms {
  /// Scalar to differentiate.
  Tensor<T> total;
  /// Per-token means of each active component (undefined when inactive).
  Tensor<T> cloze;
  Tensor<T> fwd;
  Tensor<T> bwd;
  LossReport report;
};

/// Builds the requested objective on one batch. Cloze scores every
/// non-pad position through the target-masked combination layer; bilm
/// scores F_i -> token i+1 and B_i -> token i-1 straight from the towers
/// with the shared classifier; triplet = cloze + lambda (fwd + bwd).
template <typename T>
LossTerms<T> compute_loss(const TwoTowerModel<T>& model, const Batch& batch, Objective objective, double lambda,
                          ForwardContext& ctx, const TargetFilter& filter = {});

/// Mean of lambda-weighted component means, as in compute_loss.
double combine_means(Objective objective, double lambda, double cloze, double fwd, double bwd);

struct EvalOptions {
  std::size_t max_tokens = 4096;
  double lambda = kDefaultBilmScale;
  TargetFilter filter;
};

/// Deterministic held-out evaluation with dropout off. Per-example sums
/// are added in sorted order, so the result does not depend on input
/// order or batch packing.
template <typename T>
LossReport evaluate(const TwoTowerModel<T>& model, const std::vector<Example>& heldout, Objective objective,
                    const EvalOptions& options = {});

/// Resets the output classifier (and, when tied, the shared embedding) so
/// every type gets probability 1/V and perplexity is exactly V.
template <typename T>
void zero_classifier(TwoTowerModel<T>& model);

}  // namespace cloze::objectives
