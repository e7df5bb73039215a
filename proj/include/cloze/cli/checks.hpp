#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cloze/model/model.hpp"
#include "json.hpp"

namespace cloze::cli {

struct CheckResult {
  std::string name;
  bool passed = true;
  /// Largest measured deviation (0 for exact invariants that hold).
  double residual = 0;
  std::size_t cases = 0;
  /// First failure, or a short note on what was measured.
  std::string detail;
  nlohmann::json extra;

  nlohmann::json to_json() const;
  /// "PASS name residual=... cases=... detail".
  std::string line() const;
};

struct CheckReport {
  std::string suite;
  std::vector<CheckResult> results;

  bool passed() const;
  nlohmann::json to_json() const;
};

struct CheckOptions {
  /// Random models (fresh) or random inputs (given model) per check.
  std::size_t trials = 100;
  std::uint64_t seed = 1;
  /// Negative control: runs the leak check with each target's own tower
  /// states exposed, which must fail.
  bool sabotage_mask = false;
  /// Elements per tensor for finite differences; 0 checks all of them.
  std::size_t grad_elements = 0;
  double grad_tolerance = 1e-4;
};

/// Cloze log-probabilities at position i must be bit-identical under any
/// substitution of token i (train_masked mode). `model` null draws a fresh
/// tiny random model per trial.
CheckResult leakage_check(const model::TwoTowerModel<float>* model, const CheckOptions& options);

/// Perturbing token j leaves F^l_i (i < j) and B^l_i (i > j) bit-identical
/// in every block.
CheckResult causality_check(const model::TwoTowerModel<float>* model, const CheckOptions& options);

/// Finite-difference check of every parameter tensor of a 64-bit tiny
/// model (d=16, two blocks, V=20), one result per objective.
std::vector<CheckResult> gradcheck_suite(const CheckOptions& options);

/// suite: leakage | causality | gradcheck | all.
CheckReport run_checks(const std::string& suite, const model::TwoTowerModel<float>* model,
                       const CheckOptions& options);

}  // namespace cloze::cli
