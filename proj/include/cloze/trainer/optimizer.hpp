#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cloze/model/params.hpp"

namespace cloze::trainer {

using model::ParamSet;

class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear warmup from lr_init to lr_peak over `warmup` steps, then a single
/// cosine phase down to lr_floor at step `total`.
struct Schedule {
  double lr_init = 1e-7;
  double lr_peak = 0.1;
  double lr_floor = 1e-4;
  std::size_t warmup = 100;
  std::size_t total = 2000;

  void validate() const;
};

/// Endpoints are exact: step 0 -> lr_init, step == warmup -> lr_peak,
/// step >= total -> lr_floor.
double lr_schedule(std::size_t step, const Schedule& s);

struct RenormResult {
  double norm = 0;
  double scale = 1;
  bool finite = true;
};

/// Global L2 norm over all gradients (accumulated in double). Gradients are
/// scaled by threshold / norm when the norm exceeds the threshold and left
/// untouched when it is not finite.
template <typename T>
RenormResult renorm_grads(ParamSet<T>& params, double threshold);

template <typename T>
double grad_norm(const ParamSet<T>& params);

/// Nesterov momentum: v <- mu v - lr g; theta <- theta + mu v - lr g.
/// Parameters with requires_grad off are skipped.
template <typename T>
class Nag {
 public:
  Nag(const ParamSet<T>& params, double momentum);

  void step(ParamSet<T>& params, double lr);
  double momentum() const { return momentum_; }
  std::size_t steps() const { return steps_; }
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }

  void save(const std::filesystem::path& dir) const;
  void load(const std::filesystem::path& dir);

 private:
  double momentum_;
  std::size_t steps_ = 0;
  std::vector<std::string> names_;
  std::vector<std::vector<T>> velocity_;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. `set_scale` gives a parameter a learning-rate
/// multiplier (parameter groups); frozen parameters are skipped.
template <typename T>
class Adam {
 public:
  explicit Adam(const ParamSet<T>& params, AdamOptions options = {});

  void step(ParamSet<T>& params, double lr);
  void set_scale(const std::string& name, double factor) { scales_[name] = factor; }
  std::size_t steps() const { return steps_; }

  void save(const std::filesystem::path& dir) const;
  void load(const std::filesystem::path& dir);

 private:
  AdamOptions options_;
  std::size_t steps_ = 0;
  std::vector<std::string> names_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::map<std::string, double> scales_;
};

}  // namespace cloze::trainer
