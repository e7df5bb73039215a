#include "cloze/trainer/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "cloze/numerics/keyvalue.hpp"
#include "cloze/numerics/serialize.hpp"

namespace cloze::trainer {

namespace fs = std::filesystem;
namespace nx = cloze::numerics;

void Schedule::validate() const {
  if (warmup >= total) throw ConfigError("warmup steps must be below the number of updates");
  if (!(lr_floor < lr_peak)) throw ConfigError("lr_floor must be below lr_peak");
  if (!(lr_init > 0) || !(lr_floor >= 0)) throw ConfigError("learning rates must be positive");
}

double lr_schedule(std::size_t step, const Schedule& s) {
  if (step >= s.total) return s.lr_floor;
  if (step == s.warmup) return s.lr_peak;
  if (step < s.warmup) {
    const double frac = static_cast<double>(step) / static_cast<double>(s.warmup);
    return s.lr_init + (s.lr_peak - s.lr_init) * frac;
  }
  const double progress = static_cast<double>(step - s.warmup) / static_cast<double>(s.total - s.warmup);
  return s.lr_floor + 0.5 * (s.lr_peak - s.lr_floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
double grad_norm(const ParamSet<T>& params) {
  double sq = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.at(i);
    if (!p.has_grad()) continue;
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <typename T>
RenormResult renorm_grads(ParamSet<T>& params, double threshold) {
  RenormResult r;
  r.norm = grad_norm(params);
  if (!std::isfinite(r.norm)) {
    r.finite = false;
    return r;
  }
  if (r.norm <= threshold) return r;
  r.scale = threshold / r.norm;
  const T s = static_cast<T>(r.scale);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i);
    if (!p.has_grad()) continue;
    for (T& g : p.grad()) g *= s;
  }
  return r;
}

namespace {

template <typename T>
std::vector<std::vector<T>> zero_buffers(const ParamSet<T>& params) {
  std::vector<std::vector<T>> out;
  for (std::size_t i = 0; i < params.size(); ++i) out.emplace_back(params.at(i).size(), T(0));
  return out;
}

template <typename T>
void check_shapes(const ParamSet<T>& params, const std::vector<std::string>& names,
                  const std::vector<std::vector<T>>& buffers) {
  if (params.names() != names) throw OptimizerError("optimizer state does not match the parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (buffers[i].size() != params.at(i).size()) {
      throw OptimizerError("optimizer buffer for " + names[i] + " has " + std::to_string(buffers[i].size()) +
                           " elements, parameter has " + std::to_string(params.at(i).size()));
    }
  }
}

template <typename T>
void save_buffers(const fs::path& dir, const std::string& suffix, const std::vector<std::string>& names,
                  const std::vector<std::vector<T>>& buffers) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    nx::save_tensor(dir / (names[i] + suffix + ".cltz"), nx::Tensor<T>({buffers[i].size()}, buffers[i]));
  }
}

template <typename T>
void load_buffers(const fs::path& dir, const std::string& suffix, const std::vector<std::string>& names,
                  std::vector<std::vector<T>>& buffers) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto t = nx::load_tensor<T>(dir / (names[i] + suffix + ".cltz"));
    if (t.size() != buffers[i].size()) throw OptimizerError("optimizer buffer size mismatch for " + names[i]);
    buffers[i].assign(t.data().begin(), t.data().end());
  }
}

KeyValues load_state(const fs::path& dir, const std::string& kind) {
  if (!fs::exists(dir / "state.txt")) throw OptimizerError("missing optimizer state in " + dir.string());
  auto kv = KeyValues::load(dir / "state.txt");
  if (kv.get("kind", "") != kind) throw OptimizerError("optimizer state in " + dir.string() + " is not " + kind);
  return kv;
}

}  // namespace

template <typename T>
Nag<T>::Nag(const ParamSet<T>& params, double momentum)
    : momentum_(momentum), names_(params.names()), velocity_(zero_buffers(params)) {
  if (!(momentum >= 0 && momentum < 1)) throw OptimizerError("momentum must be in [0, 1)");
}

template <typename T>
void Nag<T>::step(ParamSet<T>& params, double lr) {
  check_shapes(params, names_, velocity_);
  const T mu = static_cast<T>(momentum_);
  const T eta = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i);
    if (!p.requires_grad() || !p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& v = velocity_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = mu * v[k] - eta * g[k];
      w[k] += mu * v[k] - eta * g[k];
    }
  }
  ++steps_;
}

template <typename T>
void Nag<T>::save(const fs::path& dir) const {
  fs::create_directories(dir);
  KeyValues kv;
  kv.set("kind", "nag");
  kv.set("momentum", format_double(momentum_));
  kv.set("steps", std::to_string(steps_));
  kv.save(dir / "state.txt");
  save_buffers(dir, ".v", names_, velocity_);
}

template <typename T>
void Nag<T>::load(const fs::path& dir) {
  const auto kv = load_state(dir, "nag");
  momentum_ = kv.get_double("momentum");
  steps_ = kv.get_size("steps");
  load_buffers(dir, ".v", names_, velocity_);
}

template <typename T>
Adam<T>::Adam(const ParamSet<T>& params, AdamOptions options)
    : options_(options), names_(params.names()), m_(zero_buffers(params)), v_(zero_buffers(params)) {}

template <typename T>
void Adam<T>::step(ParamSet<T>& params, double lr) {
  check_shapes(params, names_, m_);
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i);
    if (!p.requires_grad() || !p.has_grad()) continue;
    double rate = lr;
    if (const auto it = scales_.find(names_[i]); it != scales_.end()) rate *= it->second;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      m[k] = static_cast<T>(b1 * m[k] + (1 - b1) * gk);
      v[k] = static_cast<T>(b2 * v[k] + (1 - b2) * gk * gk);
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] = static_cast<T>(w[k] - rate * mhat / (std::sqrt(vhat) + options_.eps));
    }
  }
}

template <typename T>
void Adam<T>::save(const fs::path& dir) const {
  fs::create_directories(dir);
  KeyValues kv;
  kv.set("kind", "adam");
  kv.set("beta1", format_double(options_.beta1));
  kv.set("beta2", format_double(options_.beta2));
  kv.set("eps", format_double(options_.eps));
  kv.set("steps", std::to_string(steps_));
  kv.save(dir / "state.txt");
  save_buffers(dir, ".m", names_, m_);
  save_buffers(dir, ".v", names_, v_);
}

template <typename T>
void Adam<T>::load(const fs::path& dir) {
  const auto kv = load_state(dir, "adam");
  options_.beta1 = kv.get_double("beta1");
  options_.beta2 = kv.get_double("beta2");
  options_.eps = kv.get_double("eps");
  steps_ = kv.get_size("steps");
  load_buffers(dir, ".m", names_, m_);
  load_buffers(dir, ".v", names_, v_);
}

template double grad_norm(const ParamSet<float>&);
template double grad_norm(const ParamSet<double>&);
template RenormResult renorm_grads(ParamSet<float>&, double);
template RenormResult renorm_grads(ParamSet<double>&, double);
template class Nag<float>;
template class Nag<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace cloze::trainer
