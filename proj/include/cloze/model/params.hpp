#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cloze/numerics/tensor.hpp"

namespace cloze::model {

using numerics::Shape;
using numerics::Tensor;

enum class Init { zeros, ones, normal };

/// Named leaf tensors in creation order. Initial values depend only on
/// (seed, name), not on creation order.
template <typename T>
class ParamSet {
 public:
  explicit ParamSet(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor<T>& add(const std::string& name, Shape shape, Init init, double stddev = 0.0);
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  Tensor<T>& at(std::size_t i) { return tensors_[i]; }
  const Tensor<T>& at(std::size_t i) const { return tensors_[i]; }

  std::size_t element_count() const;
  /// Elements in tensors whose name does not start with `prefix`.
  std::size_t element_count_excluding(const std::string& prefix) const;
  void zero_grad();

  /// Writes manifest.txt ("name<TAB>extents") and params/<name>.cltz.
  void save(const std::filesystem::path& dir) const;
  /// Loads into existing tensors; names and shapes must match the manifest exactly.
  void load(const std::filesystem::path& dir);
  /// Copies values from `other`; names and shapes must match.
  template <typename U>
  void copy_from(const ParamSet<U>& other);

 private:
  std::uint64_t seed_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Loud failure for checkpoint/config mismatches.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
template <typename U>
void ParamSet<T>::copy_from(const ParamSet<U>& other) {
  if (other.names() != names_) throw CheckpointError("parameter sets differ in names");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (other.at(i).shape() != tensors_[i].shape()) throw CheckpointError("shape mismatch for " + names_[i]);
    auto dst = tensors_[i].mutable_data();
    const auto src = other.at(i).data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src[j]);
  }
}

}  // namespace cloze::model
