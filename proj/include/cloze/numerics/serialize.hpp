#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "cloze/numerics/tensor.hpp"

namespace cloze::numerics {

/// Little-endian tensor blob:
///   "CLTZ" | u32 version | u32 dtype (0 = f32, 1 = f64) | u32 rank |
///   u64 extent * rank | row-major payload.
inline constexpr char kTensorMagic[4] = {'C', 'L', 'T', 'Z'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;

class SerializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& tensor);

/// Reads a blob of either dtype and converts to T.
template <typename T>
Tensor<T> read_tensor(std::istream& in);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& tensor);
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

}  // namespace cloze::numerics
