#include "cloze/numerics/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace cloze::numerics {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

std::uint64_t get_le(std::istream& in, int bytes) {
  unsigned char b[8] = {};
  if (!in.read(reinterpret_cast<char*>(b), bytes)) throw SerializationError("tensor blob truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& tensor) {
  out.write(kTensorMagic, 4);
  put_u32(out, kTensorFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(dtype_of<T>()));
  put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
  for (auto e : tensor.shape()) put_u64(out, e);
  for (T v : tensor.data()) {
    if constexpr (sizeof(T) == 4) {
      put_u32(out, std::bit_cast<std::uint32_t>(v));
    } else {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!out) throw SerializationError("failed writing tensor blob");
}

template <typename T>
Tensor<T> read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw SerializationError("not a tensor blob (bad magic)");
  }
  const auto version = static_cast<std::uint32_t>(get_le(in, 4));
  if (version != kTensorFormatVersion) {
    throw SerializationError("unsupported tensor format version " + std::to_string(version));
  }
  const auto dtype = static_cast<std::uint32_t>(get_le(in, 4));
  if (dtype > 1) throw SerializationError("unknown dtype tag " + std::to_string(dtype));
  const auto rank = static_cast<std::uint32_t>(get_le(in, 4));
  if (rank == 0 || rank > 8) throw SerializationError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(get_le(in, 8));
  std::vector<T> data(numel(shape));
  for (auto& v : data) {
    if (dtype == static_cast<std::uint32_t>(DType::f32)) {
      v = static_cast<T>(std::bit_cast<float>(static_cast<std::uint32_t>(get_le(in, 4))));
    } else {
      v = static_cast<T>(std::bit_cast<double>(get_le(in, 8)));
    }
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SerializationError("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SerializationError("cannot open " + path.string());
  return read_tensor<T>(in);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(std::istream&);
template Tensor<double> read_tensor<double>(std::istream&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(const std::filesystem::path&);
template Tensor<double> load_tensor<double>(const std::filesystem::path&);

}  // namespace cloze::numerics
