#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cloze/numerics/rng.hpp"
#include "cloze/numerics/tensor.hpp"

namespace cloze::numerics {

/// Additive score offset for disallowed keys. exp() of it underflows to an
/// exact zero, so masked keys receive exactly zero weight and gradient.
inline constexpr double kMaskedScore = -1e9;

/// Per-sequence boolean visibility: allowed(b, query, key).
class AttentionMask {
 public:
  AttentionMask(std::size_t batch, std::size_t queries, std::size_t keys, bool fill = false)
      : batch_(batch), queries_(queries), keys_(keys), allowed_(batch * queries * keys, fill ? 1 : 0) {}

  std::size_t batch() const { return batch_; }
  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }

  bool allowed(std::size_t b, std::size_t q, std::size_t k) const {
    return allowed_[(b * queries_ + q) * keys_ + k] != 0;
  }
  void set(std::size_t b, std::size_t q, std::size_t k, bool value) {
    allowed_[(b * queries_ + q) * keys_ + k] = value ? 1 : 0;
  }

 private:
  std::size_t batch_, queries_, keys_;
  std::vector<std::uint8_t> allowed_;
};

/// Multi-head scaled dot-product attention over already-projected inputs.
///
/// q is [B*Tq x d], k and v are [B*Tk x d]; d splits into `heads` column
/// blocks. Each query additionally sees one all-zero key/value slot (score
/// 0, value 0) when `zero_slot` is set, so a query with no visible keys is
/// still well defined. Attention probabilities are dropped out with
/// `dropout_p` when ctx.train is set.
template <typename T>
Tensor<T> masked_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionMask& mask,
                           std::size_t heads, T dropout_p, ForwardContext& ctx, bool zero_slot = true);

}  // namespace cloze::numerics
