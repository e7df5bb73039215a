#include "cloze/numerics/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace cloze::numerics {

template <typename T>
Tensor<T> masked_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionMask& mask,
                           std::size_t heads, T dropout_p, ForwardContext& ctx, bool zero_slot) {
  const std::size_t B = mask.batch(), Tq = mask.queries(), Tk = mask.keys();
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(0) != B * Tq || k.dim(0) != B * Tk ||
      v.dim(0) != B * Tk || q.dim(1) != k.dim(1) || k.dim(1) != v.dim(1)) {
    throw DimensionError("masked_attention: q " + to_string(q.shape()) + ", k " + to_string(k.shape()) + ", v " +
                         to_string(v.shape()) + " incompatible with mask " + std::to_string(B) + "x" +
                         std::to_string(Tq) + "x" + std::to_string(Tk));
  }
  const std::size_t d = q.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("masked_attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (!(dropout_p >= T(0) && dropout_p < T(1))) throw std::invalid_argument("masked_attention: bad dropout rate");
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  const T masked = static_cast<T>(kMaskedScore);
  const std::uint64_t op = ctx.take_op_id();
  const bool drop = ctx.train && dropout_p > T(0);
  const T keep_scale = drop ? T(1) / (T(1) - dropout_p) : T(1);

  // probs: softmax weights before dropout; kept: dropout multipliers.
  std::vector<T> probs(B * heads * Tq * Tk);
  std::vector<T> kept(drop ? probs.size() : 0);
  std::vector<T> out(B * Tq * d, T(0));
  std::vector<T> scores(Tk);
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < Tq; ++i) {
        const T* qi = qd + (b * Tq + i) * d + h * dh;
        T mx = zero_slot ? T(0) : -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < Tk; ++j) {
          const T* kj = kd + (b * Tk + j) * d + h * dh;
          T s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= scale;
          if (!mask.allowed(b, i, j)) s += masked;
          scores[j] = s;
          mx = std::max(mx, s);
        }
        T total = zero_slot ? std::exp(-mx) : T(0);
        for (std::size_t j = 0; j < Tk; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          total += scores[j];
        }
        const std::size_t row = ((b * heads + h) * Tq + i) * Tk;
        T* oi = out.data() + (b * Tq + i) * d + h * dh;
        for (std::size_t j = 0; j < Tk; ++j) {
          const T p = scores[j] / total;
          probs[row + j] = p;
          T weight = p;
          if (drop) {
            const bool keep = to_unit(counter_hash(ctx.seed, ctx.step, op, row + j)) >= static_cast<double>(dropout_p);
            kept[row + j] = keep ? keep_scale : T(0);
            weight = p * kept[row + j];
          }
          if (weight == T(0)) continue;
          const T* vj = vd + (b * Tk + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += weight * vj[c];
        }
      }
    }
  }

  return make_result<T>(
      {B * Tq, d}, std::move(out), {q, k, v},
      [B, Tq, Tk, d, dh, heads, scale, probs = std::move(probs), kept = std::move(kept)](Node<T>& self) {
        Node<T>& Q = *self.inputs[0];
        Node<T>& K = *self.inputs[1];
        Node<T>& V = *self.inputs[2];
        T* gq = Q.requires_grad ? Q.ensure_grad().data() : nullptr;
        T* gk = K.requires_grad ? K.ensure_grad().data() : nullptr;
        T* gv = V.requires_grad ? V.ensure_grad().data() : nullptr;
        const bool drop = !kept.empty();
        std::vector<T> dp(Tk);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < Tq; ++i) {
              const std::size_t row = ((b * heads + h) * Tq + i) * Tk;
              const T* go = self.grad.data() + (b * Tq + i) * d + h * dh;
              T dot = 0;
              for (std::size_t j = 0; j < Tk; ++j) {
                const T p = probs[row + j];
                const T m = drop ? kept[row + j] : T(1);
                if (p == T(0) || m == T(0)) {
                  dp[j] = 0;
                  continue;
                }
                const std::size_t vrow = (b * Tk + j) * d + h * dh;
                T s = 0;
                for (std::size_t c = 0; c < dh; ++c) s += go[c] * V.value[vrow + c];
                dp[j] = s * m;
                if (gv) {
                  const T w = p * m;
                  for (std::size_t c = 0; c < dh; ++c) gv[vrow + c] += w * go[c];
                }
                dot += p * dp[j];
              }
              const std::size_t qrow = (b * Tq + i) * d + h * dh;
              for (std::size_t j = 0; j < Tk; ++j) {
                const T p = probs[row + j];
                if (p == T(0)) continue;
                const T ds = p * (dp[j] - dot) * scale;
                const std::size_t krow = (b * Tk + j) * d + h * dh;
                if (gq) {
                  for (std::size_t c = 0; c < dh; ++c) gq[qrow + c] += ds * K.value[krow + c];
                }
                if (gk) {
                  for (std::size_t c = 0; c < dh; ++c) gk[krow + c] += ds * Q.value[qrow + c];
                }
              }
            }
          }
        }
      });
}

template Tensor<float> masked_attention(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                        const AttentionMask&, std::size_t, float, ForwardContext&, bool);
template Tensor<double> masked_attention(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                         const AttentionMask&, std::size_t, double, ForwardContext&, bool);

}  // namespace cloze::numerics
