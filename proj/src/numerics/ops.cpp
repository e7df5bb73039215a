#include "cloze/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "kernels.hpp"

namespace cloze::numerics {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

struct AxisLayout {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisLayout layout_for(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

template <typename T, typename F, typename G>
Tensor<T> unary(const Tensor<T>& x, F forward, G derivative) {
  std::vector<T> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [derivative](Node<T>& self) {
    Node<T>& xin = *self.inputs[0];
    auto& g = xin.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * derivative(xin.value[i], self.value[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  kernels::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data(), false);
  return make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    Node<T>& A = *self.inputs[0];
    Node<T>& B = *self.inputs[1];
    if (A.requires_grad) kernels::gemm_nt(m, n, k, self.grad.data(), B.value.data(), A.ensure_grad().data(), true);
    if (B.requires_grad) kernels::gemm_tn(m, k, n, A.value.data(), self.grad.data(), B.ensure_grad().data(), true);
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(0)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(w.shape()));
  }
  const std::size_t in = w.dim(0), out_dim = w.dim(1), rows = x.size() / in;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.size() != out_dim)) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                         to_string(w.shape()));
  }
  std::vector<T> out(rows * out_dim);
  kernels::gemm_nn(rows, in, out_dim, x.data().data(), w.data().data(), out.data(), false);
  if (has_bias) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      T* row = out.data() + r * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) row[j] += b[j];
    }
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(shape), std::move(out), std::move(inputs), [rows, in, out_dim, has_bias](Node<T>& self) {
    Node<T>& X = *self.inputs[0];
    Node<T>& W = *self.inputs[1];
    if (X.requires_grad) kernels::gemm_nt(rows, out_dim, in, self.grad.data(), W.value.data(), X.ensure_grad().data(), true);
    if (W.requires_grad) kernels::gemm_tn(rows, in, out_dim, X.value.data(), self.grad.data(), W.ensure_grad().data(), true);
    if (has_bias && self.inputs[2]->requires_grad) {
      auto& gb = self.inputs[2]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* row = self.grad.data() + r * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) gb[j] += row[j];
      }
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      Node<T>& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& A = *self.inputs[0];
    Node<T>& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary(a, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  return unary(a, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const AxisLayout l = layout_for(x.shape(), axis);
  std::vector<T> out(x.size());
  const auto in = x.data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.len * l.inner + i;
      T mx = in[base];
      for (std::size_t a = 1; a < l.len; ++a) mx = std::max(mx, in[base + a * l.inner]);
      if (std::isnan(mx)) mx = std::numeric_limits<T>::quiet_NaN();
      T total = 0;
      for (std::size_t a = 0; a < l.len; ++a) {
        const T e = std::exp(in[base + a * l.inner] - mx);
        out[base + a * l.inner] = e;
        total += e;
      }
      for (std::size_t a = 0; a < l.len; ++a) out[base + a * l.inner] /= total;
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [l](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t i = 0; i < l.inner; ++i) {
        const std::size_t base = o * l.len * l.inner + i;
        T dot = 0;
        for (std::size_t a = 0; a < l.len; ++a) dot += self.grad[base + a * l.inner] * self.value[base + a * l.inner];
        for (std::size_t a = 0; a < l.len; ++a) {
          const std::size_t idx = base + a * l.inner;
          g[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.size() / len;
  std::vector<T> out(x.size());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * len;
    const T mx = *std::max_element(row, row + len);
    T total = 0;
    for (std::size_t j = 0; j < len; ++j) total += std::exp(row[j] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = row[j] - lse;
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [rows, len](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dy = self.grad.data() + r * len;
      const T* y = self.value.data() + r * len;
      T total = 0;
      for (std::size_t j = 0; j < len; ++j) total += dy[j];
      for (std::size_t j = 0; j < len; ++j) g[r * len + j] += dy[j] - std::exp(y[j]) * total;
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + to_string(gain.shape()) + "/" + to_string(bias.shape()) +
                         " do not match feature axis of " + to_string(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size()), xhat(x.size()), rstd(rows);
  const auto in = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = h * g[j] + b[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gain, bias},
                        [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
                          Node<T>& X = *self.inputs[0];
                          Node<T>& G = *self.inputs[1];
                          Node<T>& B = *self.inputs[2];
                          if (G.requires_grad || B.requires_grad) {
                            auto& gg = G.ensure_grad();
                            auto& gb = B.ensure_grad();
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t j = 0; j < d; ++j) {
                                gg[j] += self.grad[r * d + j] * xhat[r * d + j];
                                gb[j] += self.grad[r * d + j];
                              }
                            }
                          }
                          if (!X.requires_grad) return;
                          auto& gx = X.ensure_grad();
                          std::vector<T> dxhat(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                            T mean_d = 0, mean_dx = 0;
                            for (std::size_t j = 0; j < d; ++j) {
                              dxhat[j] = self.grad[r * d + j] * G.value[j];
                              mean_d += dxhat[j];
                              mean_dx += dxhat[j] * xhat[r * d + j];
                            }
                            mean_d /= T(d);
                            mean_dx /= T(d);
                            for (std::size_t j = 0; j < d; ++j) {
                              gx[r * d + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range for " + to_string(ref));
  std::vector<std::size_t> lens;
  Shape shape = ref;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw DimensionError("concat: rank mismatch " + to_string(ref) + " vs " + to_string(p.shape()));
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.shape()[i] != ref[i]) {
        throw DimensionError("concat: shape mismatch " + to_string(ref) + " vs " + to_string(p.shape()));
      }
    }
    lens.push_back(p.shape()[axis]);
    shape[axis] += p.shape()[axis];
  }
  const AxisLayout l = layout_for(shape, axis);
  std::vector<T> out(numel(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    const std::size_t chunk = lens[k] * l.inner;
    for (std::size_t o = 0; o < l.outer; ++o) {
      std::copy_n(src.data() + o * chunk, chunk, out.data() + o * l.len * l.inner + offset * l.inner);
    }
    offset += lens[k];
  }
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  return make_result<T>(std::move(shape), std::move(out), std::move(inputs), [l, lens](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < lens.size(); ++k) {
      Node<T>& in = *self.inputs[k];
      const std::size_t chunk = lens[k] * l.inner;
      if (in.requires_grad) {
        auto& g = in.ensure_grad();
        for (std::size_t o = 0; o < l.outer; ++o) {
          const T* src = self.grad.data() + o * l.len * l.inner + offset * l.inner;
          T* dst = g.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += lens[k];
    }
  });
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::span<const std::size_t> sizes, std::size_t axis) {
  const AxisLayout l = layout_for(x.shape(), axis);
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  if (total != l.len) {
    throw DimensionError("split: sizes sum to " + std::to_string(total) + " but axis has extent " +
                         std::to_string(l.len) + " in " + to_string(x.shape()));
  }
  std::vector<Tensor<T>> out;
  std::size_t offset = 0;
  const auto src = x.data();
  for (auto len : sizes) {
    Shape shape = x.shape();
    shape[axis] = len;
    std::vector<T> part(numel(shape));
    const std::size_t chunk = len * l.inner;
    for (std::size_t o = 0; o < l.outer; ++o) {
      std::copy_n(src.data() + o * l.len * l.inner + offset * l.inner, chunk, part.data() + o * chunk);
    }
    out.push_back(make_result<T>(std::move(shape), std::move(part), {x}, [l, offset, chunk](Node<T>& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t o = 0; o < l.outer; ++o) {
        T* dst = g.data() + o * l.len * l.inner + offset * l.inner;
        const T* s = self.grad.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += s[i];
      }
    }));
    offset += len;
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose: needs a matrix, got " + to_string(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(m * n);
  const auto in = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  return make_result<T>({n, m}, std::move(out), {x}, [m, n](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, ForwardContext& ctx) {
  if (!(p >= T(0) && p < T(1))) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  const std::uint64_t op = ctx.take_op_id();
  if (!ctx.train || p == T(0)) return x;
  const T keep_scale = T(1) / (T(1) - p);
  std::vector<T> mask(x.size());
  std::vector<T> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool keep = to_unit(counter_hash(ctx.seed, ctx.step, op, i)) >= static_cast<double>(p);
    mask[i] = keep ? keep_scale : T(0);
    out[i] = in[i] * mask[i];
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>({1}, {total}, {x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.size()));
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be a matrix, got " + to_string(table.shape()));
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  const auto src = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(rows));
    }
    std::copy_n(src.data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return make_result<T>({ids.size(), d}, std::move(out), {table}, [d, saved = std::move(saved)](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < saved.size(); ++i) {
      T* dst = g.data() + saved[i] * d;
      const T* s = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += s[j];
    }
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::ptrdiff_t> rows) {
  if (x.rank() != 2) throw DimensionError("gather_rows: needs a matrix, got " + to_string(x.shape()));
  if (rows.empty()) throw DimensionError("gather_rows: empty row list");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<T> out(rows.size() * d, T(0));
  const auto src = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0) continue;
    if (static_cast<std::size_t>(rows[i]) >= n) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(src.data() + static_cast<std::size_t>(rows[i]) * d, d, out.data() + i * d);
  }
  std::vector<std::ptrdiff_t> saved(rows.begin(), rows.end());
  return make_result<T>({rows.size(), d}, std::move(out), {x}, [d, saved = std::move(saved)](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < saved.size(); ++i) {
      if (saved[i] < 0) continue;
      T* dst = g.data() + static_cast<std::size_t>(saved[i]) * d;
      const T* s = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += s[j];
    }
  });
}

template <typename T>
Tensor<T> nll_sum(const Tensor<T>& logp, std::span<const std::size_t> targets, std::span<const T> weights) {
  if (logp.rank() != 2) throw DimensionError("nll_sum: log-probs must be a matrix, got " + to_string(logp.shape()));
  const std::size_t n = logp.dim(0), v = logp.dim(1);
  if (targets.size() != n || weights.size() != n) {
    throw DimensionError("nll_sum: " + std::to_string(targets.size()) + " targets / " +
                         std::to_string(weights.size()) + " weights for " + std::to_string(n) + " rows");
  }
  const auto lp = logp.data();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= v) {
      throw std::out_of_range("target id " + std::to_string(targets[i]) + " >= vocabulary size " + std::to_string(v));
    }
    if (weights[i] == T(0)) continue;
    total -= static_cast<double>(weights[i]) * static_cast<double>(lp[i * v + targets[i]]);
  }
  std::vector<std::size_t> t(targets.begin(), targets.end());
  std::vector<T> w(weights.begin(), weights.end());
  return make_result<T>({1}, {static_cast<T>(total)}, {logp}, [v, t = std::move(t), w = std::move(w)](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (w[i] != T(0)) g[i * v + t[i]] -= self.grad[0] * w[i];
    }
  });
}

template <typename T>
Tensor<T> squared_error_sum(const Tensor<T>& pred, std::span<const T> target) {
  if (pred.size() != target.size()) {
    throw DimensionError("squared_error_sum: " + std::to_string(target.size()) + " targets for prediction " +
                         to_string(pred.shape()));
  }
  const auto p = pred.data();
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double diff = static_cast<double>(p[i]) - static_cast<double>(target[i]);
    total += diff * diff;
  }
  std::vector<T> t(target.begin(), target.end());
  return make_result<T>({1}, {static_cast<T>(total)}, {pred}, [t = std::move(t)](Node<T>& self) {
    Node<T>& P = *self.inputs[0];
    auto& g = P.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * T(2) * (P.value[i] - t[i]);
  });
}

template <typename T>
Tensor<T> conv1d_maxpool(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t seq_len,
                         std::size_t width) {
  if (x.rank() != 2 || w.rank() != 2 || seq_len == 0 || x.dim(0) % seq_len != 0) {
    throw DimensionError("conv1d_maxpool: input " + to_string(x.shape()) + " is not a stack of length-" +
                         std::to_string(seq_len) + " sequences");
  }
  const std::size_t c = x.dim(1), out_dim = w.dim(1), n = x.dim(0) / seq_len, k = width * c;
  if (width == 0 || width > seq_len || w.dim(0) != k || bias.size() != out_dim) {
    throw DimensionError("conv1d_maxpool: filter " + to_string(w.shape()) + " with width " + std::to_string(width) +
                         " incompatible with input " + to_string(x.shape()));
  }
  const std::size_t positions = seq_len - width + 1;
  std::vector<T> out(n * out_dim);
  std::vector<std::uint32_t> argmax(n * out_dim);
  std::vector<T> acc(out_dim);
  const T* xd = x.data().data();
  const T* wd = w.data().data();
  const auto b = bias.data();
  for (std::size_t s = 0; s < n; ++s) {
    T* best = out.data() + s * out_dim;
    std::uint32_t* arg = argmax.data() + s * out_dim;
    for (std::size_t p = 0; p < positions; ++p) {
      std::copy(b.begin(), b.end(), acc.begin());
      const T* window = xd + (s * seq_len + p) * c;
      for (std::size_t q = 0; q < k; ++q) {
        const T xv = window[q];
        const T* wrow = wd + q * out_dim;
        for (std::size_t o = 0; o < out_dim; ++o) acc[o] += xv * wrow[o];
      }
      for (std::size_t o = 0; o < out_dim; ++o) {
        if (p == 0 || acc[o] > best[o]) {
          best[o] = acc[o];
          arg[o] = static_cast<std::uint32_t>(p);
        }
      }
    }
  }
  return make_result<T>({n, out_dim}, std::move(out), {x, w, bias},
                        [n, c, k, out_dim, seq_len, argmax = std::move(argmax)](Node<T>& self) {
                          Node<T>& X = *self.inputs[0];
                          Node<T>& W = *self.inputs[1];
                          Node<T>& B = *self.inputs[2];
                          T* gx = X.requires_grad ? X.ensure_grad().data() : nullptr;
                          T* gw = W.requires_grad ? W.ensure_grad().data() : nullptr;
                          T* gb = B.requires_grad ? B.ensure_grad().data() : nullptr;
                          for (std::size_t s = 0; s < n; ++s) {
                            for (std::size_t o = 0; o < out_dim; ++o) {
                              const T dy = self.grad[s * out_dim + o];
                              if (dy == T(0)) continue;
                              const std::size_t start = (s * seq_len + argmax[s * out_dim + o]) * c;
                              if (gb) gb[o] += dy;
                              for (std::size_t q = 0; q < k; ++q) {
                                if (gx) gx[start + q] += dy * W.value[q * out_dim + o];
                                if (gw) gw[q * out_dim + o] += dy * X.value[start + q];
                              }
                            }
                          }
                        });
}

#define CLOZE_INSTANTIATE_OPS(T)                                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> scale(const Tensor<T>&, T);                                                         \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                    \
  template Tensor<T> relu(const Tensor<T>&);                                                             \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                          \
  template Tensor<T> tanh(const Tensor<T>&);                                                             \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> log_softmax(const Tensor<T>&);                                                      \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                                    \
  template std::vector<Tensor<T>> split(const Tensor<T>&, std::span<const std::size_t>, std::size_t);    \
  template Tensor<T> transpose(const Tensor<T>&);                                                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                   \
  template Tensor<T> dropout(const Tensor<T>&, T, ForwardContext&);                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                              \
  template Tensor<T> mean(const Tensor<T>&);                                                             \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::size_t>);                          \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::ptrdiff_t>);                     \
  template Tensor<T> nll_sum(const Tensor<T>&, std::span<const std::size_t>, std::span<const T>);        \
  template Tensor<T> squared_error_sum(const Tensor<T>&, std::span<const T>);                            \
  template Tensor<T> conv1d_maxpool(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                                    std::size_t);

CLOZE_INSTANTIATE_OPS(float)
CLOZE_INSTANTIATE_OPS(double)

}  // namespace cloze::numerics
