#include "kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>

namespace cloze::numerics::kernels {

std::size_t thread_count() {
  static const std::size_t count = [] {
    std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CLOZE_NUM_THREADS")) {
      try {
        const long cap = std::stol(env);
        if (cap >= 1) hw = std::min<std::size_t>(hw, static_cast<std::size_t>(cap));
      } catch (...) {
      }
    }
    return hw;
  }();
  return count;
}

void parallel_rows(std::size_t n, std::size_t work, const std::function<void(std::size_t, std::size_t)>& body) {
  constexpr std::size_t kMinWorkPerThread = 1u << 18;
  const std::size_t threads = std::min({thread_count(), n, std::max<std::size_t>(1, work / kMinWorkPerThread)});
  if (threads <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin < end) pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  body(0, std::min(n, chunk));
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  parallel_rows(m, m * k * n, [=](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      T* crow = c + i * n;
      if (!accumulate) std::fill(crow, crow + n, T(0));
      const T* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(m, k, n, a, bt.data(), c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  // Parallel over output rows (columns of A) keeps each element's sum ordered by i.
  parallel_rows(k, m * k * n, [=](std::size_t p0, std::size_t p1) {
    if (!accumulate) std::fill(c + p0 * n, c + p1 * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = a + i * k;
      const T* brow = b + i * n;
      for (std::size_t p = p0; p < p1; ++p) {
        const T av = arow[p];
        if (av == T(0)) continue;
        T* crow = c + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

template void gemm_nn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_nn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template void gemm_nt<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_nt<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template void gemm_tn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_tn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);

}  // namespace cloze::numerics::kernels
