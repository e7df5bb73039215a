#pragma once

// Dense kernels shared by the op implementations. Every output element is
// accumulated in a fixed order that does not depend on the number of rows,
// so a row's result is bit-identical no matter what else is in the batch.

#include <cstddef>
#include <functional>
#include <vector>

namespace cloze::numerics::kernels {

/// Worker count for intra-op parallelism (CLOZE_NUM_THREADS caps it).
std::size_t thread_count();

/// Runs body(begin, end) over [0, n) split into contiguous chunks. Falls back
/// to a single call when `work` is small or only one thread is available.
void parallel_rows(std::size_t n, std::size_t work, const std::function<void(std::size_t, std::size_t)>& body);

/// C[m x n] (+)= A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);

/// C[m x n] (+)= A[m x k] * B^T where B is [n x k]
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);

/// C[k x n] (+)= A^T * B where A is [m x k] and B is [m x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);

}  // namespace cloze::numerics::kernels
