#pragma once

// Dense row-major matrix kernels used by the transformer.
//
// Every kernel exists twice: `serial::` is the single-threaded reference and
// `omp::` splits output rows across OpenMP threads. Both call the same
// row-block routine, so each output element sees the same sequence of
// floating-point operations and results are bitwise identical for any thread
// count. `naive::` is a textbook triple loop kept only as a test oracle.

namespace vithd::kernels {

namespace serial {
/// C[m x n] = A[m x k] * B[k x n]; adds into C when `accumulate`.
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);
/// C[k x n] += A[m x k]^T * B[m x n]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n);
/// C[m x k] = A[m x n] * B[k x n]^T; adds into C when `accumulate`.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int n, int k, bool accumulate);
} // namespace serial

namespace omp {
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n);
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int n, int k, bool accumulate);
} // namespace omp

namespace naive {
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n);
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int n, int k, bool accumulate);
} // namespace naive

using omp::gemm;
using omp::gemm_nt;
using omp::gemm_tn_acc;

} // namespace vithd::kernels
