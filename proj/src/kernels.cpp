#include "vithd/kernels.hpp"

#include <algorithm>

namespace vithd::kernels {

namespace {

// Work below this many multiply-adds stays on the calling thread.
constexpr long kParallelThreshold = 1L << 16;
constexpr int kRowChunk = 8;

template <typename T>
[[gnu::noinline]] void gemm_rows(const T* __restrict a, const T* __restrict b, T* __restrict c, int row_begin,
                                 int row_end, int k, int n, bool accumulate)
{
    for (int i = row_begin; i < row_end; ++i) {
        T* ci = c + static_cast<long>(i) * n;
        if (!accumulate)
            std::fill(ci, ci + n, T(0));
        const T* ai = a + static_cast<long>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T aip = ai[p];
            const T* bp = b + static_cast<long>(p) * n;
            for (int j = 0; j < n; ++j)
                ci[j] += aip * bp[j];
        }
    }
}

template <typename T>
[[gnu::noinline]] void gemm_tn_rows(const T* __restrict a, const T* __restrict b, T* __restrict c, int row_begin,
                                    int row_end, int m, int k, int n)
{
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<long>(i) * k;
        const T* bi = b + static_cast<long>(i) * n;
        for (int p = row_begin; p < row_end; ++p) {
            const T aip = ai[p];
            T* cp = c + static_cast<long>(p) * n;
            for (int j = 0; j < n; ++j)
                cp[j] += aip * bi[j];
        }
    }
}

template <typename T>
[[gnu::noinline]] void gemm_nt_rows(const T* __restrict a, const T* __restrict b, T* __restrict c, int row_begin,
                                    int row_end, int n, int k, bool accumulate)
{
    for (int i = row_begin; i < row_end; ++i) {
        const T* ai = a + static_cast<long>(i) * n;
        T* ci = c + static_cast<long>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T* bp = b + static_cast<long>(p) * n;
            T sum = 0;
            for (int j = 0; j < n; ++j)
                sum += ai[j] * bp[j];
            ci[p] = accumulate ? ci[p] + sum : sum;
        }
    }
}

} // namespace

namespace serial {

template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate)
{
    gemm_rows(a, b, c, 0, m, k, n, accumulate);
}

template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n)
{
    gemm_tn_rows(a, b, c, 0, k, m, k, n);
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int n, int k, bool accumulate)
{
    gemm_nt_rows(a, b, c, 0, m, n, k, accumulate);
}

} // namespace serial

namespace omp {

template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate)
{
    const int chunks = (m + kRowChunk - 1) / kRowChunk;
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * k * n >= kParallelThreshold)
    for (int ch = 0; ch < chunks; ++ch)
        gemm_rows(a, b, c, ch * kRowChunk, std::min(m, (ch + 1) * kRowChunk), k, n, accumulate);
}

template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n)
{
    const int chunks = (k + kRowChunk - 1) / kRowChunk;
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * k * n >= kParallelThreshold)
    for (int ch = 0; ch < chunks; ++ch)
        gemm_tn_rows(a, b, c, ch * kRowChunk, std::min(k, (ch + 1) * kRowChunk), m, k, n);
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int n, int k, bool accumulate)
{
    const int chunks = (m + kRowChunk - 1) / kRowChunk;
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * k * n >= kParallelThreshold)
    for (int ch = 0; ch < chunks; ++ch)
        gemm_nt_rows(a, b, c, ch * kRowChunk, std::min(m, (ch + 1) * kRowChunk), n, k, accumulate);
}

} // namespace omp

namespace naive {

template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate)
{
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T sum = 0;
            for (int p = 0; p < k; ++p)
                sum += a[i * k + p] * b[p * n + j];
            c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
        }
}

template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n)
{
    for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) {
            T sum = 0;
            for (int i = 0; i < m; ++i)
                sum += a[i * k + p] * b[i * n + j];
            c[p * n + j] += sum;
        }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int n, int k, bool accumulate)
{
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            T sum = 0;
            for (int j = 0; j < n; ++j)
                sum += a[i * n + j] * b[p * n + j];
            c[i * k + p] = accumulate ? c[i * k + p] + sum : sum;
        }
}

} // namespace naive

#define VITHD_INSTANTIATE(NS, T)                                                                                       \
    template void NS::gemm<T>(const T*, const T*, T*, int, int, int, bool);                                            \
    template void NS::gemm_tn_acc<T>(const T*, const T*, T*, int, int, int);                                           \
    template void NS::gemm_nt<T>(const T*, const T*, T*, int, int, int, bool);

VITHD_INSTANTIATE(serial, float)
VITHD_INSTANTIATE(serial, double)
VITHD_INSTANTIATE(omp, float)
VITHD_INSTANTIATE(omp, double)
VITHD_INSTANTIATE(naive, float)
VITHD_INSTANTIATE(naive, double)

#undef VITHD_INSTANTIATE

} // namespace vithd::kernels
