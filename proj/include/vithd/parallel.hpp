#pragma once

#include <exception>
#include <vector>

namespace vithd {

/// Runs fn(i) for i in [0, n) across OpenMP threads. Exceptions cannot cross an
/// OpenMP region, so they are captured per index and the lowest-index one is
/// rethrown after the loop, keeping error reporting independent of scheduling.
template <typename Fn>
void parallel_for(long n, Fn&& fn)
{
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n > 0 ? n : 0));
    bool failed = false;
#pragma omp parallel for schedule(dynamic) reduction(|| : failed)
    for (long i = 0; i < n; ++i) {
        try {
            fn(i);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
            failed = true;
        }
    }
    if (failed)
        for (auto& e : errors)
            if (e)
                std::rethrow_exception(e);
}

} // namespace vithd
