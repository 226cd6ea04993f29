#pragma once

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace fewshot::detail {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work items must write
// only to their own slots. If any item throws, the exception of the lowest
// failing index is rethrown after all threads finish.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::jthread> pool;
    const std::size_t threads = std::min(jobs, n);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    pool.clear();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace fewshot::detail
