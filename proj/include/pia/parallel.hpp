#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace pia {

// Paths are processed in fixed-size blocks. Block boundaries depend only on the
// problem size, never on the worker count, so every per-block partial result and
// every reduction over blocks is identical whether 1 or 64 threads run it.
inline constexpr std::size_t kBlockSize = 2048;

inline std::size_t num_blocks(std::size_t n) { return (n + kBlockSize - 1) / kBlockSize; }

// Calls fn(block, begin, end) once per block, spread over `workers` threads.
template <class Fn>
void for_each_block(std::size_t n, unsigned workers, Fn&& fn) {
    const std::size_t blocks = num_blocks(n);
    auto run = [&](std::size_t b) {
        const std::size_t begin = b * kBlockSize;
        fn(b, begin, std::min(n, begin + kBlockSize));
    };
    if (workers <= 1 || blocks <= 1) {
        for (std::size_t b = 0; b < blocks; ++b) run(b);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        std::vector<std::jthread> pool;
        const unsigned count = static_cast<unsigned>(std::min<std::size_t>(workers, blocks));
        pool.reserve(count);
        for (unsigned w = 0; w < count; ++w) {
            pool.emplace_back([&] {
                for (std::size_t b = next++; b < blocks; b = next++) {
                    try {
                        run(b);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                        next = blocks;
                    }
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
}

// Sum of per-block partials in block order.
template <class T, class Fn>
T reduce_blocks(std::size_t n, unsigned workers, T zero, Fn&& block_value) {
    std::vector<T> partial(num_blocks(n), zero);
    for_each_block(n, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
        partial[b] = block_value(begin, end);
    });
    T total = zero;
    for (const auto& p : partial) total += p;
    return total;
}

}  // namespace pia
