#include "trifield/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>
#include <thread>
#include <vector>

namespace trifield {

int resolve_workers(int requested, bool deterministic) {
    if (deterministic) return 1;
    int n = requested;
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* cap = std::getenv("ERNF_THREADS")) {
        int c = std::atoi(cap);
        if (c > 0) n = std::min(n, c);
    }
    return std::max(1, n);
}

void parallel_chunks(std::size_t n, int workers,
                     const std::function<void(int, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    std::size_t w = static_cast<std::size_t>(std::max(1, workers));
    w = std::min(w, n);
    if (w == 1) {
        fn(0, 0, n);
        return;
    }
    std::size_t chunk = (n + w - 1) / w;
    std::vector<std::thread> threads;
    threads.reserve(w);
    std::vector<std::exception_ptr> errors(w);
    for (std::size_t i = 0; i < w; ++i) {
        std::size_t begin = i * chunk;
        std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back([&, i, begin, end] {
            try {
                fn(static_cast<int>(i), begin, end);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace trifield
