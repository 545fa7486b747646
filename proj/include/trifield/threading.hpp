#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace trifield {

/// Worker count for data-parallel phases. Resolution order: explicit request,
/// ERNF_THREADS env cap, hardware concurrency. deterministic forces 1.
int resolve_workers(int requested, bool deterministic);

/// Split [0, n) into one contiguous chunk per worker and run fn(worker, begin,
/// end) on each. Chunk boundaries depend only on (n, workers), so results that
/// are merged in worker order are reproducible for a fixed worker count.
/// workers == 1 runs inline.
void parallel_chunks(std::size_t n, int workers,
                     const std::function<void(int, std::size_t, std::size_t)>& fn);

}  // namespace trifield
