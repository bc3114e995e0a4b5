#pragma once

#include <cstddef>
#include <functional>

namespace mmv {

// Worker count from MMV_WORKERS, else hardware concurrency (at least 1).
std::size_t worker_count();

// Runs body(begin, end) over disjoint contiguous chunks of [0, count).
// Chunk boundaries do not affect results as long as body writes only to
// per-index slots.
void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace mmv
