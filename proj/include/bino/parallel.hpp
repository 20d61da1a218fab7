#pragma once

#include <cstddef>
#include <functional>

namespace bino {

// Worker count: hardware concurrency capped by BINO_THREADS (>= 1).
std::size_t worker_count();

// Runs fn(i) for i in [0, n) across worker_count() threads. Each index is
// executed exactly once; callers write results into slot i so that the
// reduction order never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace bino
