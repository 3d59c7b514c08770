#pragma once

#include <cstddef>
#include <functional>

namespace ovw {

// Worker count for internal parallel loops: OVW_THREADS when set to a
// positive integer, otherwise the hardware concurrency.
std::size_t thread_budget();

// Runs body(i) for i in [0, n) on up to `threads` workers. Each index is
// visited exactly once; callers write results into per-index slots so the
// outcome does not depend on scheduling. The first exception thrown by any
// body is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

}  // namespace ovw
