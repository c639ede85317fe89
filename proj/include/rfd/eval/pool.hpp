#pragma once

#include <cstddef>
#include <functional>

namespace rfd::eval {

/// Runs fn(i) for i in [0, n) on up to `workers` threads (0 = hardware
/// concurrency). Indices are handed out in increasing order; the first
/// exception thrown by any job is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace rfd::eval
