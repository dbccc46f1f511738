#pragma once

#include <cstddef>
#include <functional>

namespace pumfa {

/// Worker cap: PUMFA_THREADS if set to a positive integer, else the hardware
/// concurrency (at least 1).
std::size_t worker_count();

/// Calls fn(i) for i in [0, count) on up to `workers` threads (0 = worker_count()).
/// The first exception thrown by any call is rethrown after all workers stop.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn, std::size_t workers = 0);

}  // namespace pumfa
