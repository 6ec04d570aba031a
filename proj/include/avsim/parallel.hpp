#pragma once

#include <cstddef>
#include <functional>

namespace avsim {

/// Worker count: AVSIM_THREADS when set and positive, else hardware concurrency.
int default_thread_count();

/// Runs body(i) for i in [0, n). Work items must write disjoint outputs;
/// the first exception thrown by any item is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  int threads = default_thread_count());

}  // namespace avsim
