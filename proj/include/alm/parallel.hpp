#pragma once

#include <cstddef>
#include <functional>

namespace alm {

// Worker cap: ALM_THREADS if set (>= 1), else hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t n);

// Runs fn(begin, end) over disjoint chunks of [0, n). Each index is handled
// by exactly one call, so results never depend on the thread count as long
// as fn writes only to slots owned by its indices. `work_per_item` is a rough
// flop estimate used to skip threading for small jobs.
void parallel_for(std::size_t n, std::size_t work_per_item,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace alm
