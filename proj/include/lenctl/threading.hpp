#pragma once

#include <functional>

namespace lenctl {

// Worker count: LBL_THREADS env var caps it, otherwise hardware concurrency.
int worker_count();
void set_worker_count(int n);

// Static partition of [0, n) into one contiguous chunk per worker.
// Each index is processed by exactly one worker and every chunk keeps its
// natural iteration order, so results are bitwise independent of the
// worker count.
void parallel_for(int n, const std::function<void(int begin, int end)>& fn);

} // namespace lenctl
