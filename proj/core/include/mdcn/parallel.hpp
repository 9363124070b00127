#pragma once

#include <cstdint>
#include <functional>

namespace mdcn {

// Worker count used by the parallel kernels. Defaults to $MDCN_THREADS, or 1.
int num_threads();
void set_num_threads(int threads);

// Runs fn(begin, end) over disjoint contiguous sub-ranges of [0, count).
// Callers must only parallelize over independent outputs; results are then
// bit-identical for every worker count.
void parallel_for(std::int64_t count, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace mdcn
