#pragma once

#include <cstdint>
#include <functional>

namespace dcrnet {

/// Worker-thread cap. Initialized from DCRNET_THREADS (default 1).
int thread_count();
void set_thread_count(int n);

/// Runs fn(i) for i in [begin, end). With more than one worker the range is
/// split into contiguous chunks; every index is still processed by exactly
/// one worker, so results must not depend on which worker runs an index.
void parallel_for(int64_t begin, int64_t end, const std::function<void(int64_t)>& fn);

}  // namespace dcrnet
