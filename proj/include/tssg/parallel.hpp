#pragma once

#include <functional>

namespace tssg {

/// Worker count used by the data-parallel kernels. 1 disables threading.
void set_thread_count(int threads);
int thread_count();

/// Runs body(i) for i in [0, n). Iterations are split into contiguous chunks,
/// one per worker; callers must not depend on cross-iteration order.
void parallel_for(int n, const std::function<void(int)>& body);

}  // namespace tssg
