#pragma once

#include <cstddef>
#include <functional>

namespace avsync {

/// Worker count used by parallel_for; 1 (the default) runs everything on
/// the calling thread in index order.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Calls fn(i) for i in [0, n). Iterations must be independent; each writes
/// only its own slot, so results do not depend on the thread count. The
/// first exception thrown by any iteration is rethrown after all workers
/// finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace avsync
