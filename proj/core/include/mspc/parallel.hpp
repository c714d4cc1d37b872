#pragma once

#include <cstddef>
#include <functional>

namespace mspc {

/// Worker count: MSPC_THREADS if set, else hardware concurrency.
int worker_count();

/// Static block partition of [0, n) over workers. Each worker writes only
/// its own output slots, so results are bit-identical at any worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t begin, std::size_t end)>& fn);

}  // namespace mspc
