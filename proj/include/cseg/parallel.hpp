#pragma once

#include <cstddef>
#include <functional>

namespace cseg {

/// Worker count used by batch-parallel kernels. Defaults to 1. Kernels write
/// per-item partial results and reduce them in index order, so results do
/// not depend on this setting.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs fn(i) for i in [0, n), spread over num_threads() workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace cseg
