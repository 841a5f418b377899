#pragma once

#include <cstddef>
#include <functional>

namespace rvsl {

/// Worker count from RVSL_THREADS (0 or unset = hardware concurrency).
std::size_t worker_count();

/// Overrides RVSL_THREADS for the current process; 0 restores auto.
void set_worker_count(std::size_t n);

/// Runs `body(i)` for i in [0, n). Iterations are split into contiguous
/// chunks, one per worker. Bodies must write disjoint outputs so results do
/// not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Keeps large tensor buffers in the heap instead of returning them to the OS
/// after every graph (glibc only; a no-op elsewhere). Idempotent.
void retain_freed_memory();

}  // namespace rvsl
