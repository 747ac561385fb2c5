#ifndef MASKFUSE_PARALLEL_H_
#define MASKFUSE_PARALLEL_H_

#include <cstddef>
#include <functional>
#include <optional>

namespace maskfuse {

// Explicit flag first, then the MASKFUSE_THREADS environment variable, then 1.
int ResolveThreadCount(std::optional<int> flag);

// Calls fn(i) for every i in [0, n) on up to `threads` workers. Results must
// be written to per-index slots so the outcome does not depend on scheduling.
// If any call throws, the exception from the lowest index is rethrown.
void ParallelFor(size_t n, int threads, const std::function<void(size_t)>& fn);

}  // namespace maskfuse

#endif  // MASKFUSE_PARALLEL_H_
