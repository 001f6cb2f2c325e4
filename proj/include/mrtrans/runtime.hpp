#pragma once

// Process-level allocator tuning for the training binaries.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mrtrans {

/// Keeps freed activation buffers in the heap instead of returning them to the
/// kernel after every step; on glibc this removes most page-fault overhead.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace mrtrans
