#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace tcnet {

/// Keeps large tape buffers on the heap between steps instead of returning
/// them to the kernel; fresh pages are the dominant cost of small-batch steps.
/// Call once at program start. No-op outside glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace tcnet
