#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace sfad {

/// Keeps freed activation buffers in the heap instead of returning them to
/// the kernel after every batch. Call once at program start; no-op outside
/// glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace sfad
