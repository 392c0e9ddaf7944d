#ifndef R2R_ALLOC_HPP
#define R2R_ALLOC_HPP

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace r2r {

/// Keeps batch-sized temporaries on the heap instead of fresh mmap/munmap pairs.
/// Worth about 10% of training wall time with glibc; a no-op elsewhere.
inline void keep_heap_resident() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace r2r

#endif  // R2R_ALLOC_HPP
