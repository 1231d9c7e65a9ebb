#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gem {

// The autograd graph allocates and frees many mid-sized buffers per step. With
// glibc's default thresholds these go through mmap/munmap each time, which
// costs more than the arithmetic; keeping them on the heap avoids that.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace gem
