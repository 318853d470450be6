#include "ppodiff/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ppodiff {

void tune_allocator() {
#if defined(__GLIBC__)
  constexpr int kLarge = 256 * 1024 * 1024;
  mallopt(M_MMAP_THRESHOLD, kLarge);
  mallopt(M_TRIM_THRESHOLD, kLarge);
#endif
}

}  // namespace ppodiff
