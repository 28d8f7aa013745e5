#include "tikuda/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace tikuda {

std::string build_id() { return TIKUDA_BUILD_ID; }

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace tikuda
