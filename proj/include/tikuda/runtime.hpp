#pragma once

#include <string>

namespace tikuda {

/// Git description of the source tree the library was built from, or "unknown".
std::string build_id();

/// Raises glibc's mmap and trim thresholds so the tape's short-lived matrices reuse heap memory.
void tune_allocator();

}  // namespace tikuda
