#pragma once

namespace ppodiff {

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// The training loops allocate and free many same-sized matrices; without this
/// glibc maps and unmaps them on every call.
void tune_allocator();

}  // namespace ppodiff
