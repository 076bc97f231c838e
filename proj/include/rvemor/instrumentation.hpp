#pragma once

#include <cstdint>

namespace rvemor {

/// Per-thread operation counters. Each simulation runs on one thread, so the
/// difference of two snapshots taken on that thread counts its own work.
struct Counters {
  std::uint64_t linear_solves = 0;
  std::uint64_t stress_updates = 0;
  std::uint64_t assemblies = 0;
};

inline Counters& counters() {
  thread_local Counters c;
  return c;
}

inline Counters operator-(const Counters& a, const Counters& b) {
  return {a.linear_solves - b.linear_solves, a.stress_updates - b.stress_updates,
          a.assemblies - b.assemblies};
}

} // namespace rvemor
