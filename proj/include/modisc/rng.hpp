#pragma once

#include <cstdint>
#include <random>

namespace modisc {

/// Engine for an independent stream keyed on (seed, stream). The same key always
/// yields the same sequence regardless of which thread consumes it.
inline std::mt19937_64 stream_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32), 0x6d6f6469u};
  return std::mt19937_64(seq);
}

/// splitmix64 finalizer; derives child seeds from a parent seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform double in [lo, hi) from 53 random bits; portable across standard libraries.
inline double uniform(std::mt19937_64& engine, double lo, double hi) {
  const double unit = static_cast<double>(engine() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * unit;
}

}  // namespace modisc
