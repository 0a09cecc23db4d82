#pragma once

#include <cstdint>
#include <random>

namespace featviz {

// splitmix64 finalizer; used to turn (seed, index) pairs into engine seeds.
inline std::uint64_t mix64(std::uint64_t v) {
  v += 0x9e3779b97f4a7c15ULL;
  v = (v ^ (v >> 30)) * 0xbf58476d1ce4e5b9ULL;
  v = (v ^ (v >> 27)) * 0x94d049bb133111ebULL;
  return v ^ (v >> 31);
}

// Uniform draw in [low, high) built from the raw 64-bit output so results do
// not depend on the standard library's distribution implementation.
inline float uniform_float(std::mt19937_64& eng, float low, float high) {
  const double u = static_cast<double>(eng() >> 11) * 0x1.0p-53;
  return static_cast<float>(low + (static_cast<double>(high) - static_cast<double>(low)) * u);
}

}  // namespace featviz
