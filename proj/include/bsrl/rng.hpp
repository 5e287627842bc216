#pragma once

#include <cstdint>
#include <random>

namespace bsrl {

using Rng = std::mt19937_64;

/// Independent purposes get disjoint stream families so that, e.g., adding
/// evaluation episodes never perturbs training.
enum class StreamDomain : std::uint64_t {
  kInit = 1,
  kTrain = 2,
  kEval = 3,
  kSweep = 4,
  kCheck = 5,
  kSnapshot = 6,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream for one (run seed, domain, index) triple. Episodes derive their
/// stream from their global index, so batch order and thread count never
/// change results.
inline Rng make_stream(std::uint64_t seed, StreamDomain domain, std::uint64_t index) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(domain));
  h = splitmix64(h ^ index);
  return Rng{h};
}

}  // namespace bsrl
