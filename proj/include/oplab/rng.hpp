#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace oplab {

using Engine = std::mt19937_64;

// Stream purposes. Every random quantity in the library is drawn from an
// engine whose seed is derive_seed(root, purpose, ...), so that labels, edges,
// weights, beliefs, initial opinions and signals can be regenerated
// independently of each other.
enum class Stream : std::uint64_t {
  kLabels = 1,
  kEdges = 2,
  kWeights = 3,
  kBeliefs = 4,
  kInitial = 5,
  kSignals = 6,
  kTree = 7,
  kStationary = 8,
  kConcentration = 9,
  kMisc = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter scheme: seed = mix(...mix(mix(root) ^ purpose) ^ c1 ...). Each
// counter is folded in with a full splitmix round, so (root, purpose, c...)
// tuples that differ in any position give unrelated streams.
inline std::uint64_t derive_seed(std::uint64_t root, Stream purpose,
                                 std::initializer_list<std::uint64_t> counters = {}) {
  std::uint64_t h = splitmix64(root);
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  for (std::uint64_t c : counters) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

inline Engine make_engine(std::uint64_t root, Stream purpose,
                          std::initializer_list<std::uint64_t> counters = {}) {
  return Engine(derive_seed(root, purpose, counters));
}

inline double uniform01(Engine& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace oplab
