#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace mvs {

using Rng = std::mt19937_64;

/// Independent stream keyed by (seed, keys...). Streams for different keys do
/// not depend on call order, so work keyed this way can be run in any order or
/// in parallel and still reproduce the same draws.
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * keys.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto k : keys) push(k);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

/// Stream tags, so that different consumers of one master seed never share draws.
enum class StreamTag : std::uint64_t {
  Folds = 1,
  Augment = 2,
  Init = 3,
  Shuffle = 4,
  Dropout = 5,
  Synthetic = 6,
};

inline std::uint64_t tag(StreamTag t) { return static_cast<std::uint64_t>(t); }

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace mvs
