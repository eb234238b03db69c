#pragma once

#include <cstdint>
#include <random>

namespace featmatch {

using Rng = std::mt19937_64;

// Independent, reproducible stream for (seed, stream, index). Used so that
// every batch / augmentation view owns its own generator and results do not
// depend on which worker thread produced them.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t index = 0) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(stream), hi(stream), lo(index), hi(index)};
  return Rng(seq);
}

// Named stream ids.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kLabeledSampler = 2;
inline constexpr std::uint64_t kUnlabeledShuffle = 3;
inline constexpr std::uint64_t kWeakLabeled = 4;
inline constexpr std::uint64_t kWeakUnlabeled = 5;
inline constexpr std::uint64_t kStrongUnlabeled = 6;
inline constexpr std::uint64_t kKMeans = 7;
inline constexpr std::uint64_t kData = 8;
inline constexpr std::uint64_t kSplit = 9;
inline constexpr std::uint64_t kMix = 10;
}  // namespace streams

}  // namespace featmatch
