#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace milnet {

using Rng = std::mt19937_64;

/// Purpose tags mixed into derived stream seeds.
enum class StreamPurpose : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kAugment = 3,
  kFolds = 4,
  kSynth = 5,
};

/// SplitMix64 finalizer (Steele, Lea & Flood). Golden-ratio increment 0x9E3779B97F4A7C15.
std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent stream seed from a root seed and a path of keys,
/// e.g. derive_seed(root, {epoch, sample, kAugment}). Order-sensitive.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path);

inline Rng make_stream(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(root, path));
}

inline std::uint64_t tag(StreamPurpose p) { return static_cast<std::uint64_t>(p); }

}  // namespace milnet
