#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace envae {

// SplitMix64 finalizer; used to decorrelate derived seeds.
std::uint64_t splitmix64(std::uint64_t x);

// Seed of an independent sub-stream: the parent seed is folded with each tag
// in order, x <- splitmix64(x ^ splitmix64(tag + 0x9E3779B97F4A7C15)).
// Folds, classifier seeds and model roles each get their own tag so that runs
// never share a stream.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

// Deterministic random source. The engine is std::mt19937_64, whose output
// sequence is fixed by the C++ standard; uniform and normal variates are
// produced by hand (53-bit mantissa fill, Box-Muller) rather than by the
// implementation-defined <random> distributions, so the stream is the same
// on every conforming toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1).
  double uniform();
  // Uniform integer on [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);
  double normal();

  Rng derive(std::initializer_list<std::uint64_t> tags) const {
    return Rng(derive_seed(seed_, tags));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Fisher-Yates shuffle driven by Rng::uniform_index.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace envae
