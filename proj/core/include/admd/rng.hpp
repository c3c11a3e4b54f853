#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <ATen/core/Generator.h>

namespace admd {

/// Derives independent, named random streams from one root seed.
///
/// Every stage draws from its own substream ("data", "init", "train",
/// "noise", ...) so that changing how much randomness one stage consumes
/// never perturbs the draws of another.
class SeedTree {
 public:
  explicit SeedTree(std::uint64_t root) : root_(root) {}

  std::uint64_t root() const noexcept { return root_; }

  /// Seed of the substream `name`.
  std::uint64_t seed(std::string_view name) const noexcept;

  /// Seed of the `index`-th member of substream `name` (per-sample streams).
  std::uint64_t seed(std::string_view name, std::uint64_t index) const noexcept;

  SeedTree child(std::string_view name) const noexcept { return SeedTree(seed(name)); }

  std::mt19937_64 engine(std::string_view name) const { return std::mt19937_64(seed(name)); }

 private:
  std::uint64_t root_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// 64-bit FNV-1a, used for config hashes and parameter fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t state = 0xcbf29ce484222325ULL) noexcept;
std::uint64_t fnv1a64(std::string_view text, std::uint64_t state = 0xcbf29ce484222325ULL) noexcept;

/// A CPU torch generator seeded deterministically.
at::Generator make_torch_generator(std::uint64_t seed);

}  // namespace admd
