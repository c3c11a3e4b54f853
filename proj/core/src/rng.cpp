#include "admd/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>

namespace admd {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t state) noexcept {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state ^= bytes[i];
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t state) noexcept {
  return fnv1a64(text.data(), text.size(), state);
}

std::uint64_t SeedTree::seed(std::string_view name) const noexcept {
  return splitmix64(fnv1a64(name, splitmix64(root_)));
}

std::uint64_t SeedTree::seed(std::string_view name, std::uint64_t index) const noexcept {
  return splitmix64(seed(name) ^ splitmix64(index + 1));
}

at::Generator make_torch_generator(std::uint64_t seed) {
  return at::detail::createCPUGenerator(seed);
}

}  // namespace admd
