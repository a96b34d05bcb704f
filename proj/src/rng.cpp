#include "causalmm/rng.hpp"

#include <cmath>
#include <numbers>

#include "causalmm/error.hpp"

namespace causalmm {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t s = seed;
  for (auto& word : state_) {
    s += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    word = z ^ (z >> 31);
  }
}

SeededRng SeededRng::derived(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(seed);
  for (auto tag : tags) h = splitmix64(h ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
  return SeededRng(h);
}

std::uint64_t SeededRng::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double SeededRng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t SeededRng::index(std::size_t n) {
  if (n == 0) throw InputError("SeededRng::index requires n > 0");
  const auto wide = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

std::vector<std::size_t> SeededRng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[index(i)]);
  return p;
}

Tensor seeded_uniform(SeededRng& rng, std::size_t n) {
  std::vector<double> values(n);
  for (auto& v : values) v = rng.uniform();
  return Tensor({n}, std::move(values));
}

}  // namespace causalmm
