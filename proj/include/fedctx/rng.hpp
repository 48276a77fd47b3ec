#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "fedctx/errors.hpp"

namespace fedctx::rng {

// SplitMix64 finalizer, used to spread a master seed into well-separated
// per-purpose seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent randomness streams. Keeping them separate means e.g. changing
// how many devices the gradient estimator samples never shifts which devices
// participate in a round.
enum class Stream : std::uint64_t {
  device_selection = 1,
  epoch_draws = 2,
  data_shuffle = 3,
  gradient_sampling = 4,
  synthetic = 5,
  partition = 6,
};

inline std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

inline std::mt19937_64 make_engine(std::uint64_t master, Stream stream,
                                   std::uint64_t a = 0, std::uint64_t b = 0) {
  return std::mt19937_64(derive_seed(master, stream, a, b));
}

// Uniform sample of `count` distinct ids from {0, ..., population-1},
// returned sorted ascending. Partial Fisher-Yates.
inline std::vector<int> sample_without_replacement(int population, int count,
                                                   std::mt19937_64& gen) {
  if (population < 0 || count < 0 || count > population)
    throw InvalidInput("sample_without_replacement: need 0 <= count <= population");
  std::vector<int> pool(population);
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, population - 1);
    std::swap(pool[i], pool[pick(gen)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace fedctx::rng
