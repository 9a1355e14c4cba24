#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "hrl/errors.hpp"

namespace hrl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for a named sub-stream of a root seed. Streams with different names
// are independent, so adding draws to one never shifts another.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(root ^ splitmix64(h));
}

inline Rng make_rng(std::uint64_t root, std::string_view stream) { return Rng(derive_seed(root, stream)); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline int uniform_int(Rng& rng, int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

inline int poisson(Rng& rng, double lambda) { return std::poisson_distribution<int>(lambda)(rng); }

inline std::string save_rng(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

inline Rng load_rng(const std::string& text) {
  Rng rng;
  std::istringstream in(text);
  in >> rng;
  if (!in) throw DataError("corrupt RNG state");
  return rng;
}

}  // namespace hrl
