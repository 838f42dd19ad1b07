#pragma once
// Counter-based keyed random number generation.
//
// Every draw is a pure function of a 5-tuple key (master seed, path, step,
// mode, stream), so parallel path workers produce bitwise-identical results
// regardless of scheduling, and any single draw can be regenerated in
// isolation.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace chb {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// mixes the key fields one at a time; order matters, collisions do not recur
inline std::uint64_t key_hash(std::uint64_t master, std::uint64_t path,
                              std::uint64_t step, std::uint64_t mode,
                              std::uint64_t stream) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ (path + 0x632be59bd9b4e019ull));
  h = splitmix64(h ^ (step + 0x9e6c63d0876a9a47ull));
  h = splitmix64(h ^ (mode + 0xd1342543de82ef95ull));
  h = splitmix64(h ^ (stream + 0x2545f4914f6cdd1dull));
  return h;
}

// uniform in (0,1); never returns 0 or 1
inline double uniform_from_bits(std::uint64_t u) {
  return (static_cast<double>(u >> 11) + 0.5) * 0x1.0p-53;
}

// standard normal via Box-Muller on two decorrelated uniforms
inline double keyed_normal(std::uint64_t master, std::uint64_t path,
                           std::uint64_t step, std::uint64_t mode,
                           std::uint64_t stream) {
  const std::uint64_t h = key_hash(master, path, step, mode, stream);
  const double u1 = uniform_from_bits(h);
  const double u2 = uniform_from_bits(splitmix64(h ^ 0xa0761d6478bd642full));
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace chb
