#pragma once

#include <cstdint>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace bcla {

// Boost distributions produce the same stream on every platform, which keeps
// seeded outputs byte-identical across toolchains.
using Engine = boost::random::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// One independent stream per (seed, task index). Results gathered by task
// index are therefore independent of scheduling order.
inline Engine make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  return Engine(splitmix64(splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 1)));
}

inline double draw_normal(Engine& eng, double mean, double sd) {
  if (sd == 0.0) return mean;
  return boost::random::normal_distribution<double>(mean, sd)(eng);
}

// Gamma with shape k and scale theta (mean k * theta).
inline double draw_gamma(Engine& eng, double shape, double scale) {
  return boost::random::gamma_distribution<double>(shape, scale)(eng);
}

inline double draw_uniform(Engine& eng) { return boost::random::uniform_01<double>()(eng); }

inline std::size_t draw_index(Engine& eng, std::size_t n) {
  return boost::random::uniform_int_distribution<std::size_t>(0, n - 1)(eng);
}

}  // namespace bcla
