#pragma once

#include <cstdint>
#include <random>

#include "ncfkkt/linalg.hpp"

namespace ncfkkt {

// Every random draw in the library goes through this generator and
// std::normal_distribution, so a seed fixes all outputs of a given build.
using Rng = std::mt19937_64;
inline constexpr const char* kRngName = "std::mt19937_64 + std::normal_distribution<double>";

inline Vector gaussian_vector(Rng& rng, std::size_t n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(n);
  for (double& x : v) x = nd(rng);
  return v;
}

// Uniform on the unit sphere.
inline Vector random_unit(Rng& rng, std::size_t n) {
  Vector v;
  do {
    v = gaussian_vector(rng, n);
  } while (!(norm2(v) > 0.0));
  return normalized(v);
}

}  // namespace ncfkkt
