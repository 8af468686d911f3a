#include "ictd/common.hpp"

#include <cmath>
#include <numbers>

namespace ictd {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

// Box-Muller keeps the stream layout independent of the standard library.
double standard_normal(Rng& rng) {
  const double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

State sample_categorical(std::span<const double> probs, Rng& rng) {
  require(!probs.empty(), "sample_categorical: empty distribution");
  const double u = uniform01(rng);
  double acc = 0.0;
  State last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = static_cast<State>(i);
    acc += probs[i];
    if (u < acc) return last_positive;
  }
  // Rounding left the cumulative sum just under 1.
  return last_positive;
}

}  // namespace ictd
