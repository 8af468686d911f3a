#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>

namespace ictd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Index of a state in a finite MRP, 0-based.
using State = int;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A forward pass or an optimizer update produced a non-finite number.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Every random draw in the library goes through this generator. Child streams
// for trials and tasks are derived with mix_seed(), never by sharing a Rng.
using Rng = std::mt19937_64;

/// splitmix64 finalizer applied to (base, stream).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

inline Rng make_rng(std::uint64_t base, std::uint64_t stream = 0) {
  return Rng{mix_seed(base, stream)};
}

/// Uniform on the open interval (0, 1), built from the top 53 bits.
double uniform01(Rng& rng);

/// Standard normal draw.
double standard_normal(Rng& rng);

/// Inverse-CDF draw from a probability vector.
State sample_categorical(std::span<const double> probs, Rng& rng);

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

}  // namespace ictd
