#pragma once

#include "ictd/common.hpp"
#include "ictd/io.hpp"

#include <optional>
#include <string_view>
#include <vector>

namespace ictd {

/// Finite Markov reward process with the policy already folded in.
///
/// transition(i, j) = p(s_j | s_i), reward(i) = r(s_i). init_dist is the
/// stationary distribution for every generated chain, so rollouts start in
/// steady state.
struct Mrp {
  int n = 0;
  Matrix transition;
  Vector reward;
  double gamma = 0.0;
  Vector init_dist;

  /// Throws Error if any structural invariant is broken.
  void validate() const;
};

/// S_0..S_T and R_1..R_T with R_{t+1} = r(S_t).
struct Trajectory {
  std::vector<State> states;
  std::vector<double> rewards;
};

enum class MrpFamily { boyan, loop };

MrpFamily parse_family(std::string_view name);
std::string_view family_name(MrpFamily family);

inline constexpr double kDefaultLoopThreshold = 0.5;

Vector one_hot(State i, int n);

/// Random Boyan chain: state i < n-2 moves to i+1 w.p. eps_i and to i+2
/// otherwise, state n-2 moves to n-1, and state n-1 jumps to a random
/// distribution over all states. Rewards are U(-1, 1).
Mrp generate_boyan(int n, double gamma, Rng& rng);

/// Random Loop chain: random sparse connectivity above `threshold`, no
/// self-loops, and forced edges i -> i+1 and n-1 -> 0.
Mrp generate_loop(int n, double threshold, double gamma, Rng& rng);

Mrp generate_mrp(MrpFamily family, int n, double gamma, Rng& rng,
                 double loop_threshold = kDefaultLoopThreshold);

/// `count` independent tasks drawn in sequence from `rng`.
std::vector<Mrp> sample_tasks(MrpFamily family, int n, double gamma, int count, Rng& rng,
                              double loop_threshold = kDefaultLoopThreshold);

/// mu with mu^T P = mu^T and sum(mu) = 1, by a direct linear solve.
Vector stationary_distribution(const Matrix& transition);

/// v = (I - gamma P)^{-1} r.
Vector solve_value(const Mrp& mrp);

Trajectory unroll(const Mrp& mrp, int steps, Rng& rng, std::optional<State> start = std::nullopt);

/// sum_{t < horizon} gamma^t r(S_t) from S_0 = s.
double truncated_return(const Mrp& mrp, State s, int horizon, Rng& rng);

Json to_json(const Mrp& mrp);
Mrp mrp_from_json(const Json& j);

}  // namespace ictd
