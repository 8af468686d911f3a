#include "ictd/mrp.hpp"

#include <cmath>

namespace ictd {

namespace {

constexpr double kStochasticTol = 1e-12;
constexpr double kStationaryResidualTol = 1e-10;

void check_state(State s, int n, const char* where) {
  if (s < 0 || s >= n) {
    throw Error(std::string(where) + ": state " + std::to_string(s) + " out of range [0, " +
                std::to_string(n) + ")");
  }
}

Mrp finish(Matrix transition, Vector reward, double gamma) {
  Mrp mrp;
  mrp.n = static_cast<int>(reward.size());
  mrp.transition = std::move(transition);
  mrp.reward = std::move(reward);
  mrp.gamma = gamma;
  mrp.init_dist = stationary_distribution(mrp.transition);
  return mrp;
}

// Same inverse-CDF rule as sample_categorical, read straight from row s.
State draw_next(const Matrix& transition, State s, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  State last_positive = 0;
  for (Eigen::Index j = 0; j < transition.cols(); ++j) {
    const double p = transition(s, j);
    if (p <= 0.0) continue;
    last_positive = static_cast<State>(j);
    acc += p;
    if (u < acc) return last_positive;
  }
  return last_positive;
}

Vector uniform_rewards(int n, Rng& rng) {
  Vector r(n);
  for (int i = 0; i < n; ++i) r(i) = 2.0 * uniform01(rng) - 1.0;
  return r;
}

}  // namespace

void Mrp::validate() const {
  require(n >= 1, "Mrp: n must be >= 1");
  require(transition.rows() == n && transition.cols() == n, "Mrp: transition must be n x n");
  require(reward.size() == n, "Mrp: reward must have n entries");
  require(init_dist.size() == n, "Mrp: init_dist must have n entries");
  require(gamma >= 0.0 && gamma < 1.0, "Mrp: gamma must lie in [0, 1)");
  require((transition.array() >= 0.0).all() && (transition.array() <= 1.0).all(),
          "Mrp: transition entries must lie in [0, 1]");
  for (int i = 0; i < n; ++i) {
    require(std::abs(transition.row(i).sum() - 1.0) <= kStochasticTol,
            "Mrp: transition row " + std::to_string(i) + " does not sum to 1");
  }
  require((init_dist.array() >= 0.0).all(), "Mrp: init_dist must be nonnegative");
  require(std::abs(init_dist.sum() - 1.0) <= kStochasticTol, "Mrp: init_dist must sum to 1");
  require(reward.allFinite(), "Mrp: reward must be finite");
}

MrpFamily parse_family(std::string_view name) {
  if (name == "boyan") return MrpFamily::boyan;
  if (name == "loop") return MrpFamily::loop;
  throw Error("unknown MRP family '" + std::string(name) + "' (expected boyan or loop)");
}

std::string_view family_name(MrpFamily family) {
  return family == MrpFamily::boyan ? "boyan" : "loop";
}

Vector one_hot(State i, int n) {
  check_state(i, n, "one_hot");
  Vector e = Vector::Zero(n);
  e(i) = 1.0;
  return e;
}

// 1-indexed states k of the generating procedure map to rows k-1 here.
Mrp generate_boyan(int n, double gamma, Rng& rng) {
  require(n >= 3, "generate_boyan: need at least 3 states");
  Vector r = uniform_rewards(n, rng);
  Matrix p = Matrix::Zero(n, n);
  for (int i = 0; i <= n - 3; ++i) {
    const double eps = uniform01(rng);
    p(i, i + 1) = eps;
    p(i, i + 2) = 1.0 - eps;
  }
  p(n - 2, n - 1) = 1.0;
  Vector z(n);
  for (int j = 0; j < n; ++j) z(j) = uniform01(rng);
  p.row(n - 1) = (z / z.sum()).transpose();
  return finish(std::move(p), std::move(r), gamma);
}

Mrp generate_loop(int n, double threshold, double gamma, Rng& rng) {
  require(n >= 2, "generate_loop: need at least 2 states");
  require(threshold > 0.0 && threshold < 1.0, "generate_loop: threshold must lie in (0, 1)");
  Vector r = uniform_rewards(n, rng);
  Matrix connect(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) connect(i, j) = uniform01(rng) > threshold ? 1.0 : 0.0;
  for (int i = 0; i < n - 1; ++i) {
    connect(i, i) = 0.0;
    connect(i, i + 1) = 1.0;
  }
  connect(n - 1, n - 1) = 0.0;
  connect(n - 1, 0) = 1.0;

  Matrix p(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) p(i, j) = uniform01(rng);
  p = p.cwiseProduct(connect);
  for (int i = 0; i < n; ++i) {
    const double z = p.row(i).sum();
    if (!(z > 0.0)) throw Error("generate_loop: empty transition row " + std::to_string(i));
    p.row(i) /= z;
  }
  return finish(std::move(p), std::move(r), gamma);
}

Mrp generate_mrp(MrpFamily family, int n, double gamma, Rng& rng, double loop_threshold) {
  return family == MrpFamily::boyan ? generate_boyan(n, gamma, rng)
                                    : generate_loop(n, loop_threshold, gamma, rng);
}

std::vector<Mrp> sample_tasks(MrpFamily family, int n, double gamma, int count, Rng& rng,
                              double loop_threshold) {
  require(count >= 0, "sample_tasks: count must be >= 0");
  std::vector<Mrp> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_mrp(family, n, gamma, rng, loop_threshold));
  return out;
}

Vector stationary_distribution(const Matrix& transition) {
  const auto n = transition.rows();
  require(n >= 1 && transition.cols() == n, "stationary_distribution: matrix must be square");
  // mu^T (P - I) = 0 with the last equation replaced by sum(mu) = 1.
  Matrix a = transition.transpose() - Matrix::Identity(n, n);
  a.row(n - 1).setOnes();
  Vector b = Vector::Zero(n);
  b(n - 1) = 1.0;
  Eigen::FullPivLU<Matrix> lu(a);
  if (!lu.isInvertible()) {
    throw Error("stationary_distribution: singular system (chain is not ergodic)");
  }
  Vector mu = lu.solve(b);
  const double residual = (mu.transpose() * transition - mu.transpose()).cwiseAbs().maxCoeff();
  if (!(residual <= kStationaryResidualTol) || (mu.array() < -kStationaryResidualTol).any()) {
    throw Error("stationary_distribution: no valid solution (chain is not ergodic)");
  }
  return mu;
}

Vector solve_value(const Mrp& mrp) {
  const Matrix a = Matrix::Identity(mrp.n, mrp.n) - mrp.gamma * mrp.transition;
  Eigen::PartialPivLU<Matrix> lu(a);
  Vector v = lu.solve(mrp.reward);
  if (!v.allFinite()) throw Error("solve_value: singular Bellman system");
  return v;
}

Trajectory unroll(const Mrp& mrp, int steps, Rng& rng, std::optional<State> start) {
  require(steps >= 0, "unroll: steps must be >= 0");
  Trajectory traj;
  traj.states.reserve(static_cast<std::size_t>(steps) + 1);
  traj.rewards.reserve(static_cast<std::size_t>(steps));
  State s = 0;
  if (start) {
    check_state(*start, mrp.n, "unroll");
    s = *start;
  } else {
    s = sample_categorical(std::span(mrp.init_dist.data(), mrp.init_dist.size()), rng);
  }
  traj.states.push_back(s);
  for (int t = 0; t < steps; ++t) {
    traj.rewards.push_back(mrp.reward(s));
    s = draw_next(mrp.transition, s, rng);
    traj.states.push_back(s);
  }
  return traj;
}

double truncated_return(const Mrp& mrp, State s, int horizon, Rng& rng) {
  require(horizon >= 1, "truncated_return: horizon must be >= 1");
  check_state(s, mrp.n, "truncated_return");
  double g = 0.0;
  double discount = 1.0;
  for (int t = 0; t < horizon; ++t) {
    g += discount * mrp.reward(s);
    discount *= mrp.gamma;
    if (t + 1 < horizon) s = draw_next(mrp.transition, s, rng);
  }
  return g;
}

Json to_json(const Mrp& mrp) {
  return Json{{"n", mrp.n},
              {"gamma", mrp.gamma},
              {"transition", matrix_to_json(mrp.transition)},
              {"reward", vector_to_json(mrp.reward)},
              {"init_dist", vector_to_json(mrp.init_dist)}};
}

Mrp mrp_from_json(const Json& j) {
  Mrp mrp;
  try {
    mrp.n = j.at("n").get<int>();
    mrp.gamma = j.at("gamma").get<double>();
    mrp.transition = matrix_from_json(j.at("transition"));
    mrp.reward = vector_from_json(j.at("reward"));
    mrp.init_dist = j.contains("init_dist") ? vector_from_json(j.at("init_dist"))
                                            : stationary_distribution(mrp.transition);
  } catch (const Json::exception& e) {
    throw Error(std::string("mrp_from_json: ") + e.what());
  }
  mrp.validate();
  return mrp;
}

}  // namespace ictd
