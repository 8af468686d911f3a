#include "ictd/harness.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace ictd {

namespace {

double weighted_sq_error(const Vector& predicted, const Mrp& mrp) {
  const Vector mu = stationary_distribution(mrp.transition);
  const Vector v = solve_value(mrp);
  return mu.dot((predicted - v).cwiseAbs2());
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double stderr_of(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(xs.size() - 1);
  return std::sqrt(var / static_cast<double>(xs.size()));
}

struct Pattern {
  Matrix P;
  Matrix Q;
};

Pattern td_pattern(int n) {
  const TransformerParams td = td_params(n, 1);
  return {td.layers.front().P, td.layers.front().Q};
}

Matrix normalized(const Matrix& m) {
  const double s = m.cwiseAbs().maxCoeff();
  return s > 0.0 ? Matrix(m / s) : m;
}

double pearson(const Matrix& a, const Matrix& b) {
  const Eigen::ArrayXd x = a.reshaped().array() - a.mean();
  const Eigen::ArrayXd y = b.reshaped().array() - b.mean();
  const double den = std::sqrt((x * x).sum() * (y * y).sum());
  return den > 0.0 ? (x * y).sum() / den : 0.0;
}

double off_support_fraction(const Matrix& m, const Matrix& pattern) {
  const double total = m.squaredNorm();
  if (total == 0.0) return 0.0;
  double off = 0.0;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (pattern(i, j) == 0.0) off += m(i, j) * m(i, j);
  return off / total;
}

// Sign of a layer relative to theta_TD. P(2n, 2n) decides; a zero there falls
// back on the Q diagonal, whose theta_TD entries are -1.
double alignment_sign(const Layer& layer, int n) {
  const double p = layer.P(2 * n, 2 * n);
  if (p != 0.0) return p > 0.0 ? 1.0 : -1.0;
  return layer.Q.topLeftCorner(n, n).trace() > 0.0 ? -1.0 : 1.0;
}

}  // namespace

double msve_on_trajectory(const TransformerParams& params, const Mrp& mrp, const Trajectory& traj,
                          int m, ContextWeighting weighting) {
  require(params.n == mrp.n, "msve: params and MRP disagree on n");
  const Prompt prompt = prompt_sampled_all(traj, m, mrp.gamma, mrp.n, weighting);
  try {
    return weighted_sq_error(forward(prompt, params).values, mrp);
  } catch (const DivergenceError&) {
    return std::numeric_limits<double>::infinity();
  }
}

double msve_point(const TransformerParams& params, const Mrp& mrp, int m, Rng& rng,
                  ContextWeighting weighting) {
  require(m >= 0, "msve_point: m must be >= 0");
  const Trajectory traj = unroll(mrp, m, rng);
  return msve_on_trajectory(params, mrp, traj, m, weighting);
}

double msve_expected(const TransformerParams& params, const Mrp& mrp) {
  require(params.n == mrp.n, "msve: params and MRP disagree on n");
  try {
    return weighted_sq_error(forward(prompt_expected_all(mrp), params).values, mrp);
  } catch (const DivergenceError&) {
    return std::numeric_limits<double>::infinity();
  }
}

std::vector<int> EvalConfig::default_lengths() {
  std::vector<int> out;
  for (int m = 5; m <= 100; m += 5) out.push_back(m);
  return out;
}

void EvalConfig::validate() const {
  require(n_tasks >= 1, "eval: n_tasks must be >= 1");
  require(!lengths.empty(), "eval: lengths must be nonempty");
  require(gamma >= 0.0 && gamma < 1.0, "eval: gamma must be in [0, 1)");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    require(lengths[i] >= 0, "eval: lengths must be >= 0");
    if (i > 0) require(lengths[i] > lengths[i - 1], "eval: lengths must be strictly increasing");
  }
}

double EvalReport::end_to_start_ratio() const {
  require(!msve_mean.empty(), "EvalReport: empty curve");
  return msve_mean.back() / msve_mean.front();
}

bool EvalReport::decreasing() const {
  require(!msve_mean.empty(), "EvalReport: empty curve");
  return msve_mean.back() < msve_mean.front();
}

EvalReport msve_curve(const TransformerParams& params, const EvalConfig& config, Rng& rng) {
  config.validate();
  const std::vector<Mrp> tasks =
      sample_tasks(config.family, params.n, config.gamma, config.n_tasks, rng, config.loop_threshold);
  return msve_curve(params, tasks, config.lengths, rng, config.weighting);
}

EvalReport msve_curve(const TransformerParams& params, std::span<const Mrp> tasks,
                      const std::vector<int>& lengths, Rng& rng, ContextWeighting weighting) {
  require(!tasks.empty(), "msve_curve: no tasks");
  EvalConfig shape;
  shape.lengths = lengths;
  shape.n_tasks = static_cast<int>(tasks.size());
  shape.gamma = tasks.front().gamma;
  shape.validate();

  const std::uint64_t base = rng();
  EvalReport out;
  out.lengths = lengths;
  out.n_tasks = static_cast<int>(tasks.size());
  out.n = params.n;
  out.depth = params.depth;
  out.gamma = tasks.front().gamma;

  const std::size_t n_len = lengths.size();
  for (std::size_t j = 0; j < n_len; ++j) {
    std::vector<double> per_task;
    per_task.reserve(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      Rng stream = make_rng(base, i * n_len + j);
      per_task.push_back(msve_point(params, tasks[i], lengths[j], stream, weighting));
    }
    const double mean = mean_of(per_task);
    out.msve_mean.push_back(mean);
    out.msve_stderr.push_back(stderr_of(per_task, mean));
  }
  return out;
}

std::string eval_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "context_length,msve_mean,msve_stderr,n_tasks,seed\n";
  for (std::size_t j = 0; j < report.lengths.size(); ++j) {
    os << report.lengths[j] << ',' << format_double(report.msve_mean[j]) << ','
       << format_double(report.msve_stderr[j]) << ',' << report.n_tasks << ',' << report.seed << '\n';
  }
  return os.str();
}

Json to_json(const EvalReport& report) {
  return Json{{"checkpoint_id", report.checkpoint_id},
              {"seed", report.seed},
              {"n", report.n},
              {"depth", report.depth},
              {"gamma", report.gamma},
              {"n_tasks", report.n_tasks},
              {"lengths", report.lengths},
              {"msve_mean", report.msve_mean},
              {"msve_stderr", report.msve_stderr}};
}

WeightReport weight_report(std::span<const TransformerParams> trials) {
  require(!trials.empty(), "weight_report: no checkpoints");
  const int n = trials.front().n;
  WeightReport out;
  out.n = n;
  const int d = 2 * n + 1;
  Matrix sum_P = Matrix::Zero(d, d);
  Matrix sum_Q = Matrix::Zero(d, d);
  for (const TransformerParams& t : trials) {
    require(t.n == n, "weight_report: checkpoints disagree on n");
    require(t.mode == ParamMode::looped && t.layers.size() == 1,
            "weight_report: expects looped params with one shared layer");
    const Layer& layer = t.layers.front();
    const double sign = alignment_sign(layer, n);
    out.trial_P.push_back(normalized(sign * layer.P));
    out.trial_Q.push_back(normalized(sign * layer.Q));
    sum_P += out.trial_P.back();
    sum_Q += out.trial_Q.back();
  }
  out.mean_P = normalized(sum_P);
  out.mean_Q = normalized(sum_Q);

  const Pattern pat = td_pattern(n);
  out.corr_P = pearson(out.mean_P, pat.P);
  out.corr_Q = pearson(out.mean_Q, pat.Q);
  out.off_pattern_P = off_support_fraction(out.mean_P, pat.P);
  out.off_pattern_Q = off_support_fraction(out.mean_Q, pat.Q);
  return out;
}

WeightReport weight_report(std::span<const Checkpoint> checkpoints) {
  std::vector<TransformerParams> params;
  params.reserve(checkpoints.size());
  for (const Checkpoint& c : checkpoints) params.push_back(c.params);
  return weight_report(std::span<const TransformerParams>(params));
}

double max_mean_gap(const WeightReport& a, const WeightReport& b) {
  require(a.n == b.n, "max_mean_gap: reports disagree on n");
  return std::max((a.mean_P - b.mean_P).cwiseAbs().maxCoeff(),
                  (a.mean_Q - b.mean_Q).cwiseAbs().maxCoeff());
}

Json to_json(const WeightReport& report) {
  Json trials = Json::array();
  for (std::size_t t = 0; t < report.trial_P.size(); ++t) {
    trials.push_back({{"P", matrix_to_json(report.trial_P[t])}, {"Q", matrix_to_json(report.trial_Q[t])}});
  }
  return Json{{"n", report.n},
              {"trials", report.trial_P.size()},
              {"mean_P", matrix_to_json(report.mean_P)},
              {"mean_Q", matrix_to_json(report.mean_Q)},
              {"corr_P", report.corr_P},
              {"corr_Q", report.corr_Q},
              {"off_pattern_P", report.off_pattern_P},
              {"off_pattern_Q", report.off_pattern_Q},
              {"per_trial", std::move(trials)}};
}

std::string weight_csv(const WeightReport& report) {
  std::ostringstream os;
  os << "matrix,row,col,mean";
  for (std::size_t t = 0; t < report.trial_P.size(); ++t) os << ",trial_" << t;
  os << '\n';
  auto emit = [&](const char* name, const Matrix& mean, const std::vector<Matrix>& per_trial) {
    for (Eigen::Index i = 0; i < mean.rows(); ++i) {
      for (Eigen::Index j = 0; j < mean.cols(); ++j) {
        os << name << ',' << i << ',' << j << ',' << format_double(mean(i, j));
        for (const Matrix& m : per_trial) os << ',' << format_double(m(i, j));
        os << '\n';
      }
    }
  };
  emit("P", report.mean_P, report.trial_P);
  emit("Q", report.mean_Q, report.trial_Q);
  return os.str();
}

Vector linear_td_baseline(const Trajectory& traj, int n, double alpha, double gamma, int steps) {
  require(n >= 1, "linear_td_baseline: n must be >= 1");
  require(steps >= 0 && static_cast<std::size_t>(steps) <= traj.rewards.size() &&
              static_cast<std::size_t>(steps) < traj.states.size(),
          "linear_td_baseline: steps exceed the trajectory");
  Vector w = Vector::Zero(n);
  for (int t = 0; t < steps; ++t) {
    const State s = traj.states[static_cast<std::size_t>(t)];
    const State next = traj.states[static_cast<std::size_t>(t) + 1];
    const double delta = traj.rewards[static_cast<std::size_t>(t)] + gamma * w(next) - w(s);
    w(s) += alpha * delta;
  }
  return w;
}

Vector linear_mc_baseline(const Mrp& mrp, double alpha, int tau, int steps, Rng& rng) {
  require(steps >= 1, "linear_mc_baseline: steps must be >= 1");
  const Trajectory traj = unroll(mrp, steps - 1, rng);
  Vector w = Vector::Zero(mrp.n);
  for (const State s : traj.states) {
    const double g = truncated_return(mrp, s, tau, rng);
    w(s) += alpha * (g - w(s));
  }
  return w;
}

std::vector<TrialResult> train_trials(const TrainConfig& config, int trials,
                                      const TrialProgressSink& sink) {
  require(trials >= 1, "train_trials: trials must be >= 1");
  config.validate();
  std::vector<TrialResult> out;
  out.reserve(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    TrialResult r;
    r.trial = t;
    r.seed = mix_seed(config.seed, static_cast<std::uint64_t>(t));
    Rng rng{r.seed};
    ProgressSink per_trial;
    if (sink) per_trial = [&sink, t](const ProgressRecord& rec) { sink(t, rec); };
    try {
      r.checkpoints = train(config, rng, per_trial);
    } catch (const DivergenceError& e) {
      r.error = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ictd
