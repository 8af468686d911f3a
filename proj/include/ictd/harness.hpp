#pragma once

#include "ictd/lintf.hpp"
#include "ictd/mrp.hpp"
#include "ictd/pretrain.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ictd {

/// sum_s mu(s) (TF_L(s) - v(s))^2 with every query reading the context built
/// from the first m transitions of `traj`. Returns +inf when the forward pass
/// diverges.
double msve_on_trajectory(const TransformerParams& params, const Mrp& mrp, const Trajectory& traj,
                          int m, ContextWeighting weighting = ContextWeighting::visit_count);

/// Unrolls a fresh trajectory of m transitions and evaluates it as above.
double msve_point(const TransformerParams& params, const Mrp& mrp, int m, Rng& rng,
                  ContextWeighting weighting = ContextWeighting::visit_count);

/// Same error on the enumerated expected prompt.
double msve_expected(const TransformerParams& params, const Mrp& mrp);

struct EvalConfig {
  MrpFamily family = MrpFamily::boyan;
  int n_tasks = 10;
  std::vector<int> lengths = default_lengths();
  double gamma = 0.9;
  double loop_threshold = kDefaultLoopThreshold;
  ContextWeighting weighting = ContextWeighting::visit_count;

  /// 5, 10, ..., 100.
  static std::vector<int> default_lengths();
  void validate() const;
};

struct EvalReport {
  std::vector<int> lengths;
  std::vector<double> msve_mean;
  std::vector<double> msve_stderr;
  int n_tasks = 0;
  std::uint64_t seed = 0;
  std::string checkpoint_id;
  int n = 0;
  int depth = 0;
  double gamma = 0.0;

  /// MSVE at the last length over MSVE at the first.
  double end_to_start_ratio() const;
  /// Mean at the last length below the mean at the first.
  bool decreasing() const;
};

/// Draws config.n_tasks validation tasks from `rng`, then evaluates every
/// (task, length) pair on its own trajectory. Each pair gets an independent
/// stream derived from one seed drawn after the tasks.
EvalReport msve_curve(const TransformerParams& params, const EvalConfig& config, Rng& rng);

/// As above on given tasks.
EvalReport msve_curve(const TransformerParams& params, std::span<const Mrp> tasks,
                      const std::vector<int>& lengths, Rng& rng,
                      ContextWeighting weighting = ContextWeighting::visit_count);

/// context_length,msve_mean,msve_stderr,n_tasks,seed
std::string eval_csv(const EvalReport& report);
Json to_json(const EvalReport& report);

struct WeightReport {
  int n = 0;
  /// Sign-aligned and divided by their max-absolute entry.
  std::vector<Matrix> trial_P;
  std::vector<Matrix> trial_Q;
  /// Mean of the normalized trials, normalized again.
  Matrix mean_P;
  Matrix mean_Q;
  /// Pearson correlation of vec(mean) with vec(theta_TD).
  double corr_P = 0.0;
  double corr_Q = 0.0;
  /// Squared mass of the mean outside the support of theta_TD, as a fraction.
  double off_pattern_P = 0.0;
  double off_pattern_Q = 0.0;
};

/// Looped single-layer params only. A trial whose P(2n, 2n) is negative is
/// flipped to (-P, -Q) first; the output is unchanged by the flip.
WeightReport weight_report(std::span<const TransformerParams> trials);
WeightReport weight_report(std::span<const Checkpoint> checkpoints);

/// Largest entry-wise gap between the two mean matrices, over P and Q.
double max_mean_gap(const WeightReport& a, const WeightReport& b);

Json to_json(const WeightReport& report);
/// matrix,row,col,mean,trial_0,trial_1,...
std::string weight_csv(const WeightReport& report);

/// Tabular TD(0) over the first `steps` transitions, from w = 0.
Vector linear_td_baseline(const Trajectory& traj, int n, double alpha, double gamma, int steps);

/// Every-visit MC along one trajectory of `steps` states; the target for
/// S_t is a fresh truncated return of horizon tau.
Vector linear_mc_baseline(const Mrp& mrp, double alpha, int tau, int steps, Rng& rng);

struct TrialResult {
  int trial = 0;
  std::uint64_t seed = 0;
  /// Initial through final checkpoint; empty when the run diverged.
  std::vector<Checkpoint> checkpoints;
  std::string error;

  bool ok() const { return !checkpoints.empty(); }
  const Checkpoint& final() const { return checkpoints.back(); }
};

using TrialProgressSink = std::function<void(int trial, const ProgressRecord&)>;

/// Trains `trials` independent runs; trial t draws from make_rng(config.seed,
/// t). A diverged run is reported in its TrialResult and does not stop the
/// others.
std::vector<TrialResult> train_trials(const TrainConfig& config, int trials,
                                      const TrialProgressSink& sink = {});

}  // namespace ictd
