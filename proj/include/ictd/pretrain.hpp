#pragma once

#include "ictd/grad.hpp"
#include "ictd/io.hpp"
#include "ictd/lintf.hpp"
#include "ictd/mrp.hpp"

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

namespace ictd {

enum class Algorithm { td, mc };
enum class Optimizer { adam, sgd };

Algorithm parse_algorithm(std::string_view name);
std::string_view algorithm_name(Algorithm a);
Optimizer parse_optimizer(std::string_view name);
std::string_view optimizer_name(Optimizer o);

struct TrainConfig {
  Algorithm algorithm = Algorithm::td;
  int n_states = 5;
  int depth = 30;
  double gamma = 0.9;
  int batch = 64;
  int n_tasks = 20000;
  double learning_rate = 1e-3;
  int mc_horizon = 200;
  MrpFamily family = MrpFamily::boyan;
  double loop_threshold = kDefaultLoopThreshold;
  double init_scale = 1e-2;
  std::uint64_t seed = 0;
  /// Keep a checkpoint every this many tasks; 0 keeps only the first and last.
  int checkpoint_every = 0;
  Optimizer optimizer = Optimizer::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

Json to_json(const TrainConfig& c);
/// Missing keys keep their defaults.
TrainConfig train_config_from_json(const Json& j);

struct AdamState {
  ParamGradient m;
  ParamGradient v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros_like(const TransformerParams& params, double beta1 = 0.9,
                              double beta2 = 0.999, double eps = 1e-8);
};

/// Looped, full (2n+1)x(2n+1) P and Q with iid N(0, init_scale^2) entries,
/// P drawn before Q, both row-major.
TransformerParams init_params(int n, int depth, double init_scale, Rng& rng);

/// One bias-corrected Adam step that moves params along +direction.
/// Throws DivergenceError if the result is not finite.
void adam_step(AdamState& state, TransformerParams& params, const ParamGradient& direction,
               double lr);

/// params += lr * direction.
void sgd_step(TransformerParams& params, const ParamGradient& direction, double lr);

/// Frobenius norm over every stored parameter.
double param_norm(const TransformerParams& params);

/// Aggregated update direction for one task, already divided by b.
struct TaskUpdate {
  ParamGradient direction;
  /// delta_i for TD, G(S_i) - TF(S_i) for MC, one per sample.
  Vector errors;
};

/// zeta / b of the multi-task TD loop. The bootstrapped target
/// TF(Z_0(S_{i+1})) is evaluated with `target` and treated as a constant;
/// pass the same params for the usual semi-gradient.
TaskUpdate td_update(const Mrp& mrp, const Trajectory& traj, int batch,
                     const TransformerParams& params, const TransformerParams& target);

/// zeta / b of the multi-task MC loop with precomputed returns, one per
/// S_0..S_{b-1}.
TaskUpdate mc_update(const Mrp& mrp, const Trajectory& traj, const std::vector<double>& returns,
                     const TransformerParams& params);

struct Checkpoint {
  TransformerParams params;
  TrainConfig config;
  std::int64_t tasks_seen = 0;
  /// Mean |error| over the tasks since the previous checkpoint (0 for the
  /// initial one).
  double mean_abs_error = 0.0;
};

Json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const Json& j);

struct ProgressRecord {
  std::int64_t task_index = 0;
  double mean_abs_error = 0.0;
  double param_norm = 0.0;
};

using ProgressSink = std::function<void(const ProgressRecord&)>;

/// Runs config.n_tasks tasks of the selected algorithm. Parameters are drawn
/// from `rng` first, unless `initial` is given; tasks follow. The returned
/// sequence starts with the initial checkpoint and ends with the final one.
/// A non-finite update throws DivergenceError naming the task index.
std::vector<Checkpoint> train(const TrainConfig& config, Rng& rng, const ProgressSink& sink = {},
                              const TransformerParams* initial = nullptr);

std::vector<Checkpoint> train_td(const TrainConfig& config, Rng& rng, const ProgressSink& sink = {});
std::vector<Checkpoint> train_mc(const TrainConfig& config, Rng& rng, const ProgressSink& sink = {});

/// CSV header and row of the training log.
std::string progress_csv_header();
std::string progress_csv_row(const ProgressRecord& r);

}  // namespace ictd
