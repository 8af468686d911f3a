#include "ictd/pretrain.hpp"

#include <cmath>
#include <sstream>

namespace ictd {

Algorithm parse_algorithm(std::string_view name) {
  if (name == "td") return Algorithm::td;
  if (name == "mc") return Algorithm::mc;
  throw Error("unknown algorithm '" + std::string(name) + "' (expected td or mc)");
}

std::string_view algorithm_name(Algorithm a) { return a == Algorithm::td ? "td" : "mc"; }

Optimizer parse_optimizer(std::string_view name) {
  if (name == "adam") return Optimizer::adam;
  if (name == "sgd") return Optimizer::sgd;
  throw Error("unknown optimizer '" + std::string(name) + "' (expected adam or sgd)");
}

std::string_view optimizer_name(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

void TrainConfig::validate() const {
  require(n_states >= 1, "TrainConfig: n_states must be >= 1");
  require(family != MrpFamily::boyan || n_states >= 3, "TrainConfig: Boyan chains need n_states >= 3");
  require(family != MrpFamily::loop || n_states >= 2, "TrainConfig: Loop chains need n_states >= 2");
  require(depth >= 0, "TrainConfig: depth must be >= 0");
  require(gamma >= 0.0 && gamma < 1.0, "TrainConfig: gamma must be in [0, 1)");
  require(batch >= 1, "TrainConfig: batch must be >= 1");
  require(n_tasks >= 0, "TrainConfig: n_tasks must be >= 0");
  require(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
  require(mc_horizon >= 1, "TrainConfig: mc_horizon must be >= 1");
  require(init_scale > 0.0, "TrainConfig: init_scale must be > 0");
  require(checkpoint_every >= 0, "TrainConfig: checkpoint_every must be >= 0");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          "TrainConfig: Adam betas must be in [0, 1)");
  require(adam_eps > 0.0, "TrainConfig: adam_eps must be > 0");
}

Json to_json(const TrainConfig& c) {
  return Json{{"algorithm", algorithm_name(c.algorithm)},
              {"n_states", c.n_states},
              {"depth", c.depth},
              {"gamma", c.gamma},
              {"batch", c.batch},
              {"n_tasks", c.n_tasks},
              {"learning_rate", c.learning_rate},
              {"mc_horizon", c.mc_horizon},
              {"family", family_name(c.family)},
              {"loop_threshold", c.loop_threshold},
              {"init_scale", c.init_scale},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every},
              {"optimizer", optimizer_name(c.optimizer)},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  try {
    const auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("algorithm")) c.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
    if (j.contains("family")) c.family = parse_family(j.at("family").get<std::string>());
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    take("n_states", c.n_states);
    take("depth", c.depth);
    take("gamma", c.gamma);
    take("batch", c.batch);
    take("n_tasks", c.n_tasks);
    take("learning_rate", c.learning_rate);
    take("mc_horizon", c.mc_horizon);
    take("loop_threshold", c.loop_threshold);
    take("init_scale", c.init_scale);
    take("seed", c.seed);
    take("checkpoint_every", c.checkpoint_every);
    take("adam_beta1", c.adam_beta1);
    take("adam_beta2", c.adam_beta2);
    take("adam_eps", c.adam_eps);
  } catch (const Json::exception& e) {
    throw Error(std::string("train_config_from_json: ") + e.what());
  }
  c.validate();
  return c;
}

AdamState AdamState::zeros_like(const TransformerParams& params, double beta1, double beta2,
                                double eps) {
  AdamState s;
  s.m = ParamGradient::zeros_like(params);
  s.v = ParamGradient::zeros_like(params);
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

TransformerParams init_params(int n, int depth, double init_scale, Rng& rng) {
  require(init_scale > 0.0, "init_params: init_scale must be > 0");
  require(n >= 1 && depth >= 0, "init_params: need n >= 1 and depth >= 0");
  TransformerParams p;
  p.n = n;
  p.depth = depth;
  p.mode = ParamMode::looped;
  const int d = 2 * n + 1;
  Layer layer{Matrix(d, d), Matrix(d, d)};
  for (Matrix* m : {&layer.P, &layer.Q})
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) (*m)(r, c) = init_scale * standard_normal(rng);
  p.layers.push_back(std::move(layer));
  return p;
}

namespace {

void check_finite(const TransformerParams& params, const char* where) {
  for (const Layer& l : params.layers)
    if (!l.P.allFinite() || !l.Q.allFinite()) throw DivergenceError(std::string(where) + ": non-finite parameters");
}

void adam_matrix(Matrix& theta, Matrix& m, Matrix& v, const Matrix& g, const AdamState& s, double lr) {
  m = s.beta1 * m + (1.0 - s.beta1) * g;
  v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  theta.array() += lr * (m.array() / c1) / ((v.array() / c2).sqrt() + s.eps);
}

}  // namespace

void adam_step(AdamState& state, TransformerParams& params, const ParamGradient& direction, double lr) {
  require(direction.layers.size() == params.layers.size() && state.m.layers.size() == params.layers.size(),
          "adam_step: shape mismatch");
  ++state.step;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    adam_matrix(params.layers[i].P, state.m.layers[i].P, state.v.layers[i].P, direction.layers[i].P, state, lr);
    adam_matrix(params.layers[i].Q, state.m.layers[i].Q, state.v.layers[i].Q, direction.layers[i].Q, state, lr);
  }
  params.sparse = false;
  check_finite(params, "adam_step");
}

void sgd_step(TransformerParams& params, const ParamGradient& direction, double lr) {
  require(direction.layers.size() == params.layers.size(), "sgd_step: shape mismatch");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    params.layers[i].P += lr * direction.layers[i].P;
    params.layers[i].Q += lr * direction.layers[i].Q;
  }
  params.sparse = false;
  check_finite(params, "sgd_step");
}

double param_norm(const TransformerParams& params) {
  double sq = 0.0;
  for (const Layer& l : params.layers) sq += l.P.squaredNorm() + l.Q.squaredNorm();
  return std::sqrt(sq);
}

// Every sample shares the expected-construction context, so all n query
// columns go through one forward pass and the per-sample gradients collapse
// into one weighted backward pass: sum_i e_i grad TF(S_i) = grad sum_s c_s TF(s)
// with c_s the sum of e_i over samples with S_i = s.
TaskUpdate td_update(const Mrp& mrp, const Trajectory& traj, int batch, const TransformerParams& params,
                     const TransformerParams& target) {
  require(batch >= 1 && traj.states.size() >= static_cast<std::size_t>(batch) + 1,
          "td_update: trajectory needs batch + 1 states");
  const Prompt all = prompt_expected_all(mrp);
  const Vector next_values = forward(all, target).values;
  const Vector values = forward(all, params).values;
  TaskUpdate out;
  out.errors.resize(batch);
  Vector weight = Vector::Zero(mrp.n);
  for (int i = 0; i < batch; ++i) {
    const State s = traj.states[static_cast<std::size_t>(i)];
    const State s1 = traj.states[static_cast<std::size_t>(i) + 1];
    const double delta = traj.rewards[static_cast<std::size_t>(i)] + mrp.gamma * next_values(s1) - values(s);
    out.errors(i) = delta;
    weight(s) += delta;
  }
  out.direction = grad_weighted(all, params, weight / static_cast<double>(batch)).grad;
  return out;
}

TaskUpdate mc_update(const Mrp& mrp, const Trajectory& traj, const std::vector<double>& returns,
                     const TransformerParams& params) {
  const auto batch = static_cast<int>(returns.size());
  require(batch >= 1 && traj.states.size() >= returns.size(), "mc_update: one return per sampled state");
  const Prompt all = prompt_expected_all(mrp);
  const Vector values = forward(all, params).values;
  TaskUpdate out;
  out.errors.resize(batch);
  Vector weight = Vector::Zero(mrp.n);
  for (int i = 0; i < batch; ++i) {
    const State s = traj.states[static_cast<std::size_t>(i)];
    const double err = returns[static_cast<std::size_t>(i)] - values(s);
    out.errors(i) = err;
    weight(s) += err;
  }
  out.direction = grad_weighted(all, params, weight / static_cast<double>(batch)).grad;
  return out;
}

Json to_json(const Checkpoint& c) {
  return Json{{"params", to_json(c.params)},
              {"config", to_json(c.config)},
              {"tasks_seen", c.tasks_seen},
              {"mean_abs_error", c.mean_abs_error}};
}

Checkpoint checkpoint_from_json(const Json& j) {
  Checkpoint c;
  try {
    c.params = params_from_json(j.at("params"));
    c.config = train_config_from_json(j.at("config"));
    c.tasks_seen = j.at("tasks_seen").get<std::int64_t>();
    c.mean_abs_error = j.value("mean_abs_error", 0.0);
  } catch (const Json::exception& e) {
    throw Error(std::string("checkpoint_from_json: ") + e.what());
  }
  return c;
}

std::vector<Checkpoint> train(const TrainConfig& config, Rng& rng, const ProgressSink& sink,
                              const TransformerParams* initial) {
  config.validate();
  TransformerParams params =
      initial ? *initial : init_params(config.n_states, config.depth, config.init_scale, rng);
  require(params.n == config.n_states && params.depth == config.depth, "train: initial params do not match config");
  AdamState adam = AdamState::zeros_like(params, config.adam_beta1, config.adam_beta2, config.adam_eps);

  std::vector<Checkpoint> out{{params, config, 0, 0.0}};
  double window_sum = 0.0;
  std::int64_t window_tasks = 0;

  for (int k = 0; k < config.n_tasks; ++k) {
    try {
      const Mrp mrp = generate_mrp(config.family, config.n_states, config.gamma, rng, config.loop_threshold);
      TaskUpdate update;
      if (config.algorithm == Algorithm::td) {
        const Trajectory traj = unroll(mrp, config.batch, rng);
        update = td_update(mrp, traj, config.batch, params, params);
      } else {
        const Trajectory traj = unroll(mrp, config.batch - 1, rng);
        std::vector<double> returns;
        returns.reserve(static_cast<std::size_t>(config.batch));
        for (int i = 0; i < config.batch; ++i)
          returns.push_back(truncated_return(mrp, traj.states[static_cast<std::size_t>(i)], config.mc_horizon, rng));
        update = mc_update(mrp, traj, returns, params);
      }
      if (config.optimizer == Optimizer::adam) {
        adam_step(adam, params, update.direction, config.learning_rate);
      } else {
        sgd_step(params, update.direction, config.learning_rate);
      }
      const double mae = update.errors.cwiseAbs().mean();
      window_sum += mae;
      ++window_tasks;
      if (sink) sink({k, mae, param_norm(params)});
    } catch (const DivergenceError& e) {
      throw DivergenceError("training diverged at task " + std::to_string(k) + ": " + e.what());
    }

    const bool last = k + 1 == config.n_tasks;
    const bool periodic = config.checkpoint_every > 0 && (k + 1) % config.checkpoint_every == 0;
    if (last || periodic) {
      out.push_back({params, config, k + 1, window_sum / static_cast<double>(window_tasks)});
      window_sum = 0.0;
      window_tasks = 0;
    }
  }
  return out;
}

std::vector<Checkpoint> train_td(const TrainConfig& config, Rng& rng, const ProgressSink& sink) {
  require(config.algorithm == Algorithm::td, "train_td: config.algorithm must be td");
  return train(config, rng, sink);
}

std::vector<Checkpoint> train_mc(const TrainConfig& config, Rng& rng, const ProgressSink& sink) {
  require(config.algorithm == Algorithm::mc, "train_mc: config.algorithm must be mc");
  return train(config, rng, sink);
}

std::string progress_csv_header() { return "task_index,mean_abs_error,param_norm\n"; }

std::string progress_csv_row(const ProgressRecord& r) {
  std::ostringstream os;
  os << r.task_index << ',' << format_double(r.mean_abs_error) << ',' << format_double(r.param_norm) << '\n';
  return os.str();
}

}  // namespace ictd
