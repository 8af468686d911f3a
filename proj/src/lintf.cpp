#include "ictd/lintf.hpp"

#include <algorithm>
#include <cmath>

namespace ictd {

namespace {

void check_query(State q, int n) {
  if (q < 0 || q >= n) throw Error("prompt: query state " + std::to_string(q) + " out of range");
}

// Context columns of the enumerated prompt, with `queries` zero columns appended.
Matrix expected_context(const Mrp& mrp, int queries) {
  const int n = mrp.n;
  Matrix z = Matrix::Zero(2 * n + 1, n + queries);
  z.topLeftCorner(n, n).setIdentity();
  z.block(n, 0, n, n) = mrp.gamma * mrp.transition.transpose();
  z.block(2 * n, 0, 1, n) = mrp.reward.transpose();
  return z;
}

Prompt sampled_context(const Trajectory& traj, int m, double gamma, int n, int queries,
                       ContextWeighting weighting) {
  require(n >= 1, "prompt_sampled: n must be >= 1");
  require(m >= 0, "prompt_sampled: m must be >= 0");
  if (static_cast<int>(traj.states.size()) < m + 1 || static_cast<int>(traj.rewards.size()) < m) {
    throw Error("prompt_sampled: trajectory has " + std::to_string(traj.states.size()) +
                " states, need " + std::to_string(m + 1));
  }
  Prompt p;
  p.n = n;
  p.m = m;
  p.z = Matrix::Zero(2 * n + 1, m + queries);
  std::vector<int> visits(static_cast<std::size_t>(n), 0);
  for (int t = 0; t < m; ++t) {
    const State s = traj.states[static_cast<std::size_t>(t)];
    const State next = traj.states[static_cast<std::size_t>(t) + 1];
    check_query(s, n);
    check_query(next, n);
    p.z(s, t) = 1.0;
    p.z(n + next, t) = gamma;
    p.z(2 * n, t) = traj.rewards[static_cast<std::size_t>(t)];
    ++visits[static_cast<std::size_t>(s)];
  }
  p.context_weight = Vector::Ones(m);
  if (weighting == ContextWeighting::visit_count) {
    for (int t = 0; t < m; ++t) {
      p.context_weight(t) = 1.0 / visits[static_cast<std::size_t>(traj.states[static_cast<std::size_t>(t)])];
    }
  }
  return p;
}

}  // namespace

ContextWeighting parse_weighting(std::string_view name) {
  if (name == "unit") return ContextWeighting::unit;
  if (name == "visit_count") return ContextWeighting::visit_count;
  throw Error("unknown context weighting '" + std::string(name) + "' (expected unit or visit_count)");
}

std::string_view weighting_name(ContextWeighting w) {
  return w == ContextWeighting::unit ? "unit" : "visit_count";
}

void TransformerParams::validate() const {
  require(n >= 1, "TransformerParams: n must be >= 1");
  require(depth >= 0, "TransformerParams: depth must be >= 0");
  const std::size_t expected = mode == ParamMode::looped ? 1 : static_cast<std::size_t>(depth);
  require(layers.size() == expected,
          "TransformerParams: expected " + std::to_string(expected) + " stored layers, got " +
              std::to_string(layers.size()));
  for (const Layer& layer : layers) {
    require(layer.P.rows() == dim() && layer.P.cols() == dim() && layer.Q.rows() == dim() &&
                layer.Q.cols() == dim(),
            "TransformerParams: P and Q must be (2n+1) x (2n+1)");
    require(layer.P.allFinite() && layer.Q.allFinite(), "TransformerParams: non-finite entry");
    if (sparse) require(has_sparse_structure(layer, n), "TransformerParams: flagged sparse but not sparse");
  }
}

bool has_sparse_structure(const Layer& layer, int n) {
  const int d = 2 * n;
  return layer.P.topRows(d).isZero(0.0) && layer.P(d, d) == 1.0 && layer.Q.row(d).isZero(0.0) &&
         layer.Q.col(d).isZero(0.0);
}

SparseLayer sparse_view(const Layer& layer, int n) {
  const int d = 2 * n;
  return {layer.Q.topLeftCorner(d, d), layer.P.block(d, 0, 1, d)};
}

Layer dense_layer(const SparseLayer& s, int n) {
  const int d = 2 * n;
  require(s.A.rows() == d && s.A.cols() == d && s.u.size() == d, "dense_layer: A must be 2n x 2n and u 1 x 2n");
  Layer layer{Matrix::Zero(d + 1, d + 1), Matrix::Zero(d + 1, d + 1)};
  layer.P.block(d, 0, 1, d) = s.u;
  layer.P(d, d) = 1.0;
  layer.Q.topLeftCorner(d, d) = s.A;
  return layer;
}

TransformerParams td_params(int n, int depth) {
  require(n >= 1 && depth >= 0, "td_params: need n >= 1 and depth >= 0");
  SparseLayer s{Matrix::Zero(2 * n, 2 * n), RowVector::Zero(2 * n)};
  s.A.topLeftCorner(n, n) = -Matrix::Identity(n, n);
  s.A.topRightCorner(n, n) = Matrix::Identity(n, n);
  return sparse_params(n, depth, ParamMode::looped, {std::move(s)});
}

TransformerParams sparse_params(int n, int depth, ParamMode mode, std::vector<SparseLayer> layers) {
  TransformerParams params;
  params.n = n;
  params.depth = depth;
  params.mode = mode;
  params.sparse = true;
  for (const SparseLayer& s : layers) params.layers.push_back(dense_layer(s, n));
  params.validate();
  return params;
}

TransformerParams unroll_layers(const TransformerParams& looped) {
  require(looped.mode == ParamMode::looped, "unroll_layers: params are not looped");
  TransformerParams out = looped;
  out.mode = ParamMode::per_layer;
  out.layers.assign(static_cast<std::size_t>(looped.depth), looped.layers.front());
  return out;
}

Prompt prompt_expected(const Mrp& mrp, State query) {
  check_query(query, mrp.n);
  Prompt p{expected_context(mrp, 1), mrp.n, mrp.n, Vector::Ones(mrp.n)};
  p.z(query, mrp.n) = 1.0;
  return p;
}

Prompt prompt_expected_all(const Mrp& mrp) {
  Prompt p{expected_context(mrp, mrp.n), mrp.n, mrp.n, Vector::Ones(mrp.n)};
  p.z.block(0, mrp.n, mrp.n, mrp.n).setIdentity();
  return p;
}

Prompt prompt_sampled(const Trajectory& traj, int m, State query, double gamma, int n,
                      ContextWeighting weighting) {
  check_query(query, n);
  Prompt p = sampled_context(traj, m, gamma, n, 1, weighting);
  p.z(query, m) = 1.0;
  return p;
}

Prompt prompt_sampled_all(const Trajectory& traj, int m, double gamma, int n,
                          ContextWeighting weighting) {
  Prompt p = sampled_context(traj, m, gamma, n, n, weighting);
  p.z.block(0, m, n, n).setIdentity();
  return p;
}

Matrix attention_layer(const Matrix& z, const Vector& context_weight, const Matrix& P,
                       const Matrix& Q) {
  const auto d = z.rows();
  const auto m = context_weight.size();
  if (P.rows() != d || P.cols() != d || Q.rows() != d || Q.cols() != d || m > z.cols()) {
    throw Error("attention_layer: shape mismatch");
  }
  const auto context = z.leftCols(m);
  const Matrix scores = context.transpose() * (Q * z);  // rows of z^T Q z that survive the mask
  return z + P * ((context * context_weight.asDiagonal()) * scores);
}

ForwardResult forward(const Prompt& prompt, const TransformerParams& params, bool trace) {
  if (prompt.n != params.n || prompt.z.rows() != params.dim()) {
    throw Error("forward: prompt has n=" + std::to_string(prompt.n) + ", params have n=" +
                std::to_string(params.n));
  }
  require(prompt.queries() >= 1, "forward: prompt has no query column");
  ForwardResult out;
  Matrix z = prompt.z;
  if (trace) out.trace.push_back(z);
  for (int l = 0; l < params.depth; ++l) {
    const Layer& layer = params.layer_at(l);
    z = attention_layer(z, prompt.context_weight, layer.P, layer.Q);
    if (!z.allFinite()) {
      throw DivergenceError("forward: non-finite embedding after layer " + std::to_string(l + 1));
    }
    if (trace) out.trace.push_back(z);
  }
  const int bottom = 2 * prompt.n;
  out.values = -z.row(bottom).tail(prompt.queries()).transpose();
  return out;
}

TdIterates td_iterates(const Mrp& mrp, int depth) {
  require(depth >= 0, "td_iterates: depth must be >= 0");
  TdIterates it;
  it.w.reserve(static_cast<std::size_t>(depth) + 1);
  it.w.push_back(Vector::Zero(mrp.n));
  for (int l = 0; l < depth; ++l) {
    it.w.push_back(mrp.reward + mrp.gamma * (mrp.transition * it.w.back()));
  }
  return it;
}

Json to_json(const TransformerParams& params) {
  Json layers = Json::array();
  for (const Layer& layer : params.layers) {
    layers.push_back(Json{{"P", matrix_to_json(layer.P)}, {"Q", matrix_to_json(layer.Q)}});
  }
  return Json{{"n", params.n},
              {"depth", params.depth},
              {"mode", params.mode == ParamMode::looped ? "looped" : "per_layer"},
              {"layers", std::move(layers)}};
}

TransformerParams params_from_json(const Json& j) {
  TransformerParams params;
  try {
    params.n = j.at("n").get<int>();
    params.depth = j.at("depth").get<int>();
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "looped") {
      params.mode = ParamMode::looped;
    } else if (mode == "per_layer") {
      params.mode = ParamMode::per_layer;
    } else {
      throw Error("params_from_json: unknown mode '" + mode + "'");
    }
    for (const Json& layer : j.at("layers")) {
      params.layers.push_back({matrix_from_json(layer.at("P")), matrix_from_json(layer.at("Q"))});
    }
  } catch (const Json::exception& e) {
    throw Error(std::string("params_from_json: ") + e.what());
  }
  params.validate();
  params.sparse = std::all_of(params.layers.begin(), params.layers.end(),
                              [&](const Layer& l) { return has_sparse_structure(l, params.n); });
  return params;
}

}  // namespace ictd
