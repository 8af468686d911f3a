#pragma once

#include "ictd/common.hpp"
#include "ictd/io.hpp"
#include "ictd/mrp.hpp"

#include <string_view>
#include <vector>

namespace ictd {

/// Embedding matrix fed to the linear Transformer.
///
/// Columns [0, m) are context; the remaining columns are queries of the form
/// [phi_q; 0; 0]. The attention mask is diag(context_weight, 0, ..., 0), so
/// queries read from the context but never write into it. Because of that,
/// several queries can share one prompt and each gets the value it would get
/// alone.
struct Prompt {
  Matrix z;
  int n = 0;
  int m = 0;
  Vector context_weight;

  int queries() const { return static_cast<int>(z.cols()) - m; }
  int dim() const { return 2 * n + 1; }
};

/// How a sampled context is weighted in the attention mask.
///
/// unit: every column weighs 1 (the plain batched TD sum over the context).
/// visit_count: column t weighs 1 / (visits of S_t in the context), which turns
/// the context into the enumerated prompt of the empirical MRP. Both agree when
/// every state appears once.
enum class ContextWeighting { unit, visit_count };

ContextWeighting parse_weighting(std::string_view name);
std::string_view weighting_name(ContextWeighting w);

enum class ParamMode { looped, per_layer };

struct Layer {
  Matrix P;
  Matrix Q;
};

/// The (A, u) coordinates of a layer with P = [[0, 0], [u, 1]] and
/// Q = [[A, 0], [0, 0]].
struct SparseLayer {
  Matrix A;
  RowVector u;
};

struct TransformerParams {
  int n = 0;
  int depth = 0;
  ParamMode mode = ParamMode::looped;
  /// One entry when looped, `depth` entries when per_layer.
  std::vector<Layer> layers;
  /// Set when every layer has the sparse (A, u) structure; gradients are then
  /// reported in (A, u) coordinates.
  bool sparse = false;

  int dim() const { return 2 * n + 1; }
  const Layer& layer_at(int l) const {
    return mode == ParamMode::looped ? layers.front() : layers.at(static_cast<std::size_t>(l));
  }
  void validate() const;
};

struct TdIterates {
  std::vector<Vector> w;  // w_0 .. w_L
};

bool has_sparse_structure(const Layer& layer, int n);
SparseLayer sparse_view(const Layer& layer, int n);
Layer dense_layer(const SparseLayer& s, int n);

/// Looped params whose single layer executes one batched TD step.
TransformerParams td_params(int n, int depth);

TransformerParams sparse_params(int n, int depth, ParamMode mode, std::vector<SparseLayer> layers);

/// Per-layer copy of looped params with every layer equal to the shared one.
TransformerParams unroll_layers(const TransformerParams& looped);

/// Enumerated-state prompt with expected discounted next features.
Prompt prompt_expected(const Mrp& mrp, State query);

/// Same context as prompt_expected with one query column per state, in order.
Prompt prompt_expected_all(const Mrp& mrp);

/// Context from the first m transitions of `traj`.
Prompt prompt_sampled(const Trajectory& traj, int m, State query, double gamma, int n,
                      ContextWeighting weighting = ContextWeighting::unit);

/// Sampled context with one query column per state, in order.
Prompt prompt_sampled_all(const Trajectory& traj, int m, double gamma, int n,
                          ContextWeighting weighting = ContextWeighting::unit);

/// z + P z M (z^T Q z) with M = diag(context_weight, 0...).
Matrix attention_layer(const Matrix& z, const Vector& context_weight, const Matrix& P,
                       const Matrix& Q);

struct ForwardResult {
  /// -Z_L(2n, column) for every query column.
  Vector values;
  /// Z_0 .. Z_L, un-negated, when requested.
  std::vector<Matrix> trace;

  double value() const { return values(0); }
};

/// Runs params.depth layers. Throws DivergenceError on a non-finite embedding.
ForwardResult forward(const Prompt& prompt, const TransformerParams& params, bool trace = false);

/// w_0 = 0, w_{l+1} = r + gamma P w_l.
TdIterates td_iterates(const Mrp& mrp, int depth);

Json to_json(const TransformerParams& params);
TransformerParams params_from_json(const Json& j);

}  // namespace ictd
