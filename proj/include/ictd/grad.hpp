#pragma once

#include "ictd/lintf.hpp"

#include <vector>

namespace ictd {

/// d(output)/d(params), stored like TransformerParams: one (dP, dQ) pair per
/// stored layer. In looped mode the single pair sums the contributions of
/// every application of the shared layer.
struct ParamGradient {
  int n = 0;
  ParamMode mode = ParamMode::looped;
  std::vector<Layer> layers;

  /// dA = dQ[0:2n, 0:2n], du = dP[2n, 0:2n] of stored layer i.
  SparseLayer sparse(std::size_t i = 0) const;

  static ParamGradient zeros_like(const TransformerParams& params);
  ParamGradient& operator+=(const ParamGradient& other);
  ParamGradient& operator*=(double s);
};

/// Concatenated gradient. Sparse order: per stored layer, vec(dA) row-major
/// then du. Dense order: per stored layer, vec(dP) row-major then vec(dQ)
/// row-major.
Vector flatten(const ParamGradient& g, bool sparse);

struct WeightedGradient {
  ParamGradient grad;
  /// Forward values of every query column.
  Vector values;
};

/// Gradient of sum_j query_weight(j) * TF_L(column j) by reverse accumulation
/// through the layer recursion.
WeightedGradient grad_weighted(const Prompt& prompt, const TransformerParams& params,
                               const Vector& query_weight);

/// Gradient of the output for the first query column.
ParamGradient grad_output(const Prompt& prompt, const TransformerParams& params);

/// Central differences over every stored entry of P and Q.
ParamGradient finite_diff_grad(const Prompt& prompt, const TransformerParams& params,
                               double h = 1e-5);

/// Entry-wise L1 norm, over the (A, u) coordinates when `sparse`.
double grad_norm(const ParamGradient& g, bool sparse);

}  // namespace ictd
