#include "ictd/grad.hpp"

namespace ictd {

SparseLayer ParamGradient::sparse(std::size_t i) const { return sparse_view(layers.at(i), n); }

ParamGradient ParamGradient::zeros_like(const TransformerParams& params) {
  ParamGradient g;
  g.n = params.n;
  g.mode = params.mode;
  const auto d = params.dim();
  g.layers.assign(params.layers.size(), Layer{Matrix::Zero(d, d), Matrix::Zero(d, d)});
  return g;
}

ParamGradient& ParamGradient::operator+=(const ParamGradient& other) {
  require(other.layers.size() == layers.size(), "ParamGradient: shape mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].P += other.layers[i].P;
    layers[i].Q += other.layers[i].Q;
  }
  return *this;
}

ParamGradient& ParamGradient::operator*=(double s) {
  for (Layer& layer : layers) {
    layer.P *= s;
    layer.Q *= s;
  }
  return *this;
}

Vector flatten(const ParamGradient& g, bool sparse) {
  std::vector<double> out;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (sparse) {
      const SparseLayer s = g.sparse(i);
      for (Eigen::Index r = 0; r < s.A.rows(); ++r)
        for (Eigen::Index c = 0; c < s.A.cols(); ++c) out.push_back(s.A(r, c));
      for (Eigen::Index c = 0; c < s.u.size(); ++c) out.push_back(s.u(c));
    } else {
      for (const Matrix* m : {&g.layers[i].P, &g.layers[i].Q})
        for (Eigen::Index r = 0; r < m->rows(); ++r)
          for (Eigen::Index c = 0; c < m->cols(); ++c) out.push_back((*m)(r, c));
    }
  }
  return Eigen::Map<Vector>(out.data(), static_cast<Eigen::Index>(out.size()));
}

// Layer: out = z + P U with C = context columns of z, S = C^T (Q z),
// U = (C diag(w)) S. Given G = df/d(out):
//   dP += G U^T,  dU = P^T G,  dS = (C diag(w))^T dU,
//   dC = dU S^T diag(w) + (Q z) dS^T,  dQ += (C dS) z^T,
//   dz = G + [dC 0] + Q^T (C dS).
WeightedGradient grad_weighted(const Prompt& prompt, const TransformerParams& params,
                               const Vector& query_weight) {
  require(query_weight.size() == prompt.queries(), "grad_weighted: one weight per query column");
  ForwardResult fwd = forward(prompt, params, /*trace=*/true);

  WeightedGradient out{ParamGradient::zeros_like(params), fwd.values};
  const Vector& w = prompt.context_weight;
  const auto m = prompt.m;
  const int bottom = 2 * prompt.n;

  Matrix g = Matrix::Zero(prompt.z.rows(), prompt.z.cols());
  g.row(bottom).tail(prompt.queries()) = -query_weight.transpose();

  for (int l = params.depth - 1; l >= 0; --l) {
    const Layer& layer = params.layer_at(l);
    Layer& acc = out.grad.layers[params.mode == ParamMode::looped ? 0 : static_cast<std::size_t>(l)];
    const Matrix& z = fwd.trace[static_cast<std::size_t>(l)];
    const auto context = z.leftCols(m);
    const Matrix weighted = context * w.asDiagonal();
    const Matrix qz = layer.Q * z;
    const Matrix scores = context.transpose() * qz;
    const Matrix update = weighted * scores;

    acc.P.noalias() += g * update.transpose();
    const Matrix d_update = layer.P.transpose() * g;
    const Matrix d_scores = weighted.transpose() * d_update;
    const Matrix c_ds = context * d_scores;
    acc.Q.noalias() += c_ds * z.transpose();

    Matrix dz = g;
    dz.noalias() += layer.Q.transpose() * c_ds;
    dz.leftCols(m).noalias() += (d_update * scores.transpose()) * w.asDiagonal();
    dz.leftCols(m).noalias() += qz * d_scores.transpose();
    g = std::move(dz);
  }
  return out;
}

ParamGradient grad_output(const Prompt& prompt, const TransformerParams& params) {
  Vector weight = Vector::Zero(prompt.queries());
  weight(0) = 1.0;
  return grad_weighted(prompt, params, weight).grad;
}

ParamGradient finite_diff_grad(const Prompt& prompt, const TransformerParams& params, double h) {
  require(h > 0.0, "finite_diff_grad: step must be positive");
  ParamGradient g = ParamGradient::zeros_like(params);
  TransformerParams probe = params;
  // Perturbed params generally leave the sparse space.
  probe.sparse = false;
  const auto eval = [&] { return forward(prompt, probe).value(); };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      Matrix& target = which == 0 ? probe.layers[i].P : probe.layers[i].Q;
      Matrix& dst = which == 0 ? g.layers[i].P : g.layers[i].Q;
      for (Eigen::Index r = 0; r < target.rows(); ++r) {
        for (Eigen::Index c = 0; c < target.cols(); ++c) {
          const double saved = target(r, c);
          target(r, c) = saved + h;
          const double up = eval();
          target(r, c) = saved - h;
          const double down = eval();
          target(r, c) = saved;
          dst(r, c) = (up - down) / (2.0 * h);
        }
      }
    }
  }
  return g;
}

double grad_norm(const ParamGradient& g, bool sparse) { return flatten(g, sparse).cwiseAbs().sum(); }

}  // namespace ictd
