#pragma once

#include "ictd/grad.hpp"
#include "ictd/lintf.hpp"
#include "ictd/mrp.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ictd {

/// Per-task constants of the gradient and decay bounds.
struct BoundConstants {
  double beta = 0.0;   // n (1+gamma)^2 ||v||_inf
  double zeta = 0.0;   // (1+gamma)^2
  double eta = 0.0;    // 1+gamma
  double nu = 0.0;     // 2n (beta + zeta)
  double xi = 0.0;     // 2n eta
  double c_r = 0.0;    // ||r||_inf
  double c_v = 0.0;    // ||v||_inf
};

BoundConstants bound_constants(const Mrp& mrp);

/// (L^2 + L)/2 nu + L xi.
double gradient_bound(const BoundConstants& c, int depth);

struct BoundRecord {
  std::string check;
  int depth = 0;
  double gamma = 0.0;
  double lhs = 0.0;
  double bound = 0.0;
  double slack = 0.0;
};

struct BoundReport {
  std::vector<BoundRecord> records;

  /// slack = bound - lhs.
  void add(std::string check, int depth, double gamma, double lhs, double bound);
  void append(const BoundReport& other);
  /// Every slack >= -1e-9.
  bool pass() const;
  /// Keeps, for every (check, depth, gamma), the record with the smallest slack.
  BoundReport worst_per_depth() const;
};

inline constexpr double kSlackTolerance = 1e-9;

struct Theorem1Error {
  /// |TF_L(expected prompt, theta_TD) - v(s_q)|.
  double direct = 0.0;
  /// gamma^L |phi_q^T P^L v|.
  double closed_form = 0.0;
};

Theorem1Error theorem1_error(const Mrp& mrp, State query, int depth);

/// |r(s_q) + gamma sum_s' p(s'|s_q) TF_L(s') - TF_L(s_q)| at theta_TD.
double expected_td_error(const Mrp& mrp, State query, int depth);

/// |v(s_q) - TF_L(s_q)| at theta_TD.
double expected_mc_error(const Mrp& mrp, State query, int depth);

/// Per layer l <= depth of the theta_TD forward pass: the bottom context row
/// Y_l against both the commonly stated identity r^T - w_l^T and the
/// identity ((gamma P)^l r)^T that the recursion actually produces.
struct EmbeddingGaps {
  std::vector<double> stated;
  std::vector<double> corrected;
};

EmbeddingGaps embedding_identity_gaps(const Mrp& mrp, State query, int depth);

/// Per layer: |y_l^q| <= (1 + gamma^l) ||v||_inf, max_i |Y_l(i)| <= (gamma +
/// gamma^l) ||v||_inf, and Y_l = ((gamma P)^l r)^T within 1e-9.
BoundReport embedding_trace_check(const Mrp& mrp, State query, int depth);

/// ||(1/K) sum_tasks sum_{s_q} mu(s_q) E_{s'}[delta] grad TF_L(s_q)||_1, with
/// the gradient in (A, u) coordinates when params.sparse. Depth comes from
/// params.
double neu_td(const TransformerParams& params, std::span<const Mrp> tasks);

/// As neu_td with the error v(s_q) - TF_L(s_q).
double neu_mc(const TransformerParams& params, std::span<const Mrp> tasks);

/// The exact expected update whose norm neu_td reports.
ParamGradient expected_td_update(const TransformerParams& params, const Mrp& mrp);
ParamGradient expected_mc_update(const TransformerParams& params, const Mrp& mrp);

enum class Check { theorem1, lemma1, lemma2, lemma3, lemma4, theorem2, corollary1 };

Check parse_check(std::string_view name);
std::string_view check_name(Check c);
const std::vector<Check>& all_checks();

struct SweepResult {
  BoundReport report;
  /// Measured value per depth for theorem2 / corollary1 (J or J'); the
  /// largest lhs over tasks and states for the other checks.
  std::vector<int> depths;
  std::vector<double> measured;
  std::vector<double> bounds;
};

/// Evaluates `check` at theta_TD over every depth in `depths`, every task
/// and, for the per-state checks, every state. theorem2 / corollary1 also
/// add a "decay" record comparing the largest depth against the smallest when
/// the bound itself is smaller there.
SweepResult decay_sweep(Check check, std::span<const int> depths, std::span<const Mrp> tasks);

/// check,L,gamma,lhs,bound,slack with one row per (check, depth, gamma),
/// keeping the tightest record.
std::string bound_csv(const BoundReport& report);

}  // namespace ictd
