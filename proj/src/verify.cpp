#include "ictd/verify.hpp"

#include "ictd/io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

namespace ictd {

BoundConstants bound_constants(const Mrp& mrp) {
  BoundConstants c;
  const double n = mrp.n;
  const double g1 = 1.0 + mrp.gamma;
  c.c_r = mrp.reward.cwiseAbs().maxCoeff();
  c.c_v = solve_value(mrp).cwiseAbs().maxCoeff();
  c.beta = n * g1 * g1 * c.c_v;
  c.zeta = g1 * g1;
  c.eta = g1;
  c.nu = 2.0 * n * (c.beta + c.zeta);
  c.xi = 2.0 * n * c.eta;
  return c;
}

double gradient_bound(const BoundConstants& c, int depth) {
  const double l = depth;
  return (l * l + l) / 2.0 * c.nu + l * c.xi;
}

void BoundReport::add(std::string check, int depth, double gamma, double lhs, double bound) {
  records.push_back({std::move(check), depth, gamma, lhs, bound, bound - lhs});
}

void BoundReport::append(const BoundReport& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
}

bool BoundReport::pass() const {
  return std::all_of(records.begin(), records.end(),
                     [](const BoundRecord& r) { return r.slack >= -kSlackTolerance; });
}

BoundReport BoundReport::worst_per_depth() const {
  std::map<std::tuple<std::string, int, double>, BoundRecord> worst;
  std::vector<std::tuple<std::string, int, double>> order;
  for (const BoundRecord& r : records) {
    const auto key = std::make_tuple(r.check, r.depth, r.gamma);
    auto it = worst.find(key);
    if (it == worst.end()) {
      worst.emplace(key, r);
      order.push_back(key);
    } else if (r.slack < it->second.slack) {
      it->second = r;
    }
  }
  BoundReport out;
  for (const auto& key : order) out.records.push_back(worst.at(key));
  return out;
}

namespace {

// TF_l(s) at theta_TD for every l <= depth and every state, from one traced
// forward pass: row l holds the outputs after l layers.
Matrix td_values_by_depth(const Mrp& mrp, int depth) {
  const Prompt all = prompt_expected_all(mrp);
  const ForwardResult r = forward(all, td_params(mrp.n, depth), /*trace=*/true);
  Matrix out(depth + 1, mrp.n);
  for (int l = 0; l <= depth; ++l)
    out.row(l) = -r.trace[static_cast<std::size_t>(l)].row(2 * mrp.n).tail(mrp.n);
  return out;
}

void check_query(const Mrp& mrp, State q, int depth) {
  require(q >= 0 && q < mrp.n, "query state out of range");
  require(depth >= 0, "depth must be >= 0");
}

}  // namespace

Theorem1Error theorem1_error(const Mrp& mrp, State query, int depth) {
  check_query(mrp, query, depth);
  const Vector v = solve_value(mrp);
  const double tf = forward(prompt_expected(mrp, query), td_params(mrp.n, depth)).value();
  Vector pv = v;
  for (int l = 0; l < depth; ++l) pv = mrp.transition * pv;
  return {std::abs(tf - v(query)), std::pow(mrp.gamma, depth) * std::abs(pv(query))};
}

double expected_td_error(const Mrp& mrp, State query, int depth) {
  check_query(mrp, query, depth);
  const Vector tf = forward(prompt_expected_all(mrp), td_params(mrp.n, depth)).values;
  return std::abs(mrp.reward(query) + mrp.gamma * mrp.transition.row(query).dot(tf) - tf(query));
}

double expected_mc_error(const Mrp& mrp, State query, int depth) {
  check_query(mrp, query, depth);
  const double tf = forward(prompt_expected(mrp, query), td_params(mrp.n, depth)).value();
  return std::abs(solve_value(mrp)(query) - tf);
}

EmbeddingGaps embedding_identity_gaps(const Mrp& mrp, State query, int depth) {
  check_query(mrp, query, depth);
  const int n = mrp.n;
  const ForwardResult r = forward(prompt_expected(mrp, query), td_params(n, depth), /*trace=*/true);
  const TdIterates it = td_iterates(mrp, depth);
  EmbeddingGaps gaps;
  Vector term = mrp.reward;
  for (int l = 0; l <= depth; ++l) {
    const Vector y = r.trace[static_cast<std::size_t>(l)].row(2 * n).head(n).transpose();
    gaps.stated.push_back((y - (mrp.reward - it.w[static_cast<std::size_t>(l)])).cwiseAbs().maxCoeff());
    gaps.corrected.push_back((y - term).cwiseAbs().maxCoeff());
    term = mrp.gamma * (mrp.transition * term);
  }
  return gaps;
}

BoundReport embedding_trace_check(const Mrp& mrp, State query, int depth) {
  check_query(mrp, query, depth);
  const int n = mrp.n;
  const double vmax = solve_value(mrp).cwiseAbs().maxCoeff();
  const ForwardResult r = forward(prompt_expected(mrp, query), td_params(n, depth), /*trace=*/true);
  const EmbeddingGaps gaps = embedding_identity_gaps(mrp, query, depth);
  BoundReport report;
  for (int l = 0; l <= depth; ++l) {
    const Matrix& z = r.trace[static_cast<std::size_t>(l)];
    const double gl = std::pow(mrp.gamma, l);
    report.add("lemma2_query", l, mrp.gamma, std::abs(z(2 * n, n)), (1.0 + gl) * vmax);
    report.add("lemma2_context", l, mrp.gamma, z.row(2 * n).head(n).cwiseAbs().maxCoeff(), (mrp.gamma + gl) * vmax);
    report.add("lemma2_identity", l, mrp.gamma, gaps.corrected[static_cast<std::size_t>(l)], kSlackTolerance);
  }
  return report;
}

ParamGradient expected_td_update(const TransformerParams& params, const Mrp& mrp) {
  require(params.n == mrp.n, "expected_td_update: params and task disagree on n");
  const Prompt all = prompt_expected_all(mrp);
  const Vector tf = forward(all, params).values;
  const Vector delta = mrp.reward + mrp.gamma * (mrp.transition * tf) - tf;
  return grad_weighted(all, params, mrp.init_dist.cwiseProduct(delta)).grad;
}

ParamGradient expected_mc_update(const TransformerParams& params, const Mrp& mrp) {
  require(params.n == mrp.n, "expected_mc_update: params and task disagree on n");
  const Prompt all = prompt_expected_all(mrp);
  const Vector tf = forward(all, params).values;
  const Vector err = solve_value(mrp) - tf;
  return grad_weighted(all, params, mrp.init_dist.cwiseProduct(err)).grad;
}

namespace {

template <class Update>
double neu(const TransformerParams& params, std::span<const Mrp> tasks, Update update) {
  require(!tasks.empty(), "neu: need at least one task");
  ParamGradient sum = ParamGradient::zeros_like(params);
  for (const Mrp& m : tasks) sum += update(params, m);
  sum *= 1.0 / static_cast<double>(tasks.size());
  return grad_norm(sum, params.sparse);
}

}  // namespace

double neu_td(const TransformerParams& params, std::span<const Mrp> tasks) {
  return neu(params, tasks, expected_td_update);
}

double neu_mc(const TransformerParams& params, std::span<const Mrp> tasks) {
  return neu(params, tasks, expected_mc_update);
}

Check parse_check(std::string_view name) {
  for (Check c : all_checks())
    if (check_name(c) == name) return c;
  throw Error("unknown check '" + std::string(name) +
              "' (expected theorem1, lemma1, lemma2, lemma3, lemma4, theorem2 or corollary1)");
}

std::string_view check_name(Check c) {
  switch (c) {
    case Check::theorem1: return "theorem1";
    case Check::lemma1: return "lemma1";
    case Check::lemma2: return "lemma2";
    case Check::lemma3: return "lemma3";
    case Check::lemma4: return "lemma4";
    case Check::theorem2: return "theorem2";
    case Check::corollary1: return "corollary1";
  }
  return "";
}

const std::vector<Check>& all_checks() {
  static const std::vector<Check> checks{Check::theorem1, Check::lemma1,   Check::lemma2,    Check::lemma3,
                                         Check::lemma4,   Check::theorem2, Check::corollary1};
  return checks;
}

SweepResult decay_sweep(Check check, std::span<const int> depths, std::span<const Mrp> tasks) {
  require(!depths.empty() && !tasks.empty(), "decay_sweep: need depths and tasks");
  std::vector<int> sorted(depths.begin(), depths.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  require(sorted.front() >= 0, "decay_sweep: depths must be >= 0");
  const int lmax = sorted.back();
  const std::string name(check_name(check));

  SweepResult out;
  out.depths = sorted;

  if (check == Check::theorem2 || check == Check::corollary1) {
    const bool td = check == Check::theorem2;
    const double gamma = tasks.front().gamma;
    for (int l : sorted) {
      const TransformerParams params = td_params(tasks.front().n, l);
      const double j = td ? neu_td(params, tasks) : neu_mc(params, tasks);
      double bound = 0.0;
      for (const Mrp& m : tasks) {
        const BoundConstants c = bound_constants(m);
        bound += (td ? c.c_r : c.c_v) * std::pow(m.gamma, l) * gradient_bound(c, l);
      }
      bound /= static_cast<double>(tasks.size());
      out.report.add(name, l, gamma, j, bound);
      out.measured.push_back(j);
      out.bounds.push_back(bound);
    }
    if (sorted.size() > 1 && out.bounds.back() <= out.bounds.front())
      out.report.add(name + "_decay", lmax, gamma, out.measured.back(), out.measured.front());
    return out;
  }

  std::map<int, double> largest;
  for (const Mrp& m : tasks) {
    const BoundConstants c = bound_constants(m);
    if (check == Check::lemma2) {
      for (State q = 0; q < m.n; ++q) {
        const BoundReport r = embedding_trace_check(m, q, lmax);
        for (const BoundRecord& rec : r.records) {
          if (!std::binary_search(sorted.begin(), sorted.end(), rec.depth)) continue;
          out.report.records.push_back(rec);
          if (rec.check == "lemma2_context") largest[rec.depth] = std::max(largest[rec.depth], rec.lhs);
        }
      }
      continue;
    }
    const Matrix tf = td_values_by_depth(m, lmax);
    const Vector v = solve_value(m);
    for (int l : sorted) {
      const double gl = std::pow(m.gamma, l);
      for (State q = 0; q < m.n; ++q) {
        double lhs = 0.0;
        double bound = 0.0;
        switch (check) {
          case Check::theorem1: {
            const Theorem1Error e = theorem1_error(m, q, l);
            lhs = e.direct;
            bound = gl * c.c_v;
            out.report.add("theorem1_closed_form", l, m.gamma, std::abs(e.direct - e.closed_form),
                           kSlackTolerance * std::max(1.0, c.c_v));
            break;
          }
          case Check::lemma1:
            lhs = std::abs(m.reward(q) + m.gamma * m.transition.row(q).dot(tf.row(l)) - tf(l, q));
            bound = gl * c.c_r;
            break;
          case Check::lemma4:
            lhs = std::abs(v(q) - tf(l, q));
            bound = gl * c.c_v;
            break;
          case Check::lemma3:
            lhs = grad_norm(grad_output(prompt_expected(m, q), td_params(m.n, l)), true);
            bound = gradient_bound(c, l);
            break;
          default:
            break;
        }
        out.report.add(name, l, m.gamma, lhs, bound);
        largest[l] = std::max(largest[l], lhs);
      }
    }
  }
  for (int l : sorted) {
    out.measured.push_back(largest[l]);
    double b = 0.0;
    for (const BoundRecord& r : out.report.records)
      if (r.depth == l && r.check.rfind(name, 0) == 0 && r.check.find("closed_form") == std::string::npos)
        b = std::max(b, r.bound);
    out.bounds.push_back(b);
  }
  return out;
}

std::string bound_csv(const BoundReport& report) {
  std::ostringstream os;
  os << "check,L,gamma,lhs,bound,slack\n";
  for (const BoundRecord& r : report.worst_per_depth().records)
    os << r.check << ',' << r.depth << ',' << format_double(r.gamma) << ',' << format_double(r.lhs) << ','
       << format_double(r.bound) << ',' << format_double(r.slack) << '\n';
  return os.str();
}

}  // namespace ictd
