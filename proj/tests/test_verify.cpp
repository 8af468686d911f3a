#include "ictd/pretrain.hpp"
#include "ictd/verify.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace ictd;
using ictd::testing::mrp_a;
using ictd::testing::mrp_b;
using ictd::testing::mrp_single;

namespace {

std::vector<Mrp> mixed_tasks(int count, double gamma, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<Mrp> tasks = sample_tasks(MrpFamily::boyan, 5, gamma, count, rng);
  const std::vector<Mrp> loops = sample_tasks(MrpFamily::loop, 5, gamma, count, rng);
  tasks.insert(tasks.end(), loops.begin(), loops.end());
  return tasks;
}

}  // namespace

TEST_CASE("bound constants") {
  const BoundConstants c = bound_constants(mrp_a());
  // v = [1.5, 0.5]
  CHECK(c.c_v == doctest::Approx(1.5));
  CHECK(c.c_r == 1.0);
  CHECK(c.zeta == doctest::Approx(2.25));
  CHECK(c.eta == doctest::Approx(1.5));
  CHECK(c.beta == doctest::Approx(2 * 2.25 * 1.5));
  CHECK(c.nu == doctest::Approx(4 * (6.75 + 2.25)));
  CHECK(c.xi == doctest::Approx(6.0));
  CHECK(gradient_bound(c, 2) == doctest::Approx(3 * 36.0 + 12.0));
  CHECK(gradient_bound(c, 0) == 0.0);
}

TEST_CASE("theorem1_error examples") {
  const Theorem1Error e0 = theorem1_error(mrp_a(), 0, 0);
  CHECK(e0.direct == doctest::Approx(1.5));
  CHECK(e0.closed_form == doctest::Approx(1.5));
  const Theorem1Error e2 = theorem1_error(mrp_a(), 0, 2);
  CHECK(e2.direct == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(e2.closed_form == doctest::Approx(0.25).epsilon(1e-12));

  Rng rng = make_rng(1);
  for (int t = 0; t < 20; ++t) {
    const Mrp m = generate_mrp(t % 2 ? MrpFamily::loop : MrpFamily::boyan, 5, 0.9, rng);
    const double vmax = solve_value(m).cwiseAbs().maxCoeff();
    for (int l = 0; l <= 60; l += 3) {
      for (State q = 0; q < 5; ++q) {
        const Theorem1Error e = theorem1_error(m, q, l);
        REQUIRE(std::abs(e.direct - e.closed_form) <= 1e-9);
        REQUIRE(e.direct <= std::pow(0.9, l) * vmax + 1e-9);
      }
    }
  }
}

TEST_CASE("expected_td_error examples and bound") {
  CHECK(expected_td_error(mrp_a(), 0, 2) == doctest::Approx(0.125).epsilon(1e-12));
  Rng rng = make_rng(2);
  for (int t = 0; t < 100; ++t) {
    const Mrp m = generate_boyan(5, 0.9, rng);
    const double rmax = m.reward.cwiseAbs().maxCoeff();
    for (State q = 0; q < 5; ++q) {
      REQUIRE(expected_td_error(m, q, 0) == doctest::Approx(std::abs(m.reward(q))).epsilon(1e-15));
      for (int l = 1; l <= 30; l += 7) REQUIRE(expected_td_error(m, q, l) <= rmax * std::pow(0.9, l) + 1e-9);
    }
  }
}

TEST_CASE("expected_mc_error examples and bound") {
  CHECK(expected_mc_error(mrp_b(), 0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  Rng rng = make_rng(3);
  for (int t = 0; t < 100; ++t) {
    const Mrp m = generate_loop(5, 0.5, 0.9, rng);
    const double vmax = solve_value(m).cwiseAbs().maxCoeff();
    for (int l = 0; l <= 30; l += 6) {
      for (State q = 0; q < 5; ++q) {
        const double e = expected_mc_error(m, q, l);
        REQUIRE(e == theorem1_error(m, q, l).direct);
        REQUIRE(e <= std::pow(0.9, l) * vmax + 1e-9);
      }
    }
  }
}

TEST_CASE("embedding trace: first layers and bounds") {
  const EmbeddingGaps g = embedding_identity_gaps(mrp_a(), 0, 3);
  REQUIRE(g.stated.size() == 4);
  CHECK(g.stated[0] == 0.0);
  CHECK(g.corrected[0] == 0.0);
  // Y_1 = (gamma P r)^T = [0.25, 0.25] while r - w_1 = 0.
  CHECK(g.stated[1] == doctest::Approx(0.25));
  CHECK(g.corrected[1] <= 1e-15);

  for (double gamma : {0.5, 0.9}) {
    for (const Mrp& m : mixed_tasks(20, gamma, 4)) {
      for (State q = 0; q < 5; ++q) {
        const BoundReport r = embedding_trace_check(m, q, 30);
        REQUIRE(r.records.size() == 3 * 31);
        REQUIRE(r.pass());
      }
    }
  }
}

TEST_CASE("single-state NEU") {
  const std::vector<Mrp> one{mrp_single(0.5)};
  CHECK(neu_td(td_params(1, 1), one) == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(neu_mc(td_params(1, 1), one) == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("NEU vanishes without rewards or discount") {
  Rng rng = make_rng(5);
  std::vector<Mrp> zero_reward = sample_tasks(MrpFamily::boyan, 4, 0.9, 5, rng);
  for (Mrp& m : zero_reward) m.reward.setZero();
  // With u = 0 the output row is linear in the rewards, so every forward
  // value is 0. A nonzero u (or a full P) lets features alone reach the output.
  const TransformerParams a_only = sparse_params(
      4, 6, ParamMode::looped, {{ictd::testing::gaussian_matrix(8, 8, 0.3, rng), RowVector::Zero(8)}});
  CHECK(neu_td(a_only, zero_reward) == 0.0);
  CHECK(neu_mc(a_only, zero_reward) == 0.0);
  const TransformerParams full = init_params(4, 3, 0.1, rng);
  CHECK(neu_td(full, zero_reward) > 0.0);

  const std::vector<Mrp> myopic = sample_tasks(MrpFamily::boyan, 5, 0.0, 10, rng);
  for (int l = 1; l <= 5; ++l) {
    CHECK(neu_mc(td_params(5, l), myopic) <= 1e-15);
    CHECK(neu_td(td_params(5, l), myopic) <= 1e-15);
  }
}

TEST_CASE("NEU equals the enumerated expected update") {
  Rng rng = make_rng(6);
  for (int rep = 0; rep < 6; ++rep) {
    const Mrp m = generate_mrp(rep % 2 ? MrpFamily::loop : MrpFamily::boyan, 4, 0.9, rng);
    const TransformerParams params = rep < 3 ? td_params(4, 2 + rep) : init_params(4, 3, 0.3, rng);
    ParamGradient sum = ParamGradient::zeros_like(params);
    for (State q = 0; q < 4; ++q) {
      const double tfq = forward(prompt_expected(m, q), params).value();
      const ParamGradient g = grad_output(prompt_expected(m, q), params);
      for (State s1 = 0; s1 < 4; ++s1) {
        const double p = m.transition(q, s1);
        if (p == 0.0) continue;
        const double delta = m.reward(q) + m.gamma * forward(prompt_expected(m, s1), params).value() - tfq;
        ParamGradient term = g;
        term *= m.init_dist(q) * p * delta;
        sum += term;
      }
    }
    const std::vector<Mrp> one{m};
    CHECK(neu_td(params, one) == doctest::Approx(grad_norm(sum, params.sparse)).epsilon(1e-10));
  }
}

TEST_CASE("NEU bounds at depth 30") {
  Rng rng = make_rng(7);
  const std::vector<Mrp> tasks = sample_tasks(MrpFamily::boyan, 5, 0.9, 30, rng);
  const int depths[] = {30};
  for (Check c : {Check::theorem2, Check::corollary1}) {
    const SweepResult r = decay_sweep(c, depths, tasks);
    CHECK(r.report.pass());
    REQUIRE(r.measured.size() == 1);
    CHECK(r.measured[0] > 0.0);
  }
}

TEST_CASE("NEU decays past the hump of the bound") {
  Rng rng = make_rng(8);
  const std::vector<Mrp> tasks = sample_tasks(MrpFamily::boyan, 5, 0.9, 30, rng);
  const int depths[] = {20, 30, 40, 60};
  const SweepResult r = decay_sweep(Check::theorem2, depths, tasks);
  CHECK(r.report.pass());
  for (std::size_t i = 1; i < r.measured.size(); ++i) CHECK(r.measured[i] < r.measured[i - 1]);
  // The bound is smaller at 60 than at 20, so a decay record is present.
  CHECK(r.report.records.back().check == "theorem2_decay");
}

TEST_CASE("decay_sweep on every check") {
  const std::vector<int> depths{0, 1, 2, 5, 10, 20, 30};
  for (double gamma : {0.5, 0.9}) {
    const std::vector<Mrp> tasks = mixed_tasks(10, gamma, 9);
    for (Check c : all_checks()) {
      const SweepResult r = decay_sweep(c, depths, tasks);
      CHECK_MESSAGE(r.report.pass(), check_name(c));
      CHECK(r.depths == depths);
    }
  }
}

TEST_CASE("TD error at theta_TD is the next Neumann term") {
  // r + gamma P w_L - w_L = (gamma P)^L r when w_L is the L-term partial sum.
  Rng rng = make_rng(10);
  const std::vector<Mrp> tasks = sample_tasks(MrpFamily::boyan, 5, 0.9, 20, rng);
  const std::vector<int> depths{0, 3, 9, 27};
  const SweepResult r = decay_sweep(Check::lemma1, depths, tasks);
  for (std::size_t i = 0; i < depths.size(); ++i) {
    double largest = 0.0;
    for (const Mrp& m : tasks) {
      const Vector term = std::pow(m.gamma, depths[i]) * (oracle::matrix_power(m.transition, depths[i]) * m.reward);
      largest = std::max(largest, term.cwiseAbs().maxCoeff());
    }
    CHECK(r.measured[i] == doctest::Approx(largest).epsilon(1e-9));
  }
}

TEST_CASE("discount zero makes every quantity vanish past layer 0") {
  Rng rng = make_rng(11);
  const std::vector<Mrp> tasks = sample_tasks(MrpFamily::boyan, 5, 0.0, 10, rng);
  const std::vector<int> depths{1, 2, 5};
  for (Check c : {Check::theorem1, Check::lemma1, Check::lemma4, Check::theorem2, Check::corollary1}) {
    const SweepResult r = decay_sweep(c, depths, tasks);
    for (double x : r.measured) CHECK(x <= 1e-15);
  }
}

TEST_CASE("sampled TD direction at the TD parameters stays under the expected-update bound") {
  // Mean over sampled (task, S, S') of ||delta grad||_1 against C_r gamma^L poly.
  Rng rng = make_rng(12);
  const int depth = 30;
  const int samples = 10000;
  const TransformerParams td = td_params(5, depth);
  double sum = 0.0, sq = 0.0, bound = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Mrp m = generate_boyan(5, 0.9, rng);
    const Trajectory traj = unroll(m, 1, rng);
    const TaskUpdate u = td_update(m, traj, 1, td, td);
    const double x = grad_norm(u.direction, true);
    sum += x;
    sq += x * x;
    const BoundConstants c = bound_constants(m);
    bound += c.c_r * std::pow(0.9, depth) * gradient_bound(c, depth);
  }
  const double mean = sum / samples;
  const double se = std::sqrt((sq / samples - mean * mean) / samples);
  CHECK(mean <= bound / samples + 4.0 * se);
}

TEST_CASE("bound CSV keeps the tightest record per depth") {
  BoundReport r;
  r.add("lemma1", 3, 0.9, 0.1, 1.0);
  r.add("lemma1", 3, 0.9, 0.8, 1.0);
  r.add("lemma1", 4, 0.9, 0.1, 0.5);
  CHECK(r.pass());
  CHECK(bound_csv(r) ==
        "check,L,gamma,lhs,bound,slack\n"
        "lemma1,3,0.90000000000000002,0.80000000000000004,1,0.19999999999999996\n"
        "lemma1,4,0.90000000000000002,0.10000000000000001,0.5,0.40000000000000002\n");
  r.add("lemma1", 5, 0.9, 1.0, 0.5);
  CHECK_FALSE(r.pass());
  CHECK(parse_check("lemma3") == Check::lemma3);
  CHECK_THROWS_AS(parse_check("lemma9"), Error);
}
