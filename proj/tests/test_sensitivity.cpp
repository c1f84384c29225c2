#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <sstream>

#include "gridshift/sensitivity.hpp"
#include "support.hpp"

using namespace gridshift;
using gstest::case118;
using gstest::case9;

namespace {

const OpfSolution& nine_bus_reference() {
  static const OpfSolution ref = expect_optimal(solve_opf(case9(), OpfProblem{}, GsdfOptions::anchored_opf_defaults()));
  return ref;
}

// Flow change per MW moved off the target onto the balancing unit, by two DC solves.
Eigen::VectorXd dc_finite_difference(const NetworkCase& c, const ReactanceMatrix& X, const Eigen::VectorXd& base, TradePair t, double d_mw) {
  Eigen::VectorXd moved = base;
  moved[static_cast<Eigen::Index>(c.bus_index(c.generator(t.target).bus))] -= d_mw;
  moved[static_cast<Eigen::Index>(c.bus_index(c.generator(t.balancing).bus))] += d_mw;
  return (solve_dc(c, moved, X).branch_p - solve_dc(c, base, X).branch_p) / d_mw;
}

// Bridges whose removal leaves both trade buses on the same side carry none of the trade.
std::vector<std::size_t> bridges_away_from(const NetworkCase& c, int bus_a, int bus_b) {
  std::vector<std::size_t> out;
  for (std::size_t skip = 0; skip < c.branch_count(); ++skip) {
    std::vector<std::vector<std::size_t>> adj(c.bus_count());
    for (std::size_t k = 0; k < c.branch_count(); ++k) {
      if (k == skip) continue;
      auto f = c.bus_index(c.branches()[k].from_bus), t = c.bus_index(c.branches()[k].to_bus);
      adj[f].push_back(t);
      adj[t].push_back(f);
    }
    std::vector<bool> seen(c.bus_count(), false);
    std::vector<std::size_t> stack{c.bus_index(bus_a)};
    seen[stack[0]] = true;
    while (!stack.empty()) {
      auto u = stack.back();
      stack.pop_back();
      for (auto v : adj[u])
        if (!seen[v]) seen[v] = true, stack.push_back(v);
    }
    bool bridge = std::find(seen.begin(), seen.end(), false) != seen.end();
    if (bridge && seen[c.bus_index(bus_b)]) out.push_back(skip);
  }
  return out;
}

}  // namespace

TEST(GsdfDc, ReproducesPublishedColumn) {
  auto tab = gsdf_dc(case9(), {2, 1});
  const double expect[] = {1.0000, 0.3613, 0.3613, 0.0000, 0.3613, 0.3613, 1.0000, -0.6387, -0.6387};
  for (int k = 0; k < 9; ++k) EXPECT_NEAR(tab.values[k], expect[k], 5e-5) << "line " << k + 1;
  EXPECT_EQ(tab.method, GsdfMethod::dc);
  EXPECT_EQ(tab.sign_convention, kGsdfSignConvention);
}

TEST(GsdfDc, MatchesFiniteDifferenceOnBothFixtures) {
  for (const auto* c : {&case9(), &case118()}) {
    auto X = build_reactance_matrix(*c);
    OpfProblem pr;
    pr.model = FlowModel::dc;
    auto ref = expect_optimal(solve_opf(*c, pr));
    Eigen::VectorXd base = bus_injections_mw(*c, ref.p);
    const auto& gens = c->generators();
    for (std::size_t a = 0; a < gens.size(); ++a) {
      for (std::size_t b = 0; b < gens.size(); b += (c->generator_count() > 3 ? 7 : 1)) {
        if (gens[a].bus == gens[b].bus) continue;
        TradePair t{gens[a].id, gens[b].id};
        auto tab = gsdf_dc(*c, t);
        auto fd = dc_finite_difference(*c, X, base, t, 0.1);
        EXPECT_LT((tab.values - fd).cwiseAbs().maxCoeff(), 1e-8) << "trade " << t.target << "," << t.balancing;
      }
    }
  }
}

TEST(GsdfDc, SlackChoiceDoesNotMatter) {
  const auto& c = case118();
  auto a = gsdf_dc(c, {4, 19});
  auto b = gsdf_dc(c, {4, 19}, build_reactance_matrix(c));
  EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(GsdfDc, BoundedByOne) {
  for (const auto* c : {&case9(), &case118()}) {
    for (const auto& g : c->generators()) {
      if (g.id == c->generators().front().id) continue;
      auto tab = gsdf_dc(*c, {g.id, c->generators().front().id});
      EXPECT_LE(tab.values.cwiseAbs().maxCoeff(), 1.0 + 1e-6);
      EXPECT_TRUE(tab.values.allFinite());
    }
  }
}

TEST(GsdfDc, RadialBranchesOffThePathCarryNothing) {
  const auto& c = case118();
  std::mt19937 rng(3);
  for (int trial = 0; trial < 6; ++trial) {
    const auto& ga = c.generators()[rng() % c.generator_count()];
    const auto& gb = c.generators()[rng() % c.generator_count()];
    if (ga.bus == gb.bus) continue;
    auto tab = gsdf_dc(c, {ga.id, gb.id});
    auto off = bridges_away_from(c, ga.bus, gb.bus);
    EXPECT_FALSE(off.empty());
    for (auto k : off) EXPECT_NEAR(tab.values[static_cast<Eigen::Index>(k)], 0.0, 1e-10) << "branch " << c.branches()[k].id;
  }
  EXPECT_NEAR(gsdf_dc(case9(), {2, 1}).values[3], 0.0, 1e-12);
}

TEST(GsdfDc, RejectsDegenerateTrade) {
  EXPECT_THROW(gsdf_dc(case9(), {2, 2}), Error);
  EXPECT_THROW(gsdf_dc(case9(), {2, 99}), Error);
}

TEST(GsdfGeneralized, LosslessNetworkEqualsDc) {
  auto d = case9().data();
  for (auto& br : d.branches) br.r = 0.0;
  NetworkCase c(d);
  auto ref = expect_optimal(solve_opf(c, OpfProblem{}, GsdfOptions::anchored_opf_defaults()));
  for (auto path : {ThetaPath::simulated, ThetaPath::reactance}) {
    GsdfOptions o;
    o.theta_path = path;
    auto gen = gsdf_generalized(c, {2, 1}, ref, o);
    EXPECT_LT((gen.values - gsdf_dc(c, {2, 1}).values).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(GsdfGeneralized, CloserToAcThanDc) {
  const auto& c = case9();
  const auto& ref = nine_bus_reference();
  for (TradePair t : {TradePair{2, 1}, TradePair{3, 1}, TradePair{3, 2}}) {
    auto dc = gsdf_dc(c, t);
    auto gen = gsdf_generalized(c, t, ref);
    auto ac = gsdf_ac_benchmark(c, t, ref);
    EXPECT_LT((gen.values - ac.values).cwiseAbs().sum(), (dc.values - ac.values).cwiseAbs().sum()) << t.target << "," << t.balancing;
  }
}

TEST(GsdfGeneralized, ReactancePathKeepsTransformersAtOne) {
  GsdfOptions o;
  o.theta_path = ThetaPath::reactance;
  auto gen = gsdf_generalized(case9(), {2, 1}, nine_bus_reference(), o);
  EXPECT_NEAR(gen.values[0], 1.0, 1e-9);
  EXPECT_NEAR(gen.values[6], 1.0, 1e-9);
  EXPECT_NEAR(gen.values[3], 0.0, 1e-9);
}

TEST(GsdfGeneralized, StepSizeRobust) {
  const auto& c = case9();
  OpfModel m(c);
  const auto& ref = nine_bus_reference();
  for (auto path : {ThetaPath::simulated, ThetaPath::reactance}) {
    GsdfOptions o;
    o.theta_path = path;
    auto mid = gsdf_generalized(m, {2, 1}, ref, o);
    for (double d : {0.05, 0.2}) {
      o.delta_mw = d;
      o.epsilon_mw = d / 10.0;
      auto other = gsdf_generalized(m, {2, 1}, ref, o);
      for (Eigen::Index k = 0; k < mid.values.size(); ++k)
        EXPECT_LE(std::abs(other.values[k] - mid.values[k]), 0.02 * std::abs(mid.values[k]) + 1e-6) << "delta " << d << " line " << k + 1;
    }
  }
}

TEST(GsdfGeneralized, DownwardStepWhenTargetIsFull) {
  const auto& c = case9();
  OpfModel m(c);
  Eigen::VectorXd p = nine_bus_reference().p;
  p[1] += 0.05;  // leave G2 less room than the step
  OpfProblem pr;
  pr.dispatch_mw = p;
  auto d = c.data();
  d.generators[1].p_max = p[1];
  NetworkCase tight(d);
  OpfModel mt(tight);
  auto ref = expect_optimal(mt.solve(pr, GsdfOptions::anchored_opf_defaults()));
  auto gen = gsdf_generalized(mt, {2, 1}, ref);
  EXPECT_NEAR(gen.values[0], gsdf_generalized(m, {2, 1}, nine_bus_reference()).values[0], 1e-3);
}

TEST(GsdfAc, LosslessFlatNetworkMatchesDc) {
  auto d = case9().data();
  for (auto& br : d.branches) br.r = 0.0, br.charging = 0.0;
  for (auto& b : d.buses) b.load_p = b.load_q = 0.0, b.v_set = 1.0;
  for (auto& g : d.generators) g.p_min = 0.0;
  NetworkCase c(d);
  OpfSolution ref;
  ref.status = OpfStatus::optimal;
  ref.p = Eigen::VectorXd::Zero(3);
  auto ac = gsdf_ac_benchmark(c, {2, 1}, ref);
  EXPECT_LT((ac.values - gsdf_dc(c, {2, 1}).values).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(GsdfAc, HalvedStepChangesLittle) {
  const auto& c = case9();
  const auto& ref = nine_bus_reference();
  auto a = gsdf_ac_benchmark(c, {2, 1}, ref, 0.1);
  auto b = gsdf_ac_benchmark(c, {2, 1}, ref, 0.05);
  for (Eigen::Index k = 0; k < a.values.size(); ++k) EXPECT_LE(std::abs(a.values[k] - b.values[k]), 0.01 * std::abs(a.values[k]) + 1e-6);
}

TEST(Rebase, DcIdentityOverAllTriples) {
  const auto& c = case9();
  for (int t = 1; t <= 3; ++t)
    for (int b = 1; b <= 3; ++b)
      for (int a = 1; a <= 3; ++a) {
        if (t == b || b == a || t == a) continue;
        auto direct = gsdf_dc(c, {t, a});
        auto via = gsdf_rebase(gsdf_dc(c, {t, b}), gsdf_dc(c, {b, a}));
        EXPECT_LT((direct.values - via.values).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_EQ(via.trade.balancing, a);
      }
}

TEST(Rebase, GeneralizedIdentityOverAllTriples) {
  const auto& c = case9();
  OpfModel m(c);
  const auto& ref = nine_bus_reference();
  std::map<std::pair<int, int>, GsdfTable> tab;
  for (int i = 1; i <= 3; ++i)
    for (int j = 1; j <= 3; ++j)
      if (i != j) tab.emplace(std::pair{i, j}, gsdf_generalized(m, {i, j}, ref));
  for (int t = 1; t <= 3; ++t)
    for (int b = 1; b <= 3; ++b)
      for (int a = 1; a <= 3; ++a) {
        if (t == b || b == a || t == a) continue;
        auto via = gsdf_rebase(tab.at({t, b}), tab.at({b, a}));
        EXPECT_LT((tab.at({t, a}).values - via.values).cwiseAbs().maxCoeff(), 1e-3) << t << "," << b << "," << a;
      }
}

TEST(Rebase, ZeroSecondTableIsIdentity) {
  auto b = gsdf_dc(case9(), {3, 2});
  auto zero = b;
  zero.values.setZero();
  zero.trade = {2, 1};
  auto out = gsdf_rebase(b, zero);
  EXPECT_EQ(out.values, b.values);
  EXPECT_EQ(out.trade.balancing, 1);
}

TEST(Rebase, MismatchedTablesRejected) {
  auto dc = gsdf_dc(case9(), {3, 2});
  auto other = gsdf_dc(case9(), {2, 1});
  auto code = [](const std::function<void()>& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::io_error;
  };
  auto wrong_method = other;
  wrong_method.method = GsdfMethod::generalized;
  EXPECT_EQ(code([&] { gsdf_rebase(dc, wrong_method); }), ErrorCode::mismatched_tables);
  auto wrong_case = other;
  wrong_case.case_fingerprint ^= 1;
  EXPECT_EQ(code([&] { gsdf_rebase(dc, wrong_case); }), ErrorCode::mismatched_tables);
  EXPECT_EQ(code([&] { gsdf_rebase(dc, gsdf_dc(case9(), {1, 3})); }), ErrorCode::mismatched_tables);
}

TEST(ElectricDistance, Axioms) {
  const auto& c = case118();
  auto z = build_impedance_matrix(c);
  std::mt19937 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    int i = c.buses()[rng() % c.bus_count()].id, j = c.buses()[rng() % c.bus_count()].id;
    EXPECT_EQ(electric_distance(z, i, i), 0.0);
    EXPECT_NEAR(electric_distance(z, i, j), electric_distance(z, j, i), 1e-12);
    if (i != j) {
      EXPECT_GT(electric_distance(z, i, j), 0.0);
    }
  }
}

TEST(ElectricDistance, TwoBusEqualsLineImpedance) {
  NetworkCase c(gstest::two_bus(0.03, 0.4));
  auto z = build_impedance_matrix(c);
  EXPECT_NEAR(electric_distance(z, 1, 2), std::hypot(0.03, 0.4), 1e-12);
}

TEST(ElectricDistance, NeighbourCloserThanRemoteBus) {
  const auto& c = case118();
  auto z = build_impedance_matrix(c);
  double near = electric_distance(z, 8, 10);
  for (int remote : {75, 90, 100, 110}) EXPECT_LT(near, electric_distance(z, 8, remote));
}

TEST(Precision, ReportLayout) {
  auto rep = precision_report(case9(), {2, 1});
  ASSERT_EQ(rep.rows.size(), 9u);
  EXPECT_LT(rep.generalized_abs_dev, rep.dc_abs_dev);
  std::istringstream csv(rep.to_csv());
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "branch_id,from,to,dc,generalized,ac");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 9);
  EXPECT_NEAR(rep.rows[0].dc, 1.0, 1e-12);
}
