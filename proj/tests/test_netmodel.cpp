#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>

#include "gridshift/netmodel.hpp"
#include "support.hpp"

using namespace gridshift;
using gstest::case118;
using gstest::case9;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a gridshift::Error";
  return ErrorCode::io_error;
}

}  // namespace

TEST(Netmodel, LoadsNineBusFixture) {
  const auto& c = case9();
  ASSERT_EQ(c.bus_count(), 9u);
  ASSERT_EQ(c.branch_count(), 9u);
  ASSERT_EQ(c.generator_count(), 3u);
  EXPECT_EQ(c.slack_bus(), 1);
  EXPECT_DOUBLE_EQ(c.to_mw(c.generator(1).p_max), 500.0);
  EXPECT_DOUBLE_EQ(c.to_mw(c.generator(2).p_max), 590.0);
  EXPECT_DOUBLE_EQ(c.to_mw(c.generator(3).p_max), 400.0);
}

TEST(Netmodel, LoadsStudyLinesOf118) {
  const auto& c = case118();
  EXPECT_EQ(c.bus_count(), 118u);
  const auto& br = c.branch(8);
  EXPECT_EQ(br.from_bus, 8);
  EXPECT_EQ(br.to_bus, 5);
  EXPECT_DOUBLE_EQ(br.x, 0.0322);
  EXPECT_DOUBLE_EQ(c.to_mw(br.capacity), 770.0);
  EXPECT_EQ(c.load_profile().size(), 24u);
  auto prof = load_profile_file(gstest::fixture("profile24.json"));
  ASSERT_EQ(prof.size(), 24u);
  for (std::size_t h = 0; h < 24; ++h) EXPECT_DOUBLE_EQ(prof[h], c.load_profile()[h]);
}

TEST(Netmodel, PerUnitRoundTrip) {
  const auto& c = case9();
  auto d = c.data();
  NetworkCase again(d);
  for (std::size_t i = 0; i < c.bus_count(); ++i) {
    EXPECT_DOUBLE_EQ(again.buses()[i].load_p, c.buses()[i].load_p);
    EXPECT_DOUBLE_EQ(again.buses()[i].load_q, c.buses()[i].load_q);
  }
  for (std::size_t g = 0; g < c.generator_count(); ++g) EXPECT_DOUBLE_EQ(again.generators()[g].p_max, c.generators()[g].p_max);
  EXPECT_NEAR(c.to_mw(c.to_pu(123.4)), 123.4, 1e-12);
}

TEST(Netmodel, SeriesAdmittanceInvertsImpedance) {
  for (const auto& br : case118().branches()) {
    std::complex<double> y(br.g, br.b), z(br.r, br.x);
    EXPECT_NEAR(std::abs(y * z - 1.0), 0.0, 1e-12) << "branch " << br.id;
  }
}

TEST(Netmodel, RejectsTwoSlackBuses) {
  auto d = gstest::two_bus(0.01, 0.1);
  d.buses[1].kind = BusKind::slack;
  EXPECT_EQ(code_of([&] { NetworkCase c(d); }), ErrorCode::validation_error);
}

TEST(Netmodel, RejectsNonPositiveReactance) {
  auto d = gstest::two_bus(0.01, 0.0);
  EXPECT_EQ(code_of([&] { NetworkCase c(d); }), ErrorCode::validation_error);
}

TEST(Netmodel, RejectsUnknownBusAndInsufficientCapacity) {
  auto d = gstest::two_bus(0.01, 0.1);
  d.branches[0].to_bus = 7;
  EXPECT_EQ(code_of([&] { NetworkCase c(d); }), ErrorCode::validation_error);
  auto e = gstest::two_bus(0.01, 0.1, 2000.0);
  EXPECT_EQ(code_of([&] { NetworkCase c(e); }), ErrorCode::validation_error);
}

TEST(Netmodel, MalformedJsonIsParseError) {
  EXPECT_EQ(code_of([] { parse_case_json("{\"buses\": [ {\"id\": 1, "); }), ErrorCode::parse_error);
  EXPECT_EQ(code_of([] { parse_case_json(R"({"buses": [{"id": "one", "kind": "slack"}], "branches": [], "generators": []})"); }),
            ErrorCode::parse_error);
}

TEST(Netmodel, DisconnectedNetworkRejected) {
  auto d = gstest::two_bus(0.01, 0.1);
  d.buses.push_back(gstest::bus(3, BusKind::pq));
  d.buses.push_back(gstest::bus(4, BusKind::pq));
  d.branches.push_back(gstest::line(2, 3, 4, 0.01, 0.1));
  EXPECT_EQ(code_of([&] { NetworkCase c(d); }), ErrorCode::disconnected_network);
}

// Connectivity against a union-find over random edge sets.
TEST(Netmodel, ConnectivityMatchesUnionFind) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    std::size_t n = 1 + rng() % 12;
    std::size_t m = rng() % 14;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<std::size_t(std::size_t)> root = [&](std::size_t a) { return parent[a] == a ? a : parent[a] = root(parent[a]); };
    for (std::size_t e = 0; e < m; ++e) {
      std::size_t a = rng() % n, b = rng() % n;
      edges.emplace_back(a, b);
      parent[root(a)] = root(b);
    }
    bool uf = true;
    for (std::size_t i = 0; i < n; ++i) uf = uf && root(i) == root(0);
    EXPECT_EQ(is_connected(n, edges), uf) << "trial " << trial;
  }
}

TEST(Netmodel, ReactanceMatrixTwoBus) {
  NetworkCase c(gstest::two_bus(0.0, 0.1));
  auto X = build_reactance_matrix(c);
  EXPECT_NEAR(X.at(2, 2), 0.1, 1e-14);
  EXPECT_DOUBLE_EQ(X.at(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(X.at(1, 2), 0.0);
}

TEST(Netmodel, ReactanceMatrixInvertsReducedSusceptance) {
  const auto& c = case118();
  auto X = build_reactance_matrix(c);
  Eigen::MatrixXd B = dc_susceptance_matrix(c);
  const auto s = static_cast<Eigen::Index>(X.slack_index);
  EXPECT_LT((X.X - X.X.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  Eigen::MatrixXd prod = B * X.X;
  for (Eigen::Index i = 0; i < prod.rows(); ++i) {
    if (i == s) continue;
    for (Eigen::Index j = 0; j < prod.cols(); ++j) {
      if (j == s) continue;
      EXPECT_NEAR(prod(i, j), i == j ? 1.0 : 0.0, 1e-8);
    }
  }
}

TEST(Netmodel, ImpedanceMatrixTwoBusAndSymmetry) {
  NetworkCase c(gstest::two_bus(0.03, 0.4));
  auto z = build_impedance_matrix(c);
  EXPECT_NEAR(std::abs(z.at(2, 2) - std::complex<double>(0.03, 0.4)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(z.at(2, 2)), std::hypot(0.03, 0.4), 1e-12);

  auto z9 = build_impedance_matrix(case9());
  EXPECT_LT((z9.Z - z9.Z.transpose()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Netmodel, CsvTablesMatchJson) {
  const auto& c = case9();
  auto dir = std::filesystem::temp_directory_path() / "gridshift_csv_case";
  std::filesystem::create_directories(dir);
  auto d = c.data();
  {
    std::ofstream b(dir / "buses.csv");
    b << "id,kind,v_set,load_p,load_q,v_min,v_max\n";
    for (const auto& x : d.buses)
      b << x.id << ',' << to_string(x.kind) << ',' << x.v_set << ',' << x.load_p << ',' << x.load_q << ',' << x.v_min << ',' << x.v_max << '\n';
    std::ofstream r(dir / "branches.csv");
    r << "id,from,to,r,x,charging,capacity\n";
    for (const auto& x : d.branches) r << x.id << ',' << x.from_bus << ',' << x.to_bus << ',' << x.r << ',' << x.x << ',' << x.charging << ',' << x.capacity << '\n';
    std::ofstream g(dir / "generators.csv");
    g << "id,bus,p_min,p_max,q_min,q_max,cost_a,cost_b,cost_c\n";
    for (const auto& x : d.generators)
      g << x.id << ',' << x.bus << ',' << x.p_min << ',' << x.p_max << ',' << x.q_min << ',' << x.q_max << ',' << x.cost_a << ',' << x.cost_b << ','
        << x.cost_c << '\n';
    std::ofstream p(dir / "profile.csv");
    p << "hour,factor\n0,0.5\n1,1.0\n";
  }
  auto csv = load_case(dir, CaseFormat::csv_tables);
  ASSERT_EQ(csv.bus_count(), c.bus_count());
  ASSERT_EQ(csv.branch_count(), c.branch_count());
  for (std::size_t k = 0; k < c.branch_count(); ++k) {
    EXPECT_DOUBLE_EQ(csv.branches()[k].x, c.branches()[k].x);
    EXPECT_DOUBLE_EQ(csv.branches()[k].capacity, c.branches()[k].capacity);
  }
  for (std::size_t i = 0; i < c.bus_count(); ++i) EXPECT_EQ(csv.buses()[i].kind, c.buses()[i].kind);
  ASSERT_EQ(csv.load_profile().size(), 2u);
  EXPECT_DOUBLE_EQ(csv.load_profile()[0], 0.5);
  std::filesystem::remove_all(dir);
}

TEST(Netmodel, MissingFileIsIoError) {
  EXPECT_EQ(code_of([] { load_case("/nonexistent/case.json"); }), ErrorCode::io_error);
}

TEST(Netmodel, LoadScaleAndCapacityOverride) {
  const auto& c = case9();
  auto s = c.with_load_scale(0.5);
  EXPECT_NEAR(s.total_load_p(), 0.5 * c.total_load_p(), 1e-12);
  auto k = c.with_branch_capacity(3, 42.0);
  EXPECT_DOUBLE_EQ(k.to_mw(k.branch(3).capacity), 42.0);
}
