#pragma once

#include <filesystem>
#include <string>

#include "gridshift/netmodel.hpp"

namespace gstest {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(GRIDSHIFT_FIXTURE_DIR) / name; }

inline const gridshift::NetworkCase& case9() {
  static const auto c = gridshift::load_case(fixture("case9.json"));
  return c;
}

inline const gridshift::NetworkCase& case118() {
  static const auto c = gridshift::load_case(fixture("case118.json"));
  return c;
}

inline gridshift::Bus bus(int id, gridshift::BusKind kind, double load_p = 0.0, double load_q = 0.0) {
  gridshift::Bus b;
  b.id = id;
  b.kind = kind;
  b.load_p = load_p;
  b.load_q = load_q;
  return b;
}

inline gridshift::Branch line(int id, int from, int to, double r, double x, double cap = 9999.0) {
  gridshift::Branch br;
  br.id = id;
  br.from_bus = from;
  br.to_bus = to;
  br.r = r;
  br.x = x;
  br.capacity = cap;
  return br;
}

inline gridshift::Generator gen(int id, int bus, double p_max, double a, double b, double p_min = 0.0) {
  gridshift::Generator g;
  g.id = id;
  g.bus = bus;
  g.p_min = p_min;
  g.p_max = p_max;
  g.q_min = -500.0;
  g.q_max = 500.0;
  g.cost_a = a;
  g.cost_b = b;
  return g;
}

/// Slack generator at bus 1 feeding a load at bus 2 over one line.
inline gridshift::CaseData two_bus(double r, double x, double load_mw = 0.0) {
  gridshift::CaseData d;
  d.buses = {bus(1, gridshift::BusKind::slack), bus(2, gridshift::BusKind::pq, load_mw, 0.0)};
  d.branches = {line(1, 1, 2, r, x)};
  d.generators = {gen(1, 1, 1000.0, 0.01, 10.0)};
  return d;
}

}  // namespace gstest
