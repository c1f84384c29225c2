#pragma once

// Congestion detection and GSDF-driven redispatch over a load horizon: pick the
// generator whose output most relieves the worst overload, back it down, raise an
// electrically distant generator, re-solve at the new dispatch, repeat.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridshift/error.hpp"
#include "gridshift/io.hpp"
#include "gridshift/netmodel.hpp"
#include "gridshift/opf.hpp"
#include "gridshift/sensitivity.hpp"

namespace gridshift {

struct CongestionEvent {
  std::size_t hour = 0;
  int branch = 0;
  double flow = 0.0;  // MW, signed by from->to direction, magnitude of the heavier end
  double limit = 0.0;
  double overload = 0.0;  // |flow| - limit
};

struct RedispatchAction {
  std::size_t hour = 0;
  int branch = 0;
  int target = 0;
  int balancing = 0;
  double shift_mw = 0.0;
  double gsdf = 0.0;  // GSDF(target, balancing) on the branch
  double predicted_change = 0.0;
  double flow_before = 0.0;  // signed from-end flow
  double flow_after = 0.0;
  double generation_after = 0.0;  // MW, total
  double loss_after = 0.0;        // MW, total
  bool partial = false;  // clipped by headroom
};

struct HourOutcome {
  std::size_t hour = 0;
  double load_scale = 1.0;
  double pre_flow = 0.0;   // managed branch, magnitude, before management
  double post_flow = 0.0;  // after
  bool congested = false;
  bool converged = false;
  int loops = 0;
  std::string error;  // empty on success
  Eigen::VectorXd dispatch;
  Eigen::VectorXd post_flows;  // magnitudes per branch
  PowerFlowSolution post_state;
  std::vector<RedispatchAction> actions;
};

struct ManagementResult {
  std::vector<HourOutcome> hours;
  std::vector<RedispatchAction> actions;
  bool converged = true;
  int loops = 0;
};

struct VolatilityReport {
  int branch = 0;
  double bound = 0.0;
  std::vector<int> congested;  // S_t
  std::vector<double> t0, t1;
  double vol_percent = 0.0;
  bool defined = false;  // false when no hour was congested
};

struct CongestionOptions {
  double gsdf_threshold = 0.01;
  double margin_fraction = 0.01;  // of the limit
  int loop_limit = 20;
  double headroom_tol_mw = 1e-6;
  GsdfOptions gsdf;
  OpfOptions opf;
};

/// Branch limit in MW with overrides applied.
inline double branch_limit_mw(const NetworkCase& c, std::size_t k, const std::map<int, double>& bounds) {
  auto it = bounds.find(c.branches()[k].id);
  return it == bounds.end() ? c.to_mw(c.branches()[k].capacity) : it->second;
}

/// Overloaded branches, worst first (ties by branch id).
inline std::vector<CongestionEvent> detect_congestion(const NetworkCase& c, const PowerFlowSolution& flows, const std::map<int, double>& bounds = {},
                                                      std::size_t hour = 0, double tol_mw = 1e-6) {
  std::vector<CongestionEvent> out;
  for (std::size_t k = 0; k < c.branch_count(); ++k) {
    double mag = flows.flow_magnitude(k);
    double lim = branch_limit_mw(c, k, bounds);
    if (mag <= lim + tol_mw) continue;
    double sign = flows.through_flow(k) < 0.0 ? -1.0 : 1.0;
    out.push_back({hour, c.branches()[k].id, sign * mag, lim, mag - lim});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.overload != b.overload) return a.overload > b.overload;
    return a.branch < b.branch;
  });
  return out;
}

inline double down_headroom(const NetworkCase& c, const Eigen::VectorXd& p, int gen) {
  const auto& g = c.generator(gen);
  return p[static_cast<Eigen::Index>(c.generator_index(gen))] - c.to_mw(g.p_min);
}

inline double up_headroom(const NetworkCase& c, const Eigen::VectorXd& p, int gen) {
  const auto& g = c.generator(gen);
  return c.to_mw(g.p_max) - p[static_cast<Eigen::Index>(c.generator_index(gen))];
}

/// Cost change of moving one MW from `down` to `up`.
inline double unit_redispatch_cost(const NetworkCase& c, const Eigen::VectorXd& p, int down, int up) {
  double pd = p[static_cast<Eigen::Index>(c.generator_index(down))];
  double pu = p[static_cast<Eigen::Index>(c.generator_index(up))];
  const auto& gd = c.generator(down);
  const auto& gu = c.generator(up);
  return gu.cost_mw(pu + 1.0) - gu.cost_mw(pu) + gd.cost_mw(pd - 1.0) - gd.cost_mw(pd);
}

/// Generator with the most room in both directions; the sweep's common balancing point.
inline int provisional_balancing(const NetworkCase& c, const Eigen::VectorXd& p, int exclude = 0) {
  int best = 0;
  double room = -std::numeric_limits<double>::infinity();
  for (const auto& g : c.generators()) {
    if (g.id == exclude) continue;
    double r = std::min(down_headroom(c, p, g.id), up_headroom(c, p, g.id));
    if (r > room) room = r, best = g.id;
  }
  return best;
}

/// GSDF(g, balancing) for every other generator. The balancing generator maps to a zero
/// table. Generators whose anchored simulation fails are left out.
struct GsdfSweep {
  int balancing = 0;
  std::map<int, GsdfTable> tables;

  const GsdfTable* find(int gen) const {
    auto it = tables.find(gen);
    return it == tables.end() ? nullptr : &it->second;
  }
};

inline GsdfSweep gsdf_sweep(const OpfModel& model, const OpfSolution& reference, int balancing, const GsdfOptions& opt) {
  const auto& c = model.network();
  GsdfSweep sw;
  sw.balancing = balancing;
  auto zero = detail::empty_table(c, {balancing, balancing}, GsdfMethod::generalized);
  sw.tables.emplace(balancing, zero);
  for (const auto& g : c.generators()) {
    if (g.id == balancing) continue;
    try {
      sw.tables.emplace(g.id, gsdf_generalized(model, {g.id, balancing}, reference, opt));
    } catch (const Error&) {
    }
  }
  return sw;
}

/// GSDF(target, a) through the sweep's common balancing generator.
inline GsdfTable sweep_pair(const GsdfSweep& sw, int target, int a) {
  const auto* tb = sw.find(target);
  const auto* ab = sw.find(a);
  if (!tb || !ab) fail(ErrorCode::mismatched_tables, "sweep has no table for generator " + std::to_string(tb ? a : target));
  if (target == sw.balancing) {
    GsdfTable out = *ab;
    out.values = -ab->values;
    out.trade = {target, a};
    return out;
  }
  if (a == sw.balancing) return *tb;
  GsdfTable ba = *ab;  // GSDF(B, A) = -GSDF(A, B)
  ba.values = -ab->values;
  ba.trade = {sw.balancing, a};
  return gsdf_rebase(*tb, ba);
}

/// Generator whose reduction most relieves the event. Eligible generators move the flow
/// toward zero when backed down and have room to go down.
inline int select_target_generator(const CongestionEvent& ev, const NetworkCase& c, const GsdfSweep& sw, const Eigen::VectorXd& p,
                                   double threshold = 0.01, double headroom_tol_mw = 1e-6) {
  auto k = static_cast<Eigen::Index>(c.branch_index(ev.branch));
  int best = 0;
  double best_mag = -1.0, best_cost = 0.0;
  for (const auto& [gen, tab] : sw.tables) {
    if (gen == sw.balancing) continue;
    double v = tab.values[k];
    if (std::abs(v) < threshold || v * ev.flow >= 0.0) continue;
    if (down_headroom(c, p, gen) <= headroom_tol_mw) continue;
    double cost = unit_redispatch_cost(c, p, gen, sw.balancing);
    double mag = std::abs(v);
    bool better = mag > best_mag + 1e-12 || (std::abs(mag - best_mag) <= 1e-12 && (cost < best_cost || (cost == best_cost && gen < best)));
    if (best_mag < 0.0 || better) best = gen, best_mag = mag, best_cost = cost;
  }
  if (best_mag < 0.0)
    fail(ErrorCode::no_effective_generator, "no generator with |GSDF| >= " + fmt6(threshold) + " relieves branch " + std::to_string(ev.branch));
  return best;
}

/// Balancing generator for a chosen target: among the electrically farther half of the
/// generators with room to go up, the one whose trade relieves the branch most.
inline int select_balancing_generator(const CongestionEvent& ev, int target, const NetworkCase& c, const ImpedanceMatrix& z, const GsdfSweep& sw,
                                      const Eigen::VectorXd& p, double threshold = 0.01, double headroom_tol_mw = 1e-6) {
  const int tbus = c.generator(target).bus;
  struct Cand {
    int id;
    double dist;
  };
  std::vector<Cand> cands;
  for (const auto& g : c.generators()) {
    if (g.id == target || g.bus == tbus) continue;
    cands.push_back({g.id, electric_distance(z, tbus, g.bus)});
  }
  if (cands.empty()) fail(ErrorCode::no_candidate, "no generator away from the target's bus");
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.dist > b.dist; });
  cands.resize((cands.size() + 1) / 2);
  std::erase_if(cands, [&](const Cand& a) { return up_headroom(c, p, a.id) <= headroom_tol_mw; });
  if (cands.empty()) fail(ErrorCode::no_candidate, "no distant generator has upward headroom");

  auto k = static_cast<Eigen::Index>(c.branch_index(ev.branch));
  int best = 0;
  double best_relief = -1.0, best_cost = 0.0;
  for (const auto& a : cands) {
    if (!sw.find(a.id)) continue;
    double v = sweep_pair(sw, target, a.id).values[k];
    if (std::abs(v) < threshold || v * ev.flow >= 0.0) continue;
    double cost = unit_redispatch_cost(c, p, target, a.id);
    double relief = std::abs(v);
    bool better = relief > best_relief + 1e-12 || (std::abs(relief - best_relief) <= 1e-12 && (cost < best_cost || (cost == best_cost && a.id < best)));
    if (best_relief < 0.0 || better) best = a.id, best_relief = relief, best_cost = cost;
  }
  if (best_relief < 0.0) return cands.front().id;  // farthest
  return best;
}

/// MW to move so the flow lands a margin inside the limit. Throws when either side lacks room.
inline double compute_shift(const CongestionEvent& ev, double gsdf_value, int target, int balancing, const NetworkCase& c, const Eigen::VectorXd& p,
                            double margin_fraction = 0.01) {
  if (gsdf_value == 0.0) fail(ErrorCode::no_effective_generator, "zero GSDF");
  double need = (ev.overload + margin_fraction * ev.limit) / std::abs(gsdf_value);
  double room = std::min(down_headroom(c, p, target), up_headroom(c, p, balancing));
  if (need > room)
    fail(ErrorCode::insufficient_headroom, "shift of " + fmt6(need) + " MW exceeds headroom " + fmt6(room) + " MW between generators " +
                                               std::to_string(target) + " and " + std::to_string(balancing));
  return need;
}

namespace detail {

inline OpfSolution resolve_at(const OpfModel& m, double scale, const Eigen::VectorXd& p, const OpfOptions& opt) {
  OpfProblem pr;
  pr.model = FlowModel::linac;
  pr.load_scale = scale;
  pr.dispatch_mw = p;
  return m.solve(pr, opt);
}

}  // namespace detail

/// One hour. `bounds` sets limits for the managed branches; those are relaxed in the
/// market-clearing OPF so congestion shows up there and is handled by redispatch.
/// Never throws on management failure; the outcome carries the error text.
inline HourOutcome manage_hour_outcome(const OpfModel& model, const ImpedanceMatrix& z, std::size_t hour, const std::map<int, double>& bounds,
                                       int managed_branch, const CongestionOptions& opt = {}) {
  const auto& c = model.network();
  HourOutcome out;
  out.hour = hour;
  const auto km = c.branch_index(managed_branch);

  OpfProblem pr;
  pr.model = FlowModel::linac;
  pr.hour = hour;
  for (const auto& [id, b] : bounds) pr.unmonitored.insert(id);
  OpfSolution cur = model.solve(pr, opt.opf);
  if (cur.status != OpfStatus::optimal) {
    out.error = "pre-management OPF: " + cur.diagnostic;
    return out;
  }
  out.load_scale = cur.load_scale;
  out.pre_flow = cur.flows.flow_magnitude(km);
  Eigen::VectorXd p = cur.p;

  // Re-solve at the market dispatch so the reference and every later re-solve come from
  // the same power-flow mode (voltage limits drop out, the slack moves a fraction of a MW).
  cur = detail::resolve_at(model, out.load_scale, p, opt.opf);
  if (cur.status != OpfStatus::optimal) {
    out.error = "fixed-dispatch solve: " + cur.diagnostic;
    return out;
  }
  p = cur.p;

  try {
    for (;;) {
      auto events = detect_congestion(c, cur.flows, bounds, hour);
      if (out.loops == 0) out.congested = !events.empty();
      if (events.empty()) {
        out.converged = true;
        break;
      }
      if (out.loops >= opt.loop_limit) fail(ErrorCode::loop_limit_exceeded, "branch " + std::to_string(events.front().branch) + " still overloaded by " +
                                                                               fmt6(events.front().overload) + " MW after " +
                                                                               std::to_string(out.loops) + " actions");
      ++out.loops;
      const auto& ev = events.front();
      int b = provisional_balancing(c, p);
      auto sw = gsdf_sweep(model, cur, b, opt.gsdf);
      int t = 0;
      try {
        t = select_target_generator(ev, c, sw, p, opt.gsdf_threshold, opt.headroom_tol_mw);
      } catch (const Error& e) {
        // Measured against itself the provisional unit scores zero, so it is never picked.
        // When it is the one feeding the branch, measure again against another unit.
        if (e.code() != ErrorCode::no_effective_generator || c.generator_count() < 2) throw;
        sw = gsdf_sweep(model, cur, provisional_balancing(c, p, b), opt.gsdf);
        t = select_target_generator(ev, c, sw, p, opt.gsdf_threshold, opt.headroom_tol_mw);
      }
      int a = select_balancing_generator(ev, t, c, z, sw, p, opt.gsdf_threshold, opt.headroom_tol_mw);
      double g = sweep_pair(sw, t, a).at_branch(ev.branch);
      RedispatchAction act;
      act.hour = hour;
      act.branch = ev.branch;
      act.target = t;
      act.balancing = a;
      act.gsdf = g;
      try {
        act.shift_mw = compute_shift(ev, g, t, a, c, p, opt.margin_fraction);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::insufficient_headroom) throw;
        act.shift_mw = std::min(down_headroom(c, p, t), up_headroom(c, p, a));
        act.partial = true;
      }
      act.predicted_change = act.shift_mw * g;
      act.flow_before = cur.flows.through_flow(c.branch_index(ev.branch));
      p[static_cast<Eigen::Index>(c.generator_index(t))] -= act.shift_mw;
      p[static_cast<Eigen::Index>(c.generator_index(a))] += act.shift_mw;
      OpfSolution next = detail::resolve_at(model, out.load_scale, p, opt.opf);
      if (next.status != OpfStatus::optimal) fail(ErrorCode::infeasible, "re-solve after redispatch: " + next.diagnostic);
      cur = std::move(next);
      p = cur.p;
      act.flow_after = cur.flows.through_flow(c.branch_index(ev.branch));
      act.generation_after = p.sum();
      act.loss_after = cur.flows.branch_loss.sum();
      out.actions.push_back(act);
    }
  } catch (const Error& e) {
    out.error = std::string(to_string(e.code())) + ": " + e.what();
  }
  out.dispatch = p;
  out.post_state = cur.flows;
  out.post_flows = cur.flows.flow_magnitudes();
  out.post_flow = out.post_flows[static_cast<Eigen::Index>(km)];
  return out;
}

/// Throwing wrapper for a single hour.
inline HourOutcome manage_hour(const NetworkCase& c, std::size_t hour, const std::map<int, double>& bounds, int managed_branch,
                               const CongestionOptions& opt = {}) {
  OpfModel model(c);
  auto z = build_impedance_matrix(c);
  auto h = manage_hour_outcome(model, z, hour, bounds, managed_branch, opt);
  if (!h.error.empty()) {
    auto code = ErrorCode::infeasible;
    for (auto e : {ErrorCode::loop_limit_exceeded, ErrorCode::no_effective_generator, ErrorCode::no_candidate, ErrorCode::insufficient_headroom})
      if (h.error.rfind(std::string(to_string(e)) + ":", 0) == 0) code = e;
    fail(code, "hour " + std::to_string(hour) + ": " + h.error);
  }
  return h;
}

/// Volatility of the managed flow: mean relative deviation of the managed flow from the
/// bound over congested hours, in percent.
inline VolatilityReport volatility(const std::vector<int>& congested, const std::vector<double>& t0, const std::vector<double>& t1, double bound = 0.0,
                                   int branch = 0) {
  if (congested.size() != t0.size() || t0.size() != t1.size()) fail(ErrorCode::validation_error, "volatility inputs differ in length");
  VolatilityReport r;
  r.branch = branch;
  r.bound = bound;
  r.congested = congested;
  r.t0 = t0;
  r.t1 = t1;
  double sum = 0.0;
  int n = 0;
  for (std::size_t t = 0; t < t0.size(); ++t) {
    if (!congested[t]) continue;
    if (!(t0[t] > 0.0)) fail(ErrorCode::validation_error, "volatility needs a positive reference flow in congested hours");
    sum += (t1[t] / t0[t] - 1.0) * 100.0;
    ++n;
  }
  r.defined = n > 0;
  r.vol_percent = n ? sum / n : 0.0;
  return r;
}

struct HorizonResult {
  ManagementResult management;
  VolatilityReport volatility;
};

/// Runs every profile hour with one managed branch held at `bound_mw`.
inline HorizonResult simulate_horizon(const NetworkCase& c, int managed_branch, double bound_mw, const CongestionOptions& opt = {}) {
  if (c.load_profile().empty()) fail(ErrorCode::validation_error, "case has no load profile");
  c.branch_index(managed_branch);
  if (!(bound_mw > 0.0)) fail(ErrorCode::validation_error, "bound must be positive");
  OpfModel model(c);
  auto z = build_impedance_matrix(c);
  std::map<int, double> bounds{{managed_branch, bound_mw}};
  HorizonResult res;
  std::vector<int> flags;
  std::vector<double> t0, t1;
  for (std::size_t h = 0; h < c.load_profile().size(); ++h) {
    auto o = manage_hour_outcome(model, z, h, bounds, managed_branch, opt);
    res.management.converged = res.management.converged && o.error.empty();
    res.management.loops += o.loops;
    res.management.actions.insert(res.management.actions.end(), o.actions.begin(), o.actions.end());
    flags.push_back(o.congested ? 1 : 0);
    t0.push_back(bound_mw);
    t1.push_back(o.post_flow);
    res.management.hours.push_back(std::move(o));
  }
  res.volatility = volatility(flags, t0, t1, bound_mw, managed_branch);
  return res;
}

inline std::string timeline_csv(const HorizonResult& r) {
  CsvWriter w({"hour", "load_scale", "pre_flow", "post_flow", "bound", "S_t", "actions", "status"});
  for (const auto& h : r.management.hours)
    w.row({std::to_string(h.hour), fmt6(h.load_scale), fmt6(h.pre_flow), fmt6(h.post_flow), fmt6(r.volatility.bound), h.congested ? "1" : "0",
           std::to_string(h.actions.size()), h.error.empty() ? "ok" : "failed"});
  return w.str();
}

inline std::string actions_csv(const ManagementResult& m) {
  CsvWriter w({"hour", "branch", "target", "balancing", "shift_mw", "gsdf", "predicted_change", "flow_before", "flow_after", "partial"});
  for (const auto& a : m.actions)
    w.row({std::to_string(a.hour), std::to_string(a.branch), std::to_string(a.target), std::to_string(a.balancing), fmt6(a.shift_mw), fmt6(a.gsdf),
           fmt6(a.predicted_change), fmt6(a.flow_before), fmt6(a.flow_after), a.partial ? "1" : "0"});
  return w.str();
}

inline nlohmann::json volatility_json(const HorizonResult& r) {
  const auto& v = r.volatility;
  nlohmann::json j;
  j["branch"] = v.branch;
  j["bound_mw"] = v.bound;
  j["vol_percent"] = v.vol_percent;
  j["defined"] = v.defined;
  int n = 0;
  for (int s : v.congested) n += s;
  j["congested_hours"] = n;
  j["S_t"] = v.congested;
  j["converged"] = r.management.converged;
  nlohmann::json failed = nlohmann::json::array();
  for (const auto& h : r.management.hours)
    if (!h.error.empty()) failed.push_back({{"hour", h.hour}, {"error", h.error}});
  j["failed_hours"] = failed;
  double shifted = 0.0;
  for (const auto& a : r.management.actions) shifted += a.shift_mw;
  j["total_shift_mw"] = shifted;
  return j;
}

}  // namespace gridshift
