#pragma once

// Generation shift distribution factors computed three ways (DC closed form,
// generalized via the linearized model plus an anchored OPF simulation, and an AC
// finite-difference benchmark), rebasing across balancing generators, electric
// distance, and the side-by-side precision report.
//
// Sign convention: a value is the change of the from->to branch flow per unit of
// output moved from the target generator to the balancing generator (target down,
// balancing up). Under this convention GSDF(T, A) = GSDF(T, B) + GSDF(B, A).

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "gridshift/error.hpp"
#include "gridshift/io.hpp"
#include "gridshift/netmodel.hpp"
#include "gridshift/opf.hpp"
#include "gridshift/powerflow.hpp"

namespace gridshift {

struct TradePair {
  int target = 0;
  int balancing = 0;
};

enum class GsdfMethod { dc, generalized, ac_benchmark };

inline std::string_view to_string(GsdfMethod m) {
  switch (m) {
    case GsdfMethod::dc: return "dc";
    case GsdfMethod::generalized: return "generalized";
    case GsdfMethod::ac_benchmark: return "ac";
  }
  return "dc";
}

inline constexpr std::string_view kGsdfSignConvention = "flow change per unit shifted from target to balancing, from->to orientation";

struct GsdfTable {
  TradePair trade;
  GsdfMethod method = GsdfMethod::dc;
  Eigen::VectorXd values;  // per branch, case order
  std::vector<int> branch_ids;
  std::size_t case_fingerprint = 0;
  std::string sign_convention{kGsdfSignConvention};

  double at_branch(int branch_id) const {
    for (std::size_t k = 0; k < branch_ids.size(); ++k)
      if (branch_ids[k] == branch_id) return values[static_cast<Eigen::Index>(k)];
    fail(ErrorCode::validation_error, "branch " + std::to_string(branch_id) + " not in GSDF table");
  }
};

/// Topology and impedance hash, so tables from different cases are never combined.
inline std::size_t case_fingerprint(const NetworkCase& c) {
  std::size_t h = std::hash<double>{}(c.base_mva());
  auto mix = [&h](std::size_t v) { h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2); };
  for (const auto& br : c.branches()) {
    mix(std::hash<int>{}(br.id));
    mix(std::hash<int>{}(br.from_bus));
    mix(std::hash<int>{}(br.to_bus));
    mix(std::hash<double>{}(br.x));
    mix(std::hash<double>{}(br.r));
  }
  for (const auto& g : c.generators()) mix(std::hash<int>{}(g.bus));
  return h;
}

inline void validate_trade(const NetworkCase& c, const TradePair& t) {
  if (!c.has_generator(t.target)) fail(ErrorCode::validation_error, "unknown target generator " + std::to_string(t.target));
  if (!c.has_generator(t.balancing)) fail(ErrorCode::validation_error, "unknown balancing generator " + std::to_string(t.balancing));
  if (t.target == t.balancing) fail(ErrorCode::validation_error, "target and balancing generator must differ");
}

namespace detail {

inline GsdfTable empty_table(const NetworkCase& c, const TradePair& t, GsdfMethod m) {
  GsdfTable tab;
  tab.trade = t;
  tab.method = m;
  tab.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.branch_count()));
  for (const auto& br : c.branches()) tab.branch_ids.push_back(br.id);
  tab.case_fingerprint = case_fingerprint(c);
  return tab;
}

/// DC angle response to +1 p.u. at the target bus and -1 p.u. at the balancing bus.
inline Eigen::VectorXd dc_angle_response(const NetworkCase& c, const TradePair& t, const ReactanceMatrix& xmat) {
  auto k = static_cast<Eigen::Index>(c.bus_index(c.generator(t.target).bus));
  auto b = static_cast<Eigen::Index>(c.bus_index(c.generator(t.balancing).bus));
  return xmat.X.col(k) - xmat.X.col(b);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// DC
// ---------------------------------------------------------------------------

/// Reactance-matrix GSDF. Any slack works; with slack at the balancing bus the
/// expression reduces to -(X_ik - X_jk)/x_ij.
inline GsdfTable gsdf_dc(const NetworkCase& c, const TradePair& t, const ReactanceMatrix& xmat) {
  validate_trade(c, t);
  auto tab = detail::empty_table(c, t, GsdfMethod::dc);
  Eigen::VectorXd th = detail::dc_angle_response(c, t, xmat);
  for (std::size_t k = 0; k < c.branch_count(); ++k) {
    const auto& br = c.branches()[k];
    double dth = th[static_cast<Eigen::Index>(c.bus_index(br.from_bus))] - th[static_cast<Eigen::Index>(c.bus_index(br.to_bus))];
    tab.values[static_cast<Eigen::Index>(k)] = -dth / br.x;
  }
  return tab;
}

inline GsdfTable gsdf_dc(const NetworkCase& c, const TradePair& t) {
  return gsdf_dc(c, t, build_reactance_matrix(c, c.generator(t.balancing).bus));
}

// ---------------------------------------------------------------------------
// Generalized
// ---------------------------------------------------------------------------

enum class ThetaPath {
  reactance,  // angle sensitivity from the reactance matrix
  simulated,  // angle change read from the anchored simulation
};

struct GsdfOptions {
  double delta_mw = 0.1;
  double epsilon_mw = 0.01;
  ThetaPath theta_path = ThetaPath::simulated;
  ReactiveAnchor reactive = ReactiveAnchor::voltage;
  OpfOptions opf = anchored_opf_defaults();

  static OpfOptions anchored_opf_defaults() {
    OpfOptions o;
    o.tol = 1e-12;
    o.max_iter = 60;
    return o;
  }
};

/// Raw pieces of one anchored simulation, per unit of injection moved to the target.
struct AnchoredResponse {
  Eigen::VectorXd d_theta;  // per bus
  Eigen::VectorXd d_u;      // per bus
  double delta_pu = 0.0;    // signed step actually applied
};

inline AnchoredResponse simulate_anchored_response(const OpfModel& model, const TradePair& t, const OpfSolution& reference,
                                                   const GsdfOptions& opt) {
  const auto& c = model.network();
  validate_trade(c, t);
  if (reference.status != OpfStatus::optimal || reference.flows.model != FlowModel::linac)
    fail(ErrorCode::validation_error, "generalized GSDF needs an optimal linearized OPF reference");

  // Step downward when the upward trade has no room.
  const auto& tg = c.generator(t.target);
  const auto& bg = c.generator(t.balancing);
  double p_t = reference.p[static_cast<Eigen::Index>(c.generator_index(t.target))];
  double p_b = reference.p[static_cast<Eigen::Index>(c.generator_index(t.balancing))];
  double d = std::abs(opt.delta_mw);
  const double room = d + opt.epsilon_mw;
  bool up_ok = p_t + d <= c.to_mw(tg.p_max) + 1e-9 && p_b - room >= c.to_mw(bg.p_min) - 1e-9;
  bool down_ok = p_t - d >= c.to_mw(tg.p_min) - 1e-9 && p_b + room <= c.to_mw(bg.p_max) + 1e-9;
  if (!up_ok && !down_ok)
    fail(ErrorCode::infeasible, "no room to trade " + std::to_string(d) + " MW between generators " + std::to_string(t.target) + " and " +
                                    std::to_string(t.balancing));
  if (!up_ok) d = -d;

  OpfProblem pr;
  pr.model = FlowModel::linac;
  pr.load_scale = reference.load_scale;
  AnchorConstraints a;
  a.reference = reference;
  a.target = t.target;
  a.balancing = t.balancing;
  a.epsilon_mw = opt.epsilon_mw;
  a.reactive = opt.reactive;

  a.delta_mw = 0.0;
  pr.anchors = a;
  OpfSolution base = model.solve(pr, opt.opf);
  if (base.status != OpfStatus::optimal) fail(ErrorCode::infeasible, "anchored baseline failed: " + base.diagnostic);

  pr.anchors->delta_mw = d;
  OpfSolution moved = model.solve(pr, opt.opf);
  if (moved.status != OpfStatus::optimal) fail(ErrorCode::infeasible, "anchored perturbation failed: " + moved.diagnostic);

  AnchoredResponse r;
  r.delta_pu = c.to_pu(d);
  r.d_theta = (moved.flows.theta - base.flows.theta) / r.delta_pu;
  r.d_u = (moved.flows.v_sq - base.flows.v_sq) / r.delta_pu;
  return r;
}

/// Chain rule on the loss-free linearized flow: dP/dU * dU/dP_k + dP/dtheta * dtheta/dP_k,
/// with the voltage term simulated through the anchored OPF.
inline GsdfTable gsdf_generalized(const OpfModel& model, const TradePair& t, const OpfSolution& reference, const GsdfOptions& opt = {}) {
  const auto& c = model.network();
  auto resp = simulate_anchored_response(model, t, reference, opt);
  Eigen::VectorXd dth = resp.d_theta;
  if (opt.theta_path == ThetaPath::reactance) dth = detail::dc_angle_response(c, t, model.reactance());
  auto tab = detail::empty_table(c, t, GsdfMethod::generalized);
  for (std::size_t k = 0; k < c.branch_count(); ++k) {
    const auto& br = c.branches()[k];
    auto f = static_cast<Eigen::Index>(c.bus_index(br.from_bus));
    auto to = static_cast<Eigen::Index>(c.bus_index(br.to_bus));
    double du = resp.d_u[f] - resp.d_u[to];
    double dt = dth[f] - dth[to];
    tab.values[static_cast<Eigen::Index>(k)] = -(br.g / 2.0 * du - br.b * dt);
  }
  return tab;
}

inline GsdfTable gsdf_generalized(const NetworkCase& c, const TradePair& t, const OpfSolution& reference, const GsdfOptions& opt = {}) {
  return gsdf_generalized(OpfModel(c), t, reference, opt);
}

// ---------------------------------------------------------------------------
// AC benchmark
// ---------------------------------------------------------------------------

/// Central difference of AC through-flows, (P_ij - P_ji)/2, at the reference dispatch
/// with the trade applied as +-delta. The case slack absorbs the loss change.
inline GsdfTable gsdf_ac_benchmark(const NetworkCase& c, const TradePair& t, const OpfSolution& reference, double delta_mw = 0.1,
                                   const SolverOptions& sopt = {1e-10, 30, 3, true}) {
  validate_trade(c, t);
  if (reference.status != OpfStatus::optimal) fail(ErrorCode::validation_error, "AC benchmark needs an optimal reference dispatch");
  auto tab = detail::empty_table(c, t, GsdfMethod::ac_benchmark);
  const auto ti = static_cast<Eigen::Index>(c.generator_index(t.target));
  const auto bi = static_cast<Eigen::Index>(c.generator_index(t.balancing));
  Eigen::VectorXd q = bus_load_q_mvar(c, reference.load_scale);
  auto run = [&](double d) {
    Eigen::VectorXd p = reference.p;
    p[ti] += d;
    p[bi] -= d;
    return solve_ac_newton(c, bus_injections_mw(c, p, reference.load_scale), q, sopt);
  };
  auto up = run(delta_mw);
  auto dn = run(-delta_mw);
  for (std::size_t k = 0; k < c.branch_count(); ++k)
    tab.values[static_cast<Eigen::Index>(k)] = -(up.through_flow(k) - dn.through_flow(k)) / (2.0 * delta_mw);
  return tab;
}

// ---------------------------------------------------------------------------
// Rebase, distance, report
// ---------------------------------------------------------------------------

/// GSDF(T, A) from GSDF(T, B) and GSDF(B, A): the second table moves output from the
/// old balancing generator B to the new one A.
inline GsdfTable gsdf_rebase(const GsdfTable& gsdf_b, const GsdfTable& gsdf_ab) {
  if (gsdf_b.method != gsdf_ab.method) fail(ErrorCode::mismatched_tables, "cannot rebase across GSDF methods");
  if (gsdf_b.case_fingerprint != gsdf_ab.case_fingerprint || gsdf_b.branch_ids != gsdf_ab.branch_ids)
    fail(ErrorCode::mismatched_tables, "cannot rebase tables from different cases");
  if (gsdf_ab.trade.target != gsdf_b.trade.balancing)
    fail(ErrorCode::mismatched_tables, "second table must take the first table's balancing generator as its target");
  GsdfTable out = gsdf_b;
  out.values = gsdf_b.values + gsdf_ab.values;
  out.trade.balancing = gsdf_ab.trade.balancing;
  return out;
}

/// |Z_ii - 2 Z_ij + Z_jj|, the driving-point impedance between two buses.
inline double electric_distance(const ImpedanceMatrix& z, int bus_i, int bus_j) {
  if (bus_i == bus_j) return 0.0;
  auto i = z.index.at(bus_i), j = z.index.at(bus_j);
  return std::abs(z(i, i) - 2.0 * z(i, j) + z(j, j));
}

struct PrecisionRow {
  int branch_id = 0;
  int from = 0;
  int to = 0;
  double dc = 0.0;
  double generalized = 0.0;
  double ac = 0.0;
};

struct PrecisionReport {
  TradePair trade;
  std::vector<PrecisionRow> rows;
  double dc_abs_dev = 0.0;           // sum |dc - ac|
  double generalized_abs_dev = 0.0;  // sum |generalized - ac|

  std::string to_csv() const {
    CsvWriter w({"branch_id", "from", "to", "dc", "generalized", "ac"});
    for (const auto& r : rows)
      w.row({std::to_string(r.branch_id), std::to_string(r.from), std::to_string(r.to), fmt6(r.dc), fmt6(r.generalized), fmt6(r.ac)});
    return w.str();
  }
};

inline PrecisionReport make_precision_report(const NetworkCase& c, const GsdfTable& dc, const GsdfTable& gen, const GsdfTable& ac) {
  PrecisionReport rep;
  rep.trade = dc.trade;
  for (std::size_t k = 0; k < c.branch_count(); ++k) {
    auto kk = static_cast<Eigen::Index>(k);
    const auto& br = c.branches()[k];
    rep.rows.push_back({br.id, br.from_bus, br.to_bus, dc.values[kk], gen.values[kk], ac.values[kk]});
    rep.dc_abs_dev += std::abs(dc.values[kk] - ac.values[kk]);
    rep.generalized_abs_dev += std::abs(gen.values[kk] - ac.values[kk]);
  }
  return rep;
}

/// Solves the base-load linearized OPF and compares all three methods for one trade.
inline PrecisionReport precision_report(const NetworkCase& c, const TradePair& t, const GsdfOptions& opt = {}) {
  validate_trade(c, t);
  OpfModel model(c);
  OpfProblem pr;
  pr.model = FlowModel::linac;
  OpfSolution ref = expect_optimal(model.solve(pr, GsdfOptions::anchored_opf_defaults()));
  auto dc = gsdf_dc(c, t);
  auto gen = gsdf_generalized(model, t, ref, opt);
  auto ac = gsdf_ac_benchmark(c, t, ref, opt.delta_mw);
  return make_precision_report(c, dc, gen, ac);
}

}  // namespace gridshift
