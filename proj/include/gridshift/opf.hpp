#pragma once

// Minimum-cost dispatch over the DC or linearized AC network, and the anchored
// re-solve used to simulate sensitivities.
//
// Linearized formulation. Decision vector x = [p (every generator) ; u (every
// voltage-controlled bus, i.e. the slack and each generator bus)], per-unit. All
// other network quantities are affine in x through the constant LinacMap; the
// nodal balance of non-slack buses is therefore built in and only the slack balance
// remains as an equality row. Losses are fixed withdrawals taken from the previous
// pass, repeated until they settle.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gridshift/error.hpp"
#include "gridshift/netmodel.hpp"
#include "gridshift/powerflow.hpp"
#include "gridshift/qp.hpp"

namespace gridshift {

enum class OpfStatus { optimal, infeasible, iteration_limit };

inline std::string_view to_string(OpfStatus s) {
  switch (s) {
    case OpfStatus::optimal: return "optimal";
    case OpfStatus::infeasible: return "infeasible";
    case OpfStatus::iteration_limit: return "iteration-limit";
  }
  return "infeasible";
}

struct OpfSolution {
  OpfStatus status = OpfStatus::infeasible;
  Eigen::VectorXd p;  // MW per generator
  Eigen::VectorXd q;  // MVAr per generator
  PowerFlowSolution flows;
  double cost = 0.0;
  double load_scale = 1.0;
  int loss_passes = 0;
  int qp_iterations = 0;
  std::string diagnostic;  // violated constraint when not optimal
};

/// Anchoring against a solved reference (state 1). Target and balancing generator move
/// by +delta and -delta; a generator at the slack bus takes the loss change (it may be
/// one of the two). Every other generator stays inside [state1, state1 + epsilon], and
/// so does the reactive injection of every generator bus except the target's.
/// What anchoring holds at generator buses: their reactive injection (the literal
/// band above), or their voltage, which is what those buses hold in a power flow.
enum class ReactiveAnchor { injection, voltage };

struct AnchorConstraints {
  OpfSolution reference;
  int target = 0;     // generator id; its bus is the perturbed bus
  int balancing = 0;  // generator id
  double delta_mw = 0.1;
  double epsilon_mw = 0.01;
  ReactiveAnchor reactive = ReactiveAnchor::voltage;
};

struct OpfProblem {
  FlowModel model = FlowModel::linac;
  std::optional<std::size_t> hour;         // index into the case load profile
  std::optional<double> load_scale;        // overrides hour when set
  std::map<int, double> capacity_mw;       // per-branch limit overrides
  std::set<int> unmonitored;               // branches whose limit is dropped
  std::optional<AnchorConstraints> anchors;
  // Power-flow mode: every generator off the slack bus is pinned to this MW output, the
  // slack generators close the balance, and only reactive limits stay in force.
  std::optional<Eigen::VectorXd> dispatch_mw;
};

struct OpfOptions {
  double tol = 1e-9;          // loss settlement, p.u.
  int max_iter = 30;          // loss passes
  int loss_iterations = 3;    // minimum passes; 0 keeps the lossless model
  double voltage_weight = 1e6;  // $ per (p.u.^2)^2 pulling u toward its reference
  double min_quadratic = 1e-6;  // $/MW^2 floor keeping the Hessian definite
  double anchor_weight = 1e8;   // $ per p.u.^2 keeping anchored injections at the reference inside their bands
  double qp_feas_tol = 1e-10;
};

namespace detail {

enum class RowKind { p_band, q_lower, q_upper, u_lower, u_upper, line_upper, line_lower, u_box };

struct RowTag {
  RowKind kind;
  int index;  // generator, bus or branch position
};

}  // namespace detail

/// Case-bound solver state shared by repeated solves (the linear maps are built once).
class OpfModel {
 public:
  explicit OpfModel(const NetworkCase& c) : case_(c), map_(c, generator_voltage_control(c)) {
    const auto slack = c.slack_index();
    if (!c.bus_has_generator(slack)) fail(ErrorCode::validation_error, "slack bus " + std::to_string(c.slack_bus()) + " hosts no generator");
    n_ = static_cast<Eigen::Index>(c.bus_count());
    ng_ = static_cast<Eigen::Index>(c.generator_count());
    nv_ = static_cast<Eigen::Index>(map_.controlled().size());
    nx_ = ng_ + nv_;

    // Columns of S for each input block.
    const auto nns = static_cast<Eigen::Index>(map_.nonslack().size());
    const auto nl = static_cast<Eigen::Index>(map_.load_buses().size());
    Eigen::MatrixXd Gp_ns = Eigen::MatrixXd::Zero(nns, ng_);
    std::vector<Eigen::Index> pos(static_cast<std::size_t>(n_), -1);
    for (Eigen::Index a = 0; a < nns; ++a) pos[static_cast<std::size_t>(map_.nonslack()[static_cast<std::size_t>(a)])] = a;
    for (Eigen::Index g = 0; g < ng_; ++g) {
      auto b = pos[c.bus_index(c.generators()[static_cast<std::size_t>(g)].bus)];
      if (b >= 0) Gp_ns(b, g) = 1.0;
    }
    SP_ = map_.S().leftCols(nns);
    SQ_ = map_.S().middleCols(nns, nl);
    T_.resize(2 * n_, nx_);
    T_.leftCols(ng_) = SP_ * Gp_ns;
    T_.rightCols(nv_) = map_.S().rightCols(nv_);

    JPsT_ = map_.JP().row(static_cast<Eigen::Index>(slack)) * T_;
    JQT_ = map_.JQ() * T_;
    FT_ = map_.F() * T_;

    xmat_ = build_reactance_matrix(c);
    Eigen::MatrixXd Fdc = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.branch_count()), n_);
    for (std::size_t k = 0; k < c.branch_count(); ++k) {
      const auto& br = c.branches()[k];
      Fdc(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c.bus_index(br.from_bus))) = 1.0 / br.x;
      Fdc(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c.bus_index(br.to_bus))) = -1.0 / br.x;
    }
    ptdf_ = Fdc * xmat_.X;
  }

  const NetworkCase& network() const { return case_; }
  const LinacMap& linac_map() const { return map_; }
  const ReactanceMatrix& reactance() const { return xmat_; }

  static std::vector<bool> generator_voltage_control(const NetworkCase& c) {
    std::vector<bool> vc(c.bus_count(), false);
    for (std::size_t i = 0; i < c.bus_count(); ++i) vc[i] = c.bus_has_generator(i);
    return vc;
  }

  double resolve_load_scale(const OpfProblem& pr) const {
    if (pr.load_scale) return *pr.load_scale;
    if (!pr.hour) return 1.0;
    const auto& prof = case_.load_profile();
    if (prof.empty()) fail(ErrorCode::validation_error, "case has no load profile but an hour was requested");
    if (*pr.hour >= prof.size()) fail(ErrorCode::validation_error, "hour " + std::to_string(*pr.hour) + " outside the load profile");
    return prof[*pr.hour];
  }

  double branch_limit_pu(const OpfProblem& pr, std::size_t k) const {
    const auto& br = case_.branches()[k];
    auto it = pr.capacity_mw.find(br.id);
    return it == pr.capacity_mw.end() ? br.capacity : case_.to_pu(it->second);
  }

  OpfSolution solve(const OpfProblem& pr, const OpfOptions& opt = {}) const {
    if (pr.model == FlowModel::ac) fail(ErrorCode::validation_error, "OPF supports the dc and linac models");
    if (pr.anchors) check_anchors(*pr.anchors);
    if (pr.dispatch_mw) {
      if (pr.anchors) fail(ErrorCode::validation_error, "a fixed dispatch cannot carry anchors");
      if (pr.dispatch_mw->size() != ng_) fail(ErrorCode::validation_error, "dispatch length differs from generator count");
    }
    return pr.model == FlowModel::dc ? solve_dc_opf(pr, opt) : solve_linac_opf(pr, opt);
  }

 private:
  void check_anchors(const AnchorConstraints& a) const {
    if (a.reference.status != OpfStatus::optimal) fail(ErrorCode::validation_error, "anchor reference is not an optimal solution");
    if (!case_.has_generator(a.target) || !case_.has_generator(a.balancing))
      fail(ErrorCode::validation_error, "anchor generators must exist in the case");
    if (a.target == a.balancing) fail(ErrorCode::validation_error, "target and balancing generator must differ");
    // The band has to hold the loss change of the trade (about 5% of delta), so the
    // bound is delta/10 rather than anything tighter.
    if (!(a.epsilon_mw >= 0.0)) fail(ErrorCode::validation_error, "anchor epsilon must be non-negative");
    if (a.delta_mw != 0.0 && a.epsilon_mw > std::abs(a.delta_mw) / 10.0 + 1e-15)
      fail(ErrorCode::validation_error, "anchor epsilon must not exceed delta/10");
    if (a.reference.p.size() != ng_) fail(ErrorCode::validation_error, "anchor reference belongs to another case");
  }

  /// Per-generator bounds (p.u.), including the anchor bands.
  void generator_bounds(const OpfProblem& pr, Eigen::VectorXd& lo, Eigen::VectorXd& hi, std::vector<bool>& fixed) const {
    lo.resize(ng_);
    hi.resize(ng_);
    fixed.assign(static_cast<std::size_t>(ng_), false);
    for (Eigen::Index g = 0; g < ng_; ++g) {
      lo[g] = case_.generators()[static_cast<std::size_t>(g)].p_min;
      hi[g] = case_.generators()[static_cast<std::size_t>(g)].p_max;
    }
    if (pr.dispatch_mw) {
      const auto slack = case_.slack_index();
      for (Eigen::Index g = 0; g < ng_; ++g) {
        if (case_.bus_index(case_.generators()[static_cast<std::size_t>(g)].bus) == slack) {
          lo[g] = -std::numeric_limits<double>::infinity();
          hi[g] = std::numeric_limits<double>::infinity();
        } else {
          lo[g] = hi[g] = case_.to_pu((*pr.dispatch_mw)[g]);
          fixed[static_cast<std::size_t>(g)] = true;
        }
      }
      return;
    }
    if (!pr.anchors) return;
    const auto& a = *pr.anchors;
    const double d = case_.to_pu(a.delta_mw), e = case_.to_pu(a.epsilon_mw);
    const auto tg = static_cast<Eigen::Index>(case_.generator_index(a.target));
    const auto bg = static_cast<Eigen::Index>(case_.generator_index(a.balancing));
    const auto absorber = loss_absorber(tg, bg);
    for (Eigen::Index g = 0; g < ng_; ++g) {
      const auto& gen = case_.generators()[static_cast<std::size_t>(g)];
      double p1 = case_.to_pu(a.reference.p[g]);
      double blo = p1, bhi = p1 + e;
      if (g == absorber) continue;  // box limits only
      if (g == tg || g == bg) {
        blo = bhi = g == tg ? p1 + d : p1 - d;
        fixed[static_cast<std::size_t>(g)] = true;
        if (blo > gen.p_max + 1e-12 || blo < gen.p_min - 1e-12) {
          lo[g] = 1.0;
          hi[g] = 0.0;  // forces an infeasible report below
          continue;
        }
      }
      lo[g] = std::max(lo[g], blo);
      hi[g] = std::min(hi[g], bhi);
    }
  }

  // Who takes the loss change of an anchored trade: a generator at the slack bus, as in
  // the AC benchmark. Target and balancing then move by exactly +-delta unless one of
  // them is that generator, and responses of different trades add up.
  Eigen::Index loss_absorber(Eigen::Index tg, Eigen::Index bg) const {
    const auto slack = case_.slack_index();
    auto at_slack = [&](Eigen::Index g) { return case_.bus_index(case_.generators()[static_cast<std::size_t>(g)].bus) == slack; };
    if (at_slack(bg)) return bg;
    if (at_slack(tg)) return tg;
    return static_cast<Eigen::Index>(case_.generators_by_bus()[slack].front());
  }

  OpfSolution infeasible(const std::string& why) const {
    OpfSolution s;
    s.status = OpfStatus::infeasible;
    s.diagnostic = why;
    return s;
  }

  std::string describe(const detail::RowTag& t) const {
    switch (t.kind) {
      case detail::RowKind::p_band:
        return "active limit of generator " + std::to_string(case_.generators()[static_cast<std::size_t>(t.index)].id);
      case detail::RowKind::q_lower:
      case detail::RowKind::q_upper:
        return "reactive limit at bus " + std::to_string(case_.buses()[static_cast<std::size_t>(t.index)].id);
      case detail::RowKind::u_lower:
      case detail::RowKind::u_upper:
      case detail::RowKind::u_box:
        return "voltage limit at bus " + std::to_string(case_.buses()[static_cast<std::size_t>(t.index)].id);
      case detail::RowKind::line_upper:
      case detail::RowKind::line_lower:
        return "thermal limit of branch " + std::to_string(case_.branches()[static_cast<std::size_t>(t.index)].id);
    }
    return "constraint";
  }

  OpfSolution from_qp_failure(const QpResult& r, const std::vector<detail::RowTag>& tags) const {
    OpfSolution s;
    s.status = r.status == QpStatus::iteration_limit ? OpfStatus::iteration_limit : OpfStatus::infeasible;
    if (r.violated >= 0 && static_cast<std::size_t>(r.violated) < tags.size()) s.diagnostic = describe(tags[static_cast<std::size_t>(r.violated)]);
    else s.diagnostic = std::string("QP ") + std::string(to_string(r.status));
    s.qp_iterations = r.iterations;
    return s;
  }

  double generation_cost(const Eigen::VectorXd& p_mw) const {
    double c = 0.0;
    for (Eigen::Index g = 0; g < ng_; ++g) c += case_.generators()[static_cast<std::size_t>(g)].cost_mw(p_mw[g]);
    return c;
  }

  /// Adds two one-sided rows lo <= a x + c <= hi.
  static void push_range(std::vector<Eigen::RowVectorXd>& rows, std::vector<double>& rhs, std::vector<detail::RowTag>& tags,
                         const Eigen::RowVectorXd& a, double c, double lo, double hi, detail::RowTag tlo, detail::RowTag thi) {
    if (std::isfinite(lo)) {
      rows.push_back(a);
      rhs.push_back(lo - c);
      tags.push_back(tlo);
    }
    if (std::isfinite(hi)) {
      rows.push_back(-a);
      rhs.push_back(c - hi);
      tags.push_back(thi);
    }
  }

  OpfSolution solve_linac_opf(const OpfProblem& pr, const OpfOptions& opt) const {
    using detail::RowKind;
    using detail::RowTag;
    const double base = case_.base_mva();
    const double scale = resolve_load_scale(pr);
    const auto slack = static_cast<Eigen::Index>(case_.slack_index());
    const bool anchored = pr.anchors.has_value();
    const bool limits = !anchored && !pr.dispatch_mw;

    Eigen::VectorXd Pd(n_), Qd(n_);
    for (Eigen::Index i = 0; i < n_; ++i) {
      Pd[i] = case_.buses()[static_cast<std::size_t>(i)].load_p * scale;
      Qd[i] = case_.buses()[static_cast<std::size_t>(i)].load_q * scale;
    }
    Eigen::VectorXd plo, phi;
    std::vector<bool> pfixed;
    generator_bounds(pr, plo, phi, pfixed);
    for (Eigen::Index g = 0; g < ng_; ++g)
      if (plo[g] > phi[g] + 1e-12) return infeasible(describe({RowKind::p_band, static_cast<int>(g)}));

    // Reference voltages and reactive anchors.
    Eigen::VectorXd u_ref(nv_);
    for (Eigen::Index a = 0; a < nv_; ++a) {
      auto i = map_.controlled()[static_cast<std::size_t>(a)];
      u_ref[a] = anchored ? pr.anchors->reference.flows.v_sq[i] : std::pow(case_.buses()[static_cast<std::size_t>(i)].v_set, 2);
    }
    Eigen::VectorXd qlo = Eigen::VectorXd::Zero(n_), qhi = Eigen::VectorXd::Zero(n_);
    for (const auto& g : case_.generators()) {
      auto i = static_cast<Eigen::Index>(case_.bus_index(g.bus));
      qlo[i] += g.q_min;
      qhi[i] += g.q_max;
    }
    std::optional<Eigen::Index> target_bus;
    if (anchored) {
      target_bus = static_cast<Eigen::Index>(case_.bus_index(case_.generator(pr.anchors->target).bus));
      const auto& ref = pr.anchors->reference;
      const double e = case_.to_pu(pr.anchors->epsilon_mw);
      const bool hold_voltage = pr.anchors->reactive == ReactiveAnchor::voltage;
      for (Eigen::Index i = 0; i < n_; ++i) {
        if (!case_.bus_has_generator(static_cast<std::size_t>(i))) continue;
        if (hold_voltage) {
          qlo[i] = -std::numeric_limits<double>::infinity();
          qhi[i] = std::numeric_limits<double>::infinity();
          continue;
        }
        if (i == *target_bus) continue;
        // bus_q is the net injection; add the load back to get the generators' share.
        double q1 = case_.to_pu(ref.flows.bus_q[i]) + Qd[i];
        qlo[i] = q1;
        qhi[i] = q1 + e;
      }
    }

    // Objective.
    QpProblem qp;
    qp.H = Eigen::MatrixXd::Zero(nx_, nx_);
    qp.f = Eigen::VectorXd::Zero(nx_);
    for (Eigen::Index g = 0; g < ng_; ++g) {
      const auto& gen = case_.generators()[static_cast<std::size_t>(g)];
      qp.H(g, g) = 2.0 * std::max(gen.cost_a, opt.min_quadratic) * base * base;
      qp.f[g] = gen.cost_b * base;
    }
    for (Eigen::Index a = 0; a < nv_; ++a) {
      qp.H(ng_ + a, ng_ + a) = 2.0 * opt.voltage_weight;
      qp.f[ng_ + a] = -2.0 * opt.voltage_weight * u_ref[a];
    }
    // Inside a band the cost alone is nearly flat, and the solver would park injections
    // on either edge depending on round-off. Pull them to the reference instead.
    if (anchored) {
      const auto& a = *pr.anchors;
      const auto absorber = loss_absorber(static_cast<Eigen::Index>(case_.generator_index(a.target)),
                                          static_cast<Eigen::Index>(case_.generator_index(a.balancing)));
      for (Eigen::Index g = 0; g < ng_; ++g) {
        if (g == absorber || pfixed[static_cast<std::size_t>(g)]) continue;
        qp.H(g, g) += 2.0 * opt.anchor_weight;
        qp.f[g] -= 2.0 * opt.anchor_weight * case_.to_pu(a.reference.p[g]);
      }
    }
    const Eigen::MatrixXd H0 = qp.H;
    const Eigen::VectorXd f0 = qp.f;

    Eigen::VectorXd lp = Eigen::VectorXd::Zero(n_), lq = Eigen::VectorXd::Zero(n_), lbr = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(case_.branch_count()));
    if (anchored && opt.loss_iterations > 0) {
      const auto& ref = pr.anchors->reference.flows;
      auto [a, b] = linac_bus_losses(case_, ref.theta, ref.v_sq);
      lp = a;
      lq = b;
      lbr = ref.branch_loss / base;
    }

    OpfSolution out;
    out.load_scale = scale;
    Eigen::VectorXd x;
    Eigen::VectorXd state;
    int passes = 0;
    int qp_iters = 0;
    bool settled = opt.loss_iterations == 0;
    Eigen::VectorXd prev_step;
    for (;;) {
      // Constant part of the state for this pass.
      Eigen::VectorXd pns(static_cast<Eigen::Index>(map_.nonslack().size()));
      for (std::size_t a = 0; a < map_.nonslack().size(); ++a) {
        auto i = map_.nonslack()[a];
        pns[static_cast<Eigen::Index>(a)] = -Pd[i] - lp[i];
      }
      Eigen::VectorXd qn(static_cast<Eigen::Index>(map_.load_buses().size()));
      for (std::size_t a = 0; a < map_.load_buses().size(); ++a) {
        auto i = map_.load_buses()[a];
        qn[static_cast<Eigen::Index>(a)] = -Qd[i] - lq[i];
      }
      Eigen::VectorXd t0 = SP_ * pns + SQ_ * qn;
      qp.H = H0;
      qp.f = f0;

      // Slack balance: sum p at slack - Pd - lp = JP_slack * (T x + t0).
      Eigen::RowVectorXd aeq = -JPsT_;
      for (auto g : case_.generators_by_bus()[static_cast<std::size_t>(slack)]) aeq[static_cast<Eigen::Index>(g)] += 1.0;
      qp.A_eq = aeq;
      qp.b_eq = Eigen::VectorXd::Constant(1, Pd[slack] + lp[slack] + map_.JP().row(slack).dot(t0));

      std::vector<Eigen::RowVectorXd> rows;
      std::vector<double> rhs;
      std::vector<RowTag> tags;
      std::vector<Eigen::RowVectorXd> eq_rows;
      std::vector<double> eq_rhs;
      for (Eigen::Index g = 0; g < ng_; ++g) {
        Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(nx_);
        e[g] = 1.0;
        if (pfixed[static_cast<std::size_t>(g)]) {
          eq_rows.push_back(e);
          eq_rhs.push_back(plo[g]);
          continue;
        }
        push_range(rows, rhs, tags, e, 0.0, plo[g], phi[g], {RowKind::p_band, static_cast<int>(g)}, {RowKind::p_band, static_cast<int>(g)});
      }
      for (Eigen::Index a = 0; a < nv_; ++a) {
        auto i = map_.controlled()[static_cast<std::size_t>(a)];
        const auto& bus = case_.buses()[static_cast<std::size_t>(i)];
        if (anchored && pr.anchors->reactive == ReactiveAnchor::voltage) {
          Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(nx_);
          e[ng_ + a] = 1.0;
          eq_rows.push_back(e);
          eq_rhs.push_back(u_ref[a]);
          continue;
        }
        // Reactive output of the bus generators: JQ s + lq + Qd.
        Eigen::RowVectorXd aq = JQT_.row(i);
        double cq = map_.JQ().row(i).dot(t0) + lq[i] + Qd[i];
        if (anchored && i != *target_bus) {
          qp.H.noalias() += 2.0 * opt.anchor_weight * aq.transpose() * aq;
          qp.f.noalias() += 2.0 * opt.anchor_weight * (cq - qlo[i]) * aq.transpose();
        }
        push_range(rows, rhs, tags, aq, cq, qlo[i], qhi[i], {RowKind::q_lower, static_cast<int>(i)}, {RowKind::q_upper, static_cast<int>(i)});
        if (limits) {
          Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(nx_);
          e[ng_ + a] = 1.0;
          push_range(rows, rhs, tags, e, 0.0, bus.v_min * bus.v_min, bus.v_max * bus.v_max, {RowKind::u_box, static_cast<int>(i)},
                     {RowKind::u_box, static_cast<int>(i)});
        }
      }
      if (limits) {
        for (auto i : map_.load_buses()) {
          const auto& bus = case_.buses()[static_cast<std::size_t>(i)];
          push_range(rows, rhs, tags, T_.row(n_ + i), t0[n_ + i], bus.v_min * bus.v_min, bus.v_max * bus.v_max,
                     {RowKind::u_lower, static_cast<int>(i)}, {RowKind::u_upper, static_cast<int>(i)});
        }
        for (std::size_t k = 0; k < case_.branch_count(); ++k) {
          if (pr.unmonitored.count(case_.branches()[k].id)) continue;
          auto kk = static_cast<Eigen::Index>(k);
          double lim = branch_limit_pu(pr, k) - lbr[kk] / 2.0;
          double c = map_.F().row(kk).dot(t0);
          push_range(rows, rhs, tags, FT_.row(kk), c, -lim, lim, {RowKind::line_lower, static_cast<int>(k)},
                     {RowKind::line_upper, static_cast<int>(k)});
        }
      }
      if (!eq_rows.empty()) {
        Eigen::MatrixXd A(1 + static_cast<Eigen::Index>(eq_rows.size()), nx_);
        Eigen::VectorXd b(A.rows());
        A.row(0) = aeq;
        b[0] = qp.b_eq[0];
        for (std::size_t r = 0; r < eq_rows.size(); ++r) {
          A.row(static_cast<Eigen::Index>(r + 1)) = eq_rows[r];
          b[static_cast<Eigen::Index>(r + 1)] = eq_rhs[r];
        }
        qp.A_eq = A;
        qp.b_eq = b;
      }
      qp.A_in.resize(static_cast<Eigen::Index>(rows.size()), nx_);
      qp.b_in.resize(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        qp.A_in.row(static_cast<Eigen::Index>(r)) = rows[r];
        qp.b_in[static_cast<Eigen::Index>(r)] = rhs[r];
      }

      QpOptions qo;
      qo.feas_tol = opt.qp_feas_tol;
      QpResult r = solve_qp(qp, qo);
      qp_iters += r.iterations;
      if (r.status != QpStatus::optimal) return from_qp_failure(r, tags);
      x = r.x;
      state = T_ * x + t0;
      if (opt.loss_iterations == 0) break;

      auto [nlp, nlq] = linac_bus_losses(case_, state.head(n_), state.tail(n_));
      Eigen::VectorXd step(2 * n_);
      step << nlp - lp, nlq - lq;
      double change = step.cwiseAbs().maxCoeff();
      // A binding limit that moves with the losses makes the plain update alternate;
      // halving the step when it reverses direction damps that out.
      double w = prev_step.size() == step.size() && prev_step.dot(step) < 0.0 ? 0.5 : 1.0;
      prev_step = step;
      lp += w * step.head(n_);
      lq += w * step.tail(n_);
      auto sol = linac_solution_from_state(case_, state.head(n_), state.tail(n_));
      lbr = sol.branch_loss / base;
      ++passes;
      if (change < opt.tol && passes >= std::min(opt.loss_iterations, opt.max_iter)) {
        settled = true;
        break;
      }
      if (passes >= opt.max_iter) break;
    }
    if (!settled) {
      OpfSolution s;
      s.status = OpfStatus::iteration_limit;
      s.diagnostic = "loss settlement did not converge";
      return s;
    }

    out.status = OpfStatus::optimal;
    out.p = x.head(ng_) * base;
    out.flows = linac_solution_from_state(case_, state.head(n_), state.tail(n_), opt.loss_iterations > 0);
    out.flows.converged = true;
    out.flows.iterations = passes;
    out.q = distribute_q(out.flows.bus_q, Qd * base);
    out.cost = generation_cost(out.p);
    out.loss_passes = passes;
    out.qp_iterations = qp_iters;
    return out;
  }

  /// Splits each bus's reactive output over its generators in proportion to their ranges.
  Eigen::VectorXd distribute_q(const Eigen::VectorXd& bus_q_mw, const Eigen::VectorXd& load_q_mw) const {
    Eigen::VectorXd q = Eigen::VectorXd::Zero(ng_);
    for (std::size_t i = 0; i < case_.bus_count(); ++i) {
      const auto& gens = case_.generators_by_bus()[i];
      if (gens.empty()) continue;
      double total = bus_q_mw[static_cast<Eigen::Index>(i)] + load_q_mw[static_cast<Eigen::Index>(i)];
      double lo = 0.0, hi = 0.0;
      for (auto g : gens) {
        lo += case_.generators()[g].q_min;
        hi += case_.generators()[g].q_max;
      }
      double span = hi - lo;
      for (auto g : gens) {
        const auto& gen = case_.generators()[g];
        double share = span > 0 ? (gen.q_max - gen.q_min) / span : 1.0 / static_cast<double>(gens.size());
        double alpha = span > 0 ? (case_.to_pu(total) - lo) / span : 0.0;
        q[static_cast<Eigen::Index>(g)] = span > 0 ? case_.to_mw(gen.q_min + alpha * (gen.q_max - gen.q_min)) : total * share;
      }
    }
    return q;
  }

  OpfSolution solve_dc_opf(const OpfProblem& pr, const OpfOptions& opt) const {
    using detail::RowKind;
    using detail::RowTag;
    const double base = case_.base_mva();
    const double scale = resolve_load_scale(pr);
    Eigen::VectorXd Pd(n_);
    for (Eigen::Index i = 0; i < n_; ++i) Pd[i] = case_.buses()[static_cast<std::size_t>(i)].load_p * scale;
    Eigen::VectorXd plo, phi;
    std::vector<bool> pfixed;
    generator_bounds(pr, plo, phi, pfixed);
    for (Eigen::Index g = 0; g < ng_; ++g)
      if (plo[g] > phi[g] + 1e-12) return infeasible(describe({RowKind::p_band, static_cast<int>(g)}));

    Eigen::MatrixXd Gp = Eigen::MatrixXd::Zero(n_, ng_);
    for (Eigen::Index g = 0; g < ng_; ++g) Gp(static_cast<Eigen::Index>(case_.bus_index(case_.generators()[static_cast<std::size_t>(g)].bus)), g) = 1.0;

    QpProblem qp;
    qp.H = Eigen::MatrixXd::Zero(ng_, ng_);
    qp.f = Eigen::VectorXd::Zero(ng_);
    for (Eigen::Index g = 0; g < ng_; ++g) {
      const auto& gen = case_.generators()[static_cast<std::size_t>(g)];
      qp.H(g, g) = 2.0 * std::max(gen.cost_a, opt.min_quadratic) * base * base;
      qp.f[g] = gen.cost_b * base;
    }
    std::vector<Eigen::RowVectorXd> eqr{Eigen::RowVectorXd::Ones(ng_)};
    std::vector<double> eqb{Pd.sum()};
    std::vector<Eigen::RowVectorXd> rows;
    std::vector<double> rhs;
    std::vector<RowTag> tags;
    for (Eigen::Index g = 0; g < ng_; ++g) {
      Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(ng_);
      e[g] = 1.0;
      if (pfixed[static_cast<std::size_t>(g)]) {
        eqr.push_back(e);
        eqb.push_back(plo[g]);
        continue;
      }
      push_range(rows, rhs, tags, e, 0.0, plo[g], phi[g], {RowKind::p_band, static_cast<int>(g)}, {RowKind::p_band, static_cast<int>(g)});
    }
    Eigen::MatrixXd PG = ptdf_ * Gp;
    Eigen::VectorXd fd = -ptdf_ * Pd;
    if (!pr.anchors && !pr.dispatch_mw) {
      for (std::size_t k = 0; k < case_.branch_count(); ++k) {
        if (pr.unmonitored.count(case_.branches()[k].id)) continue;
        auto kk = static_cast<Eigen::Index>(k);
        double lim = branch_limit_pu(pr, k);
        push_range(rows, rhs, tags, PG.row(kk), fd[kk], -lim, lim, {RowKind::line_lower, static_cast<int>(k)},
                   {RowKind::line_upper, static_cast<int>(k)});
      }
    }
    qp.A_eq.resize(static_cast<Eigen::Index>(eqr.size()), ng_);
    qp.b_eq.resize(static_cast<Eigen::Index>(eqr.size()));
    for (std::size_t r = 0; r < eqr.size(); ++r) {
      qp.A_eq.row(static_cast<Eigen::Index>(r)) = eqr[r];
      qp.b_eq[static_cast<Eigen::Index>(r)] = eqb[r];
    }
    qp.A_in.resize(static_cast<Eigen::Index>(rows.size()), ng_);
    qp.b_in.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      qp.A_in.row(static_cast<Eigen::Index>(r)) = rows[r];
      qp.b_in[static_cast<Eigen::Index>(r)] = rhs[r];
    }
    QpOptions qo;
    qo.feas_tol = opt.qp_feas_tol;
    QpResult r = solve_qp(qp, qo);
    if (r.status != QpStatus::optimal) return from_qp_failure(r, tags);

    OpfSolution out;
    out.status = OpfStatus::optimal;
    out.load_scale = scale;
    out.p = r.x * base;
    out.q = Eigen::VectorXd::Zero(ng_);
    out.flows = solve_dc(case_, bus_injections_mw(case_, out.p, scale), xmat_);
    out.cost = generation_cost(out.p);
    out.qp_iterations = r.iterations;
    return out;
  }

  const NetworkCase& case_;
  LinacMap map_;
  Eigen::Index n_ = 0, ng_ = 0, nv_ = 0, nx_ = 0;
  Eigen::MatrixXd SP_, SQ_, T_, JQT_, FT_, ptdf_;
  Eigen::RowVectorXd JPsT_;
  ReactanceMatrix xmat_;
};

inline OpfSolution solve_opf(const NetworkCase& c, const OpfProblem& pr, const OpfOptions& opt = {}) {
  return OpfModel(c).solve(pr, opt);
}

/// Anchored re-solve; the problem must carry anchors.
inline OpfSolution solve_anchored(const NetworkCase& c, const OpfProblem& pr, const OpfOptions& opt = {}) {
  if (!pr.anchors) fail(ErrorCode::validation_error, "solve_anchored needs anchor constraints");
  return OpfModel(c).solve(pr, opt);
}

/// Throws the matching library error unless the solution is optimal.
inline const OpfSolution& expect_optimal(const OpfSolution& s) {
  if (s.status == OpfStatus::infeasible) fail(ErrorCode::infeasible, "OPF infeasible: " + s.diagnostic);
  if (s.status == OpfStatus::iteration_limit) fail(ErrorCode::iteration_limit, "OPF iteration limit: " + s.diagnostic);
  return s;
}

}  // namespace gridshift
