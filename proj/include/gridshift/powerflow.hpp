#pragma once

// Snapshot power flow under three models: DC, linearized AC (state: angle and
// squared voltage magnitude), and full polar Newton-Raphson AC.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gridshift/error.hpp"
#include "gridshift/netmodel.hpp"

namespace gridshift {

enum class FlowModel { dc, linac, ac };

inline std::string_view to_string(FlowModel m) {
  switch (m) {
    case FlowModel::dc: return "dc";
    case FlowModel::linac: return "linac";
    case FlowModel::ac: return "ac";
  }
  return "dc";
}

struct SolverOptions {
  double tol = 1e-8;       // p.u.
  int max_iter = 30;
  int loss_iterations = 3;  // 0 gives the lossless model
  bool enforce_q_limits = true;  // AC only: PV -> PQ switching
};

/// One solved snapshot. Vectors are indexed by bus / branch position in the case.
/// Power quantities are MW / MVAr.
struct PowerFlowSolution {
  FlowModel model = FlowModel::dc;
  Eigen::VectorXd theta;  // rad
  Eigen::VectorXd v_sq;   // p.u.^2
  Eigen::VectorXd bus_p;  // net injection
  Eigen::VectorXd bus_q;
  Eigen::VectorXd branch_p;  // sending (from) end
  Eigen::VectorXd branch_q;
  Eigen::VectorXd branch_p_to;  // receiving end, measured into the branch
  Eigen::VectorXd branch_q_to;
  Eigen::VectorXd branch_loss;
  bool converged = false;
  int iterations = 0;

  /// Larger of the two end flows; the quantity compared against capacity.
  double flow_magnitude(std::size_t k) const { return std::max(std::abs(branch_p[k]), std::abs(branch_p_to[k])); }
  /// Loss-free part of the flow in from->to orientation.
  double through_flow(std::size_t k) const { return 0.5 * (branch_p[k] - branch_p_to[k]); }
  Eigen::VectorXd flow_magnitudes() const {
    Eigen::VectorXd m(branch_p.size());
    for (Eigen::Index k = 0; k < m.size(); ++k) m[k] = flow_magnitude(static_cast<std::size_t>(k));
    return m;
  }
};

struct BranchFlow {
  double p = 0.0;     // p.u., sending end
  double loss = 0.0;  // p.u., whole branch
};

/// Linearized branch flow. The loss expression of the model is the share carried by
/// each end, so the branch as a whole loses twice that: g*(theta^2 + u^2/4).
inline BranchFlow eval_branch_flow_linac(const Branch& br, double u_ij, double theta_ij, bool include_loss) {
  BranchFlow out;
  out.p = br.g * u_ij / 2.0 - br.b * theta_ij;
  double half = br.g * (theta_ij * theta_ij / 2.0 + u_ij * u_ij / 8.0);
  out.loss = 2.0 * half;
  if (include_loss) out.p += half;
  return out;
}

/// Per-bus net injection (MW) from per-generator output (MW) and loads scaled by load_scale.
inline Eigen::VectorXd bus_injections_mw(const NetworkCase& c, const Eigen::VectorXd& gen_mw, double load_scale = 1.0) {
  Eigen::VectorXd inj(static_cast<Eigen::Index>(c.bus_count()));
  for (std::size_t i = 0; i < c.bus_count(); ++i) inj[static_cast<Eigen::Index>(i)] = -c.to_mw(c.buses()[i].load_p) * load_scale;
  for (std::size_t g = 0; g < c.generator_count(); ++g)
    inj[static_cast<Eigen::Index>(c.bus_index(c.generators()[g].bus))] += gen_mw[static_cast<Eigen::Index>(g)];
  return inj;
}

inline Eigen::VectorXd bus_load_q_mvar(const NetworkCase& c, double load_scale = 1.0) {
  Eigen::VectorXd q(static_cast<Eigen::Index>(c.bus_count()));
  for (std::size_t i = 0; i < c.bus_count(); ++i) q[static_cast<Eigen::Index>(i)] = -c.to_mw(c.buses()[i].load_q) * load_scale;
  return q;
}

// ---------------------------------------------------------------------------
// DC
// ---------------------------------------------------------------------------

inline PowerFlowSolution solve_dc(const NetworkCase& c, const Eigen::VectorXd& injections_mw, const ReactanceMatrix& xmat) {
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  if (injections_mw.size() != n) fail(ErrorCode::validation_error, "injection vector length differs from bus count");
  Eigen::VectorXd p = injections_mw / c.base_mva();
  if (std::abs(p.sum()) > 1e-6) fail(ErrorCode::imbalance, "DC injections do not sum to zero (" + std::to_string(p.sum()) + " p.u.)");

  PowerFlowSolution s;
  s.model = FlowModel::dc;
  s.theta = xmat.X * p;
  s.v_sq = Eigen::VectorXd::Ones(n);
  s.bus_p = injections_mw;
  s.bus_q = Eigen::VectorXd::Zero(n);
  const auto m = static_cast<Eigen::Index>(c.branch_count());
  s.branch_p.resize(m);
  s.branch_q = Eigen::VectorXd::Zero(m);
  s.branch_q_to = Eigen::VectorXd::Zero(m);
  s.branch_loss = Eigen::VectorXd::Zero(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& br = c.branches()[static_cast<std::size_t>(k)];
    double th = s.theta[static_cast<Eigen::Index>(c.bus_index(br.from_bus))] - s.theta[static_cast<Eigen::Index>(c.bus_index(br.to_bus))];
    s.branch_p[k] = c.to_mw(th / br.x);
  }
  s.branch_p_to = -s.branch_p;
  s.converged = true;
  s.iterations = 1;
  return s;
}

inline PowerFlowSolution solve_dc(const NetworkCase& c, const Eigen::VectorXd& injections_mw) {
  return solve_dc(c, injections_mw, build_reactance_matrix(c));
}

// ---------------------------------------------------------------------------
// Linearized AC
// ---------------------------------------------------------------------------

/// Constant linear map of the lossless linearized network.
///
/// Buses split into the slack, the other voltage-controlled buses (u given, Q free)
/// and load buses (P, Q given). The inputs are
///   y = [P at non-slack buses | Q at load buses | u at voltage-controlled buses]
/// and the full state s = [theta ; u] (length 2n) satisfies s = S * y.
class LinacMap {
 public:
  LinacMap(const NetworkCase& c, const std::vector<bool>& voltage_controlled) : n_(static_cast<Eigen::Index>(c.bus_count())) {
    const auto slack = static_cast<Eigen::Index>(c.slack_index());
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (i != slack) nonslack_.push_back(i);
      if (i == slack || voltage_controlled[static_cast<std::size_t>(i)]) controlled_.push_back(i);
      else load_buses_.push_back(i);
    }
    build_jacobians(c);

    // K maps [theta(nonslack); u(load)] to [P(nonslack); Q(load)].
    const auto nr = static_cast<Eigen::Index>(nonslack_.size() + load_buses_.size());
    const auto nv = static_cast<Eigen::Index>(controlled_.size());
    Eigen::MatrixXd K(nr, nr), Ku(nr, nv);
    auto row = [&](Eigen::Index r) -> Eigen::RowVectorXd {
      return r < static_cast<Eigen::Index>(nonslack_.size()) ? Eigen::RowVectorXd(JP_.row(nonslack_[r]))
                                                             : Eigen::RowVectorXd(JQ_.row(load_buses_[r - nonslack_.size()]));
    };
    for (Eigen::Index r = 0; r < nr; ++r) {
      Eigen::RowVectorXd full = row(r);
      for (std::size_t a = 0; a < nonslack_.size(); ++a) K(r, static_cast<Eigen::Index>(a)) = full[nonslack_[a]];
      for (std::size_t a = 0; a < load_buses_.size(); ++a)
        K(r, static_cast<Eigen::Index>(nonslack_.size() + a)) = full[n_ + load_buses_[a]];
      for (std::size_t a = 0; a < controlled_.size(); ++a) Ku(r, static_cast<Eigen::Index>(a)) = full[n_ + controlled_[a]];
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
    if (nr > 0 && !(lu.rcond() > 1e-14)) fail(ErrorCode::singular_matrix, "linearized network matrix is singular");
    Eigen::MatrixXd Kinv = lu.inverse();
    if (!Kinv.allFinite()) fail(ErrorCode::singular_matrix, "linearized network matrix is singular");

    S_ = Eigen::MatrixXd::Zero(2 * n_, nr + nv);
    Eigen::MatrixXd free = Eigen::MatrixXd::Zero(nr, nr + nv);
    free.leftCols(nr) = Kinv;
    free.rightCols(nv) = -Kinv * Ku;
    for (std::size_t a = 0; a < nonslack_.size(); ++a) S_.row(nonslack_[a]) = free.row(static_cast<Eigen::Index>(a));
    for (std::size_t a = 0; a < load_buses_.size(); ++a)
      S_.row(n_ + load_buses_[a]) = free.row(static_cast<Eigen::Index>(nonslack_.size() + a));
    for (std::size_t a = 0; a < controlled_.size(); ++a) S_(n_ + controlled_[a], nr + static_cast<Eigen::Index>(a)) = 1.0;
  }

  Eigen::Index bus_count() const { return n_; }
  const std::vector<Eigen::Index>& nonslack() const { return nonslack_; }
  const std::vector<Eigen::Index>& controlled() const { return controlled_; }
  const std::vector<Eigen::Index>& load_buses() const { return load_buses_; }
  Eigen::Index input_size() const { return S_.cols(); }

  /// Lossless bus P injection as a linear function of the state.
  const Eigen::MatrixXd& JP() const { return JP_; }
  const Eigen::MatrixXd& JQ() const { return JQ_; }
  const Eigen::MatrixXd& S() const { return S_; }
  /// Lossless from-end branch flow as a linear function of the state.
  const Eigen::MatrixXd& F() const { return F_; }

  /// Packs per-bus effective injections (p.u.) and controlled voltages into y.
  Eigen::VectorXd pack(const Eigen::VectorXd& p_eff, const Eigen::VectorXd& q_eff, const Eigen::VectorXd& u_bus) const {
    Eigen::VectorXd y(input_size());
    Eigen::Index r = 0;
    for (auto i : nonslack_) y[r++] = p_eff[i];
    for (auto i : load_buses_) y[r++] = q_eff[i];
    for (auto i : controlled_) y[r++] = u_bus[i];
    return y;
  }

 private:
  void build_jacobians(const NetworkCase& c) {
    JP_ = Eigen::MatrixXd::Zero(n_, 2 * n_);
    JQ_ = Eigen::MatrixXd::Zero(n_, 2 * n_);
    F_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.branch_count()), 2 * n_);
    for (std::size_t k = 0; k < c.branch_count(); ++k) {
      const auto& br = c.branches()[k];
      auto f = static_cast<Eigen::Index>(c.bus_index(br.from_bus));
      auto t = static_cast<Eigen::Index>(c.bus_index(br.to_bus));
      auto kk = static_cast<Eigen::Index>(k);
      F_(kk, f) = -br.b;
      F_(kk, t) = br.b;
      F_(kk, n_ + f) = br.g / 2.0;
      F_(kk, n_ + t) = -br.g / 2.0;
      for (auto [i, j] : {std::pair{f, t}, std::pair{t, f}}) {
        JP_(i, i) += -br.b;
        JP_(i, j) -= -br.b;
        JP_(i, n_ + i) += br.g / 2.0;
        JP_(i, n_ + j) -= br.g / 2.0;
        JQ_(i, i) += -br.g;
        JQ_(i, j) -= -br.g;
        JQ_(i, n_ + i) += -br.b / 2.0 - br.charging / 2.0;
        JQ_(i, n_ + j) -= -br.b / 2.0;
      }
    }
  }

  Eigen::Index n_;
  std::vector<Eigen::Index> nonslack_, controlled_, load_buses_;
  Eigen::MatrixXd JP_, JQ_, F_, S_;
};

/// Loss shares (p.u.) withdrawn at each bus for a given state: active and reactive.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> linac_bus_losses(const NetworkCase& c, const Eigen::VectorXd& theta,
                                                                     const Eigen::VectorXd& u) {
  Eigen::VectorXd lp = Eigen::VectorXd::Zero(theta.size()), lq = Eigen::VectorXd::Zero(theta.size());
  for (const auto& br : c.branches()) {
    auto f = static_cast<Eigen::Index>(c.bus_index(br.from_bus));
    auto t = static_cast<Eigen::Index>(c.bus_index(br.to_bus));
    double th = theta[f] - theta[t], du = u[f] - u[t];
    double s = th * th / 2.0 + du * du / 8.0;
    lp[f] += br.g * s;
    lp[t] += br.g * s;
    lq[f] += -br.b * s;
    lq[t] += -br.b * s;
  }
  return {lp, lq};
}

/// Evaluates every linearized quantity at a state; without losses for the lossless model.
inline PowerFlowSolution linac_solution_from_state(const NetworkCase& c, const Eigen::VectorXd& theta, const Eigen::VectorXd& u,
                                                   bool include_loss = true) {
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  const auto m = static_cast<Eigen::Index>(c.branch_count());
  PowerFlowSolution s;
  s.model = FlowModel::linac;
  s.theta = theta;
  s.v_sq = u;
  s.bus_p = Eigen::VectorXd::Zero(n);
  s.bus_q = Eigen::VectorXd::Zero(n);
  s.branch_p.resize(m);
  s.branch_q.resize(m);
  s.branch_p_to.resize(m);
  s.branch_q_to.resize(m);
  s.branch_loss.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& br = c.branches()[static_cast<std::size_t>(k)];
    auto f = static_cast<Eigen::Index>(c.bus_index(br.from_bus));
    auto t = static_cast<Eigen::Index>(c.bus_index(br.to_bus));
    double th = theta[f] - theta[t], du = u[f] - u[t];
    double half = include_loss ? th * th / 2.0 + du * du / 8.0 : 0.0;
    double p0 = br.g * du / 2.0 - br.b * th;
    double q0 = -br.b * du / 2.0 - br.g * th;
    double pf = p0 + br.g * half, pt = -p0 + br.g * half;
    double qf = q0 - br.b * half - br.charging / 2.0 * u[f];
    double qt = -q0 - br.b * half - br.charging / 2.0 * u[t];
    s.branch_p[k] = c.to_mw(pf);
    s.branch_p_to[k] = c.to_mw(pt);
    s.branch_q[k] = c.to_mw(qf);
    s.branch_q_to[k] = c.to_mw(qt);
    s.branch_loss[k] = c.to_mw(pf + pt);
    s.bus_p[f] += c.to_mw(pf);
    s.bus_p[t] += c.to_mw(pt);
    s.bus_q[f] += c.to_mw(qf);
    s.bus_q[t] += c.to_mw(qt);
  }
  return s;
}

inline std::vector<bool> pv_voltage_control(const NetworkCase& c) {
  std::vector<bool> vc(c.bus_count(), false);
  for (std::size_t i = 0; i < c.bus_count(); ++i) vc[i] = c.buses()[i].kind != BusKind::pq;
  return vc;
}

/// Linearized AC power flow. The map's voltage-controlled buses hold u_set (squared
/// magnitude, read only at those buses); injections are per-bus MW / MVAr, and the Q entries
/// of controlled buses are ignored. Losses enter as fixed withdrawals from the previous
/// iterate until successive loss vectors agree within tol.
inline PowerFlowSolution solve_linac(const NetworkCase& c, const LinacMap& map, const Eigen::VectorXd& injections_p,
                                     const Eigen::VectorXd& injections_q, const Eigen::VectorXd& u_set, const SolverOptions& opts = {}) {
  if (!(opts.tol > 0.0) || opts.max_iter < 1) fail(ErrorCode::validation_error, "solver options need tol > 0 and max_iter >= 1");
  const auto n = map.bus_count();
  if (injections_p.size() != n || injections_q.size() != n || u_set.size() != n)
    fail(ErrorCode::validation_error, "injection vector length differs from bus count");
  Eigen::VectorXd p = injections_p / c.base_mva(), q = injections_q / c.base_mva();

  Eigen::VectorXd lp = Eigen::VectorXd::Zero(n), lq = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd state;
  bool converged = opts.loss_iterations == 0;
  int it = 0;
  for (;;) {
    state = map.S() * map.pack(p - lp, q - lq, u_set);
    if (opts.loss_iterations == 0) break;
    auto [np, nq] = linac_bus_losses(c, state.head(n), state.tail(n));
    double change = std::max((np - lp).cwiseAbs().maxCoeff(), (nq - lq).cwiseAbs().maxCoeff());
    lp = np;
    lq = nq;
    ++it;
    if (change < opts.tol && it >= std::min(opts.loss_iterations, opts.max_iter)) {
      converged = true;
      break;
    }
    if (it >= opts.max_iter) break;
  }
  if (!converged) fail(ErrorCode::non_convergence, "linearized loss iteration did not converge in " + std::to_string(opts.max_iter) + " passes");
  if (opts.loss_iterations > 0) state = map.S() * map.pack(p - lp, q - lq, u_set);
  auto sol = linac_solution_from_state(c, state.head(n), state.tail(n), opts.loss_iterations > 0);
  sol.converged = true;
  sol.iterations = it;
  return sol;
}

/// Slack and PV buses hold v_set.
inline PowerFlowSolution solve_linac(const NetworkCase& c, const Eigen::VectorXd& injections_p, const Eigen::VectorXd& injections_q,
                                     const SolverOptions& opts = {}) {
  Eigen::VectorXd u_set(static_cast<Eigen::Index>(c.bus_count()));
  for (std::size_t i = 0; i < c.bus_count(); ++i) u_set[static_cast<Eigen::Index>(i)] = std::pow(c.buses()[i].v_set, 2);
  return solve_linac(c, LinacMap(c, pv_voltage_control(c)), injections_p, injections_q, u_set, opts);
}

// ---------------------------------------------------------------------------
// AC Newton-Raphson (polar)
// ---------------------------------------------------------------------------

inline Eigen::MatrixXcd build_admittance_matrix(const NetworkCase& c) {
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& br : c.branches()) {
    auto f = static_cast<Eigen::Index>(c.bus_index(br.from_bus));
    auto t = static_cast<Eigen::Index>(c.bus_index(br.to_bus));
    std::complex<double> y(br.g, br.b), sh(0.0, br.charging / 2.0);
    Y(f, f) += y + sh;
    Y(t, t) += y + sh;
    Y(f, t) -= y;
    Y(t, f) -= y;
  }
  return Y;
}

inline PowerFlowSolution ac_solution_from_state(const NetworkCase& c, const Eigen::VectorXd& theta, const Eigen::VectorXd& vm) {
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  const auto m = static_cast<Eigen::Index>(c.branch_count());
  Eigen::VectorXcd V(n);
  for (Eigen::Index i = 0; i < n; ++i) V[i] = std::polar(vm[i], theta[i]);
  PowerFlowSolution s;
  s.model = FlowModel::ac;
  s.theta = theta;
  s.v_sq = vm.cwiseProduct(vm);
  s.bus_p = Eigen::VectorXd::Zero(n);
  s.bus_q = Eigen::VectorXd::Zero(n);
  s.branch_p.resize(m);
  s.branch_q.resize(m);
  s.branch_p_to.resize(m);
  s.branch_q_to.resize(m);
  s.branch_loss.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& br = c.branches()[static_cast<std::size_t>(k)];
    auto f = static_cast<Eigen::Index>(c.bus_index(br.from_bus));
    auto t = static_cast<Eigen::Index>(c.bus_index(br.to_bus));
    std::complex<double> y(br.g, br.b), sh(0.0, br.charging / 2.0);
    std::complex<double> If = (V[f] - V[t]) * y + V[f] * sh;
    std::complex<double> It = (V[t] - V[f]) * y + V[t] * sh;
    std::complex<double> Sf = V[f] * std::conj(If), St = V[t] * std::conj(It);
    s.branch_p[k] = c.to_mw(Sf.real());
    s.branch_q[k] = c.to_mw(Sf.imag());
    s.branch_p_to[k] = c.to_mw(St.real());
    s.branch_q_to[k] = c.to_mw(St.imag());
    s.branch_loss[k] = c.to_mw(Sf.real() + St.real());
    s.bus_p[f] += c.to_mw(Sf.real());
    s.bus_p[t] += c.to_mw(St.real());
    s.bus_q[f] += c.to_mw(Sf.imag());
    s.bus_q[t] += c.to_mw(St.imag());
  }
  return s;
}

/// Full AC Newton-Raphson from a flat start. Slack and PV buses hold v_set; a PV bus
/// whose reactive injection leaves the attached generators' range is switched to PQ at
/// the violated limit (when opts.enforce_q_limits).
inline PowerFlowSolution solve_ac_newton(const NetworkCase& c, const Eigen::VectorXd& injections_p, const Eigen::VectorXd& injections_q,
                                         const SolverOptions& opts = {}) {
  if (!(opts.tol > 0.0) || opts.max_iter < 1) fail(ErrorCode::validation_error, "solver options need tol > 0 and max_iter >= 1");
  const auto n = static_cast<Eigen::Index>(c.bus_count());
  if (injections_p.size() != n || injections_q.size() != n) fail(ErrorCode::validation_error, "injection vector length differs from bus count");
  const Eigen::MatrixXcd Y = build_admittance_matrix(c);
  const auto slack = static_cast<Eigen::Index>(c.slack_index());
  Eigen::VectorXd Psp = injections_p / c.base_mva(), Qsp = injections_q / c.base_mva();

  std::vector<bool> pv(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) pv[static_cast<std::size_t>(i)] = i != slack && c.buses()[static_cast<std::size_t>(i)].kind == BusKind::pv;

  // Reactive range of each bus, net of its load.
  Eigen::VectorXd qlo = Eigen::VectorXd::Zero(n), qhi = Eigen::VectorXd::Zero(n);
  for (const auto& g : c.generators()) {
    auto i = static_cast<Eigen::Index>(c.bus_index(g.bus));
    qlo[i] += g.q_min;
    qhi[i] += g.q_max;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    qlo[i] -= c.buses()[static_cast<std::size_t>(i)].load_q;
    qhi[i] -= c.buses()[static_cast<std::size_t>(i)].load_q;
  }

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n), vm = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (i == slack || pv[static_cast<std::size_t>(i)]) vm[i] = c.buses()[static_cast<std::size_t>(i)].v_set;

  int total_iter = 0;
  for (int outer = 0; outer <= n; ++outer) {
    std::vector<Eigen::Index> ang, mag;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i != slack) ang.push_back(i);
      if (i != slack && !pv[static_cast<std::size_t>(i)]) mag.push_back(i);
    }
    const auto na = static_cast<Eigen::Index>(ang.size()), nm = static_cast<Eigen::Index>(mag.size());

    bool ok = false;
    for (int it = 0; it <= opts.max_iter; ++it) {
      Eigen::VectorXcd V(n);
      for (Eigen::Index i = 0; i < n; ++i) V[i] = std::polar(vm[i], theta[i]);
      Eigen::VectorXcd I = Y * V;
      Eigen::VectorXcd S = V.cwiseProduct(I.conjugate());
      Eigen::VectorXd mis(na + nm);
      for (Eigen::Index a = 0; a < na; ++a) mis[a] = Psp[ang[a]] - S[ang[a]].real();
      for (Eigen::Index a = 0; a < nm; ++a) mis[na + a] = Qsp[mag[a]] - S[mag[a]].imag();
      if (!mis.allFinite()) break;
      double worst = mis.size() ? mis.cwiseAbs().maxCoeff() : 0.0;
      if (worst < opts.tol) {
        ok = true;
        break;
      }
      if (it == opts.max_iter || worst > 1e6) break;
      ++total_iter;

      // dS/dtheta = j diag(V) conj(diag(I) - Y diag(V)); dS/d|V| = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
      Eigen::VectorXcd Vn(n);
      for (Eigen::Index i = 0; i < n; ++i) Vn[i] = V[i] / vm[i];
      Eigen::MatrixXcd dS_dth = Eigen::MatrixXcd::Zero(n, n), dS_dv = Eigen::MatrixXcd::Zero(n, n);
      const std::complex<double> j1(0.0, 1.0);
      for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index k = 0; k < n; ++k) {
          if (Y(r, k) == std::complex<double>(0.0, 0.0) && r != k) continue;
          dS_dth(r, k) = -j1 * V[r] * std::conj(Y(r, k) * V[k]);
          dS_dv(r, k) = V[r] * std::conj(Y(r, k) * Vn[k]);
        }
        dS_dth(r, r) += j1 * V[r] * std::conj(I[r]);
        dS_dv(r, r) += std::conj(I[r]) * Vn[r];
      }
      Eigen::MatrixXd J(na + nm, na + nm);
      for (Eigen::Index a = 0; a < na; ++a) {
        for (Eigen::Index b = 0; b < na; ++b) J(a, b) = dS_dth(ang[a], ang[b]).real();
        for (Eigen::Index b = 0; b < nm; ++b) J(a, na + b) = dS_dv(ang[a], mag[b]).real();
      }
      for (Eigen::Index a = 0; a < nm; ++a) {
        for (Eigen::Index b = 0; b < na; ++b) J(na + a, b) = dS_dth(mag[a], ang[b]).imag();
        for (Eigen::Index b = 0; b < nm; ++b) J(na + a, na + b) = dS_dv(mag[a], mag[b]).imag();
      }
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
      Eigen::VectorXd dx = lu.solve(mis);
      if (!dx.allFinite()) fail(ErrorCode::singular_matrix, "AC Jacobian is singular");
      for (Eigen::Index a = 0; a < na; ++a) theta[ang[a]] += dx[a];
      for (Eigen::Index a = 0; a < nm; ++a) vm[mag[a]] += dx[na + a];
    }
    if (!ok) fail(ErrorCode::non_convergence, "AC Newton-Raphson did not converge within " + std::to_string(opts.max_iter) + " iterations");

    if (!opts.enforce_q_limits) break;
    auto sol = ac_solution_from_state(c, theta, vm);
    bool switched = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!pv[static_cast<std::size_t>(i)]) continue;
      double qi = sol.bus_q[i] / c.base_mva();
      if (qi > qhi[i] + 1e-9 || qi < qlo[i] - 1e-9) {
        pv[static_cast<std::size_t>(i)] = false;
        Qsp[i] = qi > qhi[i] ? qhi[i] : qlo[i];
        switched = true;
      }
    }
    if (!switched) break;
  }

  auto sol = ac_solution_from_state(c, theta, vm);
  sol.converged = true;
  sol.iterations = total_iter;
  return sol;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline nlohmann::json solution_to_json(const NetworkCase& c, const PowerFlowSolution& s) {
  nlohmann::json j;
  j["model"] = std::string(to_string(s.model));
  j["converged"] = s.converged;
  j["iterations"] = s.iterations;
  j["base_mva"] = c.base_mva();
  nlohmann::json buses = nlohmann::json::array();
  for (std::size_t i = 0; i < c.bus_count(); ++i) {
    auto ii = static_cast<Eigen::Index>(i);
    buses.push_back({{"id", c.buses()[i].id},
                     {"theta_deg", s.theta[ii] * 180.0 / std::numbers::pi},
                     {"v_pu", std::sqrt(std::max(0.0, s.v_sq[ii]))},
                     {"p_mw", s.bus_p[ii]},
                     {"q_mvar", s.bus_q[ii]}});
  }
  j["buses"] = buses;
  nlohmann::json branches = nlohmann::json::array();
  for (std::size_t k = 0; k < c.branch_count(); ++k) {
    auto kk = static_cast<Eigen::Index>(k);
    const auto& br = c.branches()[k];
    branches.push_back({{"id", br.id},
                        {"from", br.from_bus},
                        {"to", br.to_bus},
                        {"p_mw_from", s.branch_p[kk]},
                        {"q_mvar_from", s.branch_q[kk]},
                        {"loss_mw", s.branch_loss[kk]}});
  }
  j["branches"] = branches;
  return j;
}

}  // namespace gridshift
