#pragma once

// Dense strictly convex QP, dual active-set method of Goldfarb and Idnani.
//
//   min 1/2 x'Hx + f'x   s.t.  A_eq x = b_eq,  A_in x >= b_in
//
// H must be positive definite. Vertex solutions come out exact (no barrier bias),
// which the finite-difference sensitivities downstream depend on.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string_view>
#include <vector>

namespace gridshift {

enum class QpStatus { optimal, infeasible, iteration_limit, not_convex };

inline std::string_view to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::iteration_limit: return "iteration-limit";
    case QpStatus::not_convex: return "not-convex";
  }
  return "infeasible";
}

struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
};

struct QpOptions {
  double feas_tol = 1e-10;  // on unit-normalized rows
  int max_iter = 0;         // 0: 10 * (n + constraints) + 100
};

struct QpResult {
  QpStatus status = QpStatus::infeasible;
  Eigen::VectorXd x;
  double objective = 0.0;
  Eigen::VectorXd lambda_eq;  // H x + f = A_eq' lambda + A_in' mu
  Eigen::VectorXd mu_in;      // >= 0
  std::vector<int> active_in;
  int violated = -1;  // inequality row that could not be satisfied, when infeasible
  int iterations = 0;
};

namespace detail {

class GoldfarbIdnani {
 public:
  GoldfarbIdnani(const QpProblem& p, const QpOptions& o) : opt_(o) {
    n_ = p.H.rows();
    me_ = p.A_eq.rows();
    mi_ = p.A_in.rows();
    obj_scale_ = std::max(p.H.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    H_ = p.H / obj_scale_;
    f_ = p.f / obj_scale_;
    CE_ = p.A_eq;
    be_ = p.b_eq;
    CI_ = p.A_in;
    bi_ = p.b_in;
    se_ = Eigen::VectorXd::Ones(me_);
    si_ = Eigen::VectorXd::Ones(mi_);
    for (Eigen::Index i = 0; i < me_; ++i) {
      double nr = CE_.row(i).norm();
      if (nr > 0) {
        se_[i] = nr;
        CE_.row(i) /= nr;
        be_[i] /= nr;
      }
    }
    for (Eigen::Index i = 0; i < mi_; ++i) {
      double nr = CI_.row(i).norm();
      if (nr > 0) {
        si_[i] = nr;
        CI_.row(i) /= nr;
        bi_[i] /= nr;
      }
    }
  }

  QpResult run() {
    QpResult res;
    Eigen::LLT<Eigen::MatrixXd> llt(H_);
    if (llt.info() != Eigen::Success) {
      res.status = QpStatus::not_convex;
      return res;
    }
    for (Eigen::Index i = 0; i < mi_; ++i) {
      if (CI_.row(i).squaredNorm() == 0.0 && bi_[i] > opt_.feas_tol) {
        res.status = QpStatus::infeasible;
        res.violated = static_cast<int>(i);
        return res;
      }
    }
    const int max_iter = opt_.max_iter > 0 ? opt_.max_iter : static_cast<int>(10 * (n_ + me_ + mi_) + 100);
    excluded_.assign(static_cast<std::size_t>(mi_), false);
    int iter = 0;
    for (;;) {  // restarts only after a numerically degenerate add
      auto status = attempt(llt, max_iter, iter, res);
      if (status != restart_) break;
    }
    res.iterations = iter;
    if (res.status != QpStatus::optimal) return res;

    res.x = x_;
    res.objective = 0.0;
    res.lambda_eq = Eigen::VectorXd::Zero(me_);
    res.mu_in = Eigen::VectorXd::Zero(mi_);
    for (Eigen::Index k = 0; k < iq_; ++k) {
      Eigen::Index id = A_[static_cast<std::size_t>(k)];
      if (id < me_) {
        res.lambda_eq[id] = u_[k] * obj_scale_ / se_[id];
      } else {
        res.mu_in[id - me_] = u_[k] * obj_scale_ / si_[id - me_];
        res.active_in.push_back(static_cast<int>(id - me_));
      }
    }
    std::sort(res.active_in.begin(), res.active_in.end());
    return res;
  }

  double objective_scale() const { return obj_scale_; }

 private:
  static constexpr int restart_ = 1;
  static constexpr double inf_ = std::numeric_limits<double>::infinity();

  int attempt(const Eigen::LLT<Eigen::MatrixXd>& llt, int max_iter, int& iter, QpResult& res) {
    const double eps = std::numeric_limits<double>::epsilon();
    Eigen::MatrixXd L = llt.matrixL();
    J_ = L.transpose().triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(n_, n_));
    x_ = -llt.solve(f_);
    R_ = Eigen::MatrixXd::Zero(n_, n_);
    d_ = Eigen::VectorXd::Zero(n_);
    z_ = Eigen::VectorXd::Zero(n_);
    r_ = Eigen::VectorXd::Zero(n_ + 1);
    u_ = Eigen::VectorXd::Zero(n_ + 1);
    A_.assign(static_cast<std::size_t>(n_ + 1), 0);
    iq_ = 0;
    R_norm_ = 1.0;
    std::vector<bool> active(static_cast<std::size_t>(mi_), false);

    for (Eigen::Index i = 0; i < me_; ++i) {
      Eigen::VectorXd np = CE_.row(i).transpose();
      double viol = be_[i] - np.dot(x_);
      if (np.squaredNorm() == 0.0) {
        if (std::abs(viol) > opt_.feas_tol) {
          res.status = QpStatus::infeasible;
          return 0;
        }
        continue;
      }
      compute_d(np);
      update_z();
      update_r();
      if (z_.squaredNorm() <= eps) {
        if (std::abs(viol) > opt_.feas_tol) {  // dependent and inconsistent
          res.status = QpStatus::infeasible;
          return 0;
        }
        continue;  // redundant
      }
      double t2 = viol / z_.dot(np);
      x_ += t2 * z_;
      u_[iq_] = t2;
      u_.head(iq_) -= t2 * r_.head(iq_);
      A_[static_cast<std::size_t>(iq_)] = i;
      if (!add_constraint()) {
        res.status = QpStatus::infeasible;
        return 0;
      }
    }

    for (;;) {
      if (++iter > max_iter) {
        res.status = QpStatus::iteration_limit;
        return 0;
      }
      Eigen::VectorXd s = CI_ * x_ - bi_;
      Eigen::Index ip = -1;
      double worst = -opt_.feas_tol;
      for (Eigen::Index i = 0; i < mi_; ++i) {
        if (active[static_cast<std::size_t>(i)] || excluded_[static_cast<std::size_t>(i)]) continue;
        if (s[i] < worst) {
          worst = s[i];
          ip = i;
        }
      }
      if (ip < 0) {
        res.status = QpStatus::optimal;
        return 0;
      }
      Eigen::VectorXd np = CI_.row(ip).transpose();
      u_[iq_] = 0.0;
      A_[static_cast<std::size_t>(iq_)] = me_ + ip;
      double sp = s[ip];

      for (;;) {  // step 2a: move until ip is added
        if (++iter > max_iter) {
          res.status = QpStatus::iteration_limit;
          return 0;
        }
        compute_d(np);
        update_z();
        update_r();
        double t1 = inf_;
        Eigen::Index l = -1;
        for (Eigen::Index k = 0; k < iq_; ++k) {
          if (A_[static_cast<std::size_t>(k)] < me_) continue;
          if (r_[k] > 0.0) {
            double ratio = u_[k] / r_[k];
            if (ratio < t1) {
              t1 = ratio;
              l = A_[static_cast<std::size_t>(k)];
            }
          }
        }
        double zn = z_.dot(np);
        double t2 = (z_.squaredNorm() > eps && zn > 0.0) ? -sp / zn : inf_;
        double t = std::min(t1, t2);
        if (!std::isfinite(t)) {
          res.status = QpStatus::infeasible;
          res.violated = static_cast<int>(ip);
          return 0;
        }
        if (!std::isfinite(t2)) {  // dual step only
          u_.head(iq_) -= t * r_.head(iq_);
          u_[iq_] += t;
          active[static_cast<std::size_t>(l - me_)] = false;
          delete_constraint(l);
          continue;
        }
        x_ += t * z_;
        u_.head(iq_) -= t * r_.head(iq_);
        u_[iq_] += t;
        if (t2 <= t1) {  // full step
          if (!add_constraint()) {
            excluded_[static_cast<std::size_t>(ip)] = true;
            return restart_;
          }
          active[static_cast<std::size_t>(ip)] = true;
          break;
        }
        active[static_cast<std::size_t>(l - me_)] = false;
        delete_constraint(l);
        sp = np.dot(x_) - bi_[ip];
      }
    }
  }

  void compute_d(const Eigen::VectorXd& np) { d_ = J_.transpose() * np; }

  void update_z() {
    const Eigen::Index rest = n_ - iq_;
    if (rest > 0) z_ = J_.rightCols(rest) * d_.tail(rest);
    else z_.setZero();
  }

  void update_r() {
    for (Eigen::Index i = iq_ - 1; i >= 0; --i) {
      double sum = d_[i];
      for (Eigen::Index j = i + 1; j < iq_; ++j) sum -= R_(i, j) * r_[j];
      r_[i] = sum / R_(i, i);
    }
  }

  bool add_constraint() {
    const double eps = std::numeric_limits<double>::epsilon();
    for (Eigen::Index j = n_ - 1; j >= iq_ + 1; --j) {
      double cc = d_[j - 1], ss = d_[j];
      double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d_[j] = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d_[j - 1] = -h;
      } else {
        d_[j - 1] = h;
      }
      double xny = ss / (1.0 + cc);
      for (Eigen::Index k = 0; k < n_; ++k) {
        double t1 = J_(k, j - 1), t2 = J_(k, j);
        J_(k, j - 1) = t1 * cc + t2 * ss;
        J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
      }
    }
    ++iq_;
    R_.col(iq_ - 1).head(iq_) = d_.head(iq_);
    if (std::abs(d_[iq_ - 1]) <= eps * R_norm_) return false;
    R_norm_ = std::max(R_norm_, std::abs(d_[iq_ - 1]));
    return true;
  }

  void delete_constraint(Eigen::Index id) {
    Eigen::Index qq = -1;
    for (Eigen::Index i = 0; i < iq_; ++i)
      if (A_[static_cast<std::size_t>(i)] == id) qq = i;
    if (qq < 0) return;
    for (Eigen::Index i = qq; i < iq_ - 1; ++i) {
      A_[static_cast<std::size_t>(i)] = A_[static_cast<std::size_t>(i + 1)];
      u_[i] = u_[i + 1];
      R_.col(i) = R_.col(i + 1);
    }
    A_[static_cast<std::size_t>(iq_ - 1)] = A_[static_cast<std::size_t>(iq_)];
    u_[iq_ - 1] = u_[iq_];
    A_[static_cast<std::size_t>(iq_)] = 0;
    u_[iq_] = 0.0;
    R_.col(iq_ - 1).head(iq_).setZero();
    --iq_;
    if (iq_ == 0) return;
    for (Eigen::Index j = qq; j < iq_; ++j) {
      double cc = R_(j, j), ss = R_(j + 1, j);
      double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      cc /= h;
      ss /= h;
      R_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R_(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R_(j, j) = h;
      }
      double xny = ss / (1.0 + cc);
      for (Eigen::Index k = j + 1; k < iq_; ++k) {
        double t1 = R_(j, k), t2 = R_(j + 1, k);
        R_(j, k) = t1 * cc + t2 * ss;
        R_(j + 1, k) = xny * (t1 + R_(j, k)) - t2;
      }
      for (Eigen::Index k = 0; k < n_; ++k) {
        double t1 = J_(k, j), t2 = J_(k, j + 1);
        J_(k, j) = t1 * cc + t2 * ss;
        J_(k, j + 1) = xny * (J_(k, j) + t1) - t2;
      }
    }
  }

  QpOptions opt_;
  Eigen::Index n_ = 0, me_ = 0, mi_ = 0;
  double obj_scale_ = 1.0;
  Eigen::MatrixXd H_, CE_, CI_;
  Eigen::VectorXd f_, be_, bi_, se_, si_;
  Eigen::MatrixXd J_, R_;
  Eigen::VectorXd x_, d_, z_, r_, u_;
  std::vector<Eigen::Index> A_;
  Eigen::Index iq_ = 0;
  double R_norm_ = 1.0;
  std::vector<bool> excluded_;
};

}  // namespace detail

inline QpResult solve_qp(const QpProblem& p, const QpOptions& opt = {}) {
  const auto n = p.H.rows();
  QpProblem q = p;
  if (q.A_eq.size() == 0) {
    q.A_eq.resize(0, n);
    q.b_eq.resize(0);
  }
  if (q.A_in.size() == 0) {
    q.A_in.resize(0, n);
    q.b_in.resize(0);
  }
  detail::GoldfarbIdnani gi(q, opt);
  QpResult r = gi.run();
  if (r.status == QpStatus::optimal) r.objective = 0.5 * r.x.dot(p.H * r.x) + p.f.dot(r.x);
  return r;
}

}  // namespace gridshift
