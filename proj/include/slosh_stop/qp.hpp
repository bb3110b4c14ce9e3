// Convex quadratic programming by operator splitting (ADMM).
//
//   minimize    1/2 x' H x + f' x
//   subject to  Aeq x = beq
//               lo <= Ain x <= hi
//
// The solver follows the usual OSQP iteration: the equality and inequality
// rows are stacked into one constraint block, the problem is equilibrated
// with modified Ruiz scaling, and each iteration solves one quasi-definite
// KKT system with a cached sparse LDL' factorization. Once the ADMM
// residuals are small, the active set implied by the duals is polished with
// an equality-constrained solve; a polished point is accepted only if it
// passes the full KKT check.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "slosh_stop/errors.hpp"

namespace slosh_stop {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct QpProblem {
  SparseMatrix H;  // both triangles stored
  Eigen::VectorXd f;
  SparseMatrix Aeq;
  Eigen::VectorXd beq;
  SparseMatrix Ain;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  [[nodiscard]] Eigen::Index num_variables() const { return H.rows(); }

  [[nodiscard]] double objective(const Eigen::VectorXd& x) const {
    return 0.5 * x.dot(H * x) + f.dot(x);
  }

  /// Checks dimensions, symmetry and bound ordering. PSD is checked by the
  /// solver.
  void validate() const {
    const Eigen::Index n = H.rows();
    if (H.cols() != n || f.size() != n) {
      throw DimensionMismatch("cost matrix and vector sizes disagree");
    }
    if (Aeq.cols() != n || Aeq.rows() != beq.size()) {
      throw DimensionMismatch("equality constraint sizes disagree");
    }
    if (Ain.cols() != n || Ain.rows() != lo.size() || Ain.rows() != hi.size()) {
      throw DimensionMismatch("inequality constraint sizes disagree");
    }
    const SparseMatrix diff = H - SparseMatrix(H.transpose());
    const double asym = diff.nonZeros() ? diff.coeffs().cwiseAbs().maxCoeff() : 0.0;
    const double hmax = H.nonZeros() ? H.coeffs().cwiseAbs().maxCoeff() : 0.0;
    if (asym > 1e-12 * std::max(1.0, hmax)) {
      throw InvalidArgument("cost matrix is not symmetric");
    }
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      if (lo(i) > hi(i)) throw InvalidArgument("inequality bounds have lo > hi");
    }
  }
};

enum class QpStatus { kOptimal, kMaxIter, kInfeasible };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::kOptimal: return "optimal";
    case QpStatus::kMaxIter: return "max_iter";
    case QpStatus::kInfeasible: return "infeasible";
  }
  return "unknown";
}

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd y_eq;  // multipliers of Aeq rows
  Eigen::VectorXd y_in;  // multipliers of Ain rows (>0 upper, <0 lower active)
  QpStatus status = QpStatus::kMaxIter;
  double primal_residual = kInfinity;
  double dual_residual = kInfinity;
  double objective = kInfinity;
  int iterations = 0;
  bool polished = false;
};

struct QpWarmStart {
  Eigen::VectorXd x;
  Eigen::VectorXd y_eq;  // optional, may be empty
  Eigen::VectorXd y_in;  // optional, may be empty
};

struct QpSettings {
  double tol = 1e-6;      // absolute
  double rel_tol = 1e-6;  // relative to the residual scales
  int max_iter = 4000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  int check_every = 10;
  int scaling_iters = 10;
  bool adaptive_rho = true;
  bool polish = true;
  int polish_refine_iters = 50;
  double polish_delta = 1e-9;
  double polish_active_band = 1e-7;
  int polish_active_set_iters = 10;
  double infeasibility_tol = 1e-6;
};

class QpSolver {
 public:
  QpSolver() = default;
  explicit QpSolver(QpSettings settings) : settings_(settings) {}

  [[nodiscard]] const QpSettings& settings() const { return settings_; }
  QpSettings& settings() { return settings_; }

  QpSolution solve(const QpProblem& problem,
                   const QpWarmStart* warm_start = nullptr) {
    problem.validate();
    check_convex(problem);
    setup(problem);
    return iterate(warm_start);
  }

 private:
  using Vec = Eigen::VectorXd;

  static void check_convex(const QpProblem& p) {
    const Eigen::Index n = p.H.rows();
    SparseMatrix shifted = p.H;
    SparseMatrix eye(n, n);
    eye.setIdentity();
    shifted += 1e-9 * eye;
    Eigen::SimplicialLLT<SparseMatrix> llt(shifted);
    if (llt.info() != Eigen::Success) {
      throw InvalidArgument("cost matrix is not positive semidefinite");
    }
  }

  void setup(const QpProblem& p) {
    n_ = p.H.rows();
    meq_ = p.Aeq.rows();
    m_ = meq_ + p.Ain.rows();

    // Stack constraints: rows [Aeq; Ain].
    {
      std::vector<Triplet> trips;
      trips.reserve(static_cast<std::size_t>(p.Aeq.nonZeros() + p.Ain.nonZeros()));
      for (int k = 0; k < p.Aeq.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(p.Aeq, k); it; ++it)
          trips.emplace_back(it.row(), it.col(), it.value());
      for (int k = 0; k < p.Ain.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(p.Ain, k); it; ++it)
          trips.emplace_back(meq_ + it.row(), it.col(), it.value());
      A_.resize(m_, n_);
      A_.setFromTriplets(trips.begin(), trips.end());
    }
    P_ = p.H;
    q_ = p.f;
    l_.resize(m_);
    u_.resize(m_);
    l_.head(meq_) = p.beq;
    u_.head(meq_) = p.beq;
    l_.tail(m_ - meq_) = p.lo;
    u_.tail(m_ - meq_) = p.hi;
    is_eq_.assign(static_cast<std::size_t>(m_), false);
    for (Eigen::Index i = 0; i < m_; ++i) {
      is_eq_[static_cast<std::size_t>(i)] = i < meq_ || std::abs(u_(i) - l_(i)) < 1e-12;
    }

    scale();
    assemble_kkt();
  }

  // Modified Ruiz equilibration of [P A'; A 0] plus a cost scaling.
  void scale() {
    D_ = Vec::Ones(n_);
    E_ = Vec::Ones(m_);
    cost_scale_ = 1.0;
    Ps_ = P_;
    As_ = A_;
    qs_ = q_;
    static constexpr double kMin = 1e-4;
    static constexpr double kMax = 1e4;
    auto clamp_inv_sqrt = [](double v) {
      if (v < kMin) return 1.0;
      return 1.0 / std::sqrt(std::min(v, kMax));
    };
    for (int iter = 0; iter < settings_.scaling_iters; ++iter) {
      Vec col_norm = Vec::Zero(n_);
      Vec row_norm = Vec::Zero(m_);
      for (int k = 0; k < Ps_.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(Ps_, k); it; ++it)
          col_norm(it.col()) = std::max(col_norm(it.col()), std::abs(it.value()));
      for (int k = 0; k < As_.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(As_, k); it; ++it) {
          const double a = std::abs(it.value());
          col_norm(it.col()) = std::max(col_norm(it.col()), a);
          row_norm(it.row()) = std::max(row_norm(it.row()), a);
        }
      Vec d(n_), e(m_);
      for (Eigen::Index j = 0; j < n_; ++j) d(j) = clamp_inv_sqrt(col_norm(j));
      for (Eigen::Index i = 0; i < m_; ++i) e(i) = clamp_inv_sqrt(row_norm(i));
      Ps_ = d.asDiagonal() * Ps_ * d.asDiagonal();
      As_ = e.asDiagonal() * As_ * d.asDiagonal();
      qs_ = d.cwiseProduct(qs_);
      D_ = D_.cwiseProduct(d);
      E_ = E_.cwiseProduct(e);

      // Cost scaling.
      Vec pcol = Vec::Zero(n_);
      for (int k = 0; k < Ps_.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(Ps_, k); it; ++it)
          pcol(it.col()) = std::max(pcol(it.col()), std::abs(it.value()));
      double c = std::max(n_ > 0 ? pcol.mean() : 0.0,
                          qs_.size() ? qs_.cwiseAbs().maxCoeff() : 0.0);
      c = c < kMin ? 1.0 : 1.0 / std::min(c, kMax);
      Ps_ *= c;
      qs_ *= c;
      cost_scale_ *= c;
    }
    ls_ = E_.cwiseProduct(l_);
    us_ = E_.cwiseProduct(u_);
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (!std::isfinite(l_(i))) ls_(i) = -kInfinity;
      if (!std::isfinite(u_(i))) us_(i) = kInfinity;
    }
    rho_bar_ = settings_.rho;
  }

  void set_rho_vector() {
    rho_vec_.resize(m_);
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (!std::isfinite(l_(i)) && !std::isfinite(u_(i))) {
        rho_vec_(i) = 1e-6;
      } else if (is_eq_[static_cast<std::size_t>(i)]) {
        rho_vec_(i) = 1e3 * rho_bar_;
      } else {
        rho_vec_(i) = rho_bar_;
      }
    }
  }

  void assemble_kkt() {
    set_rho_vector();
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(Ps_.nonZeros() + As_.nonZeros() + n_ + m_));
    for (int k = 0; k < Ps_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(Ps_, k); it; ++it)
        if (it.row() <= it.col()) trips.emplace_back(it.row(), it.col(), it.value());
    for (Eigen::Index j = 0; j < n_; ++j) trips.emplace_back(j, j, settings_.sigma);
    for (int k = 0; k < As_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(As_, k); it; ++it)
        trips.emplace_back(it.col(), n_ + it.row(), it.value());
    for (Eigen::Index i = 0; i < m_; ++i) trips.emplace_back(n_ + i, n_ + i, -1.0 / rho_vec_(i));
    kkt_.resize(n_ + m_, n_ + m_);
    kkt_.setFromTriplets(trips.begin(), trips.end());
    kkt_.makeCompressed();
    ldlt_.analyzePattern(kkt_);
    ldlt_.factorize(kkt_);
    if (ldlt_.info() != Eigen::Success) throw SolverFailure("KKT factorization failed");
  }

  void refactor_with_rho(double rho) {
    rho_bar_ = rho;
    set_rho_vector();
    for (Eigen::Index i = 0; i < m_; ++i) kkt_.coeffRef(n_ + i, n_ + i) = -1.0 / rho_vec_(i);
    ldlt_.factorize(kkt_);
    if (ldlt_.info() != Eigen::Success) throw SolverFailure("KKT factorization failed");
  }

  Vec project(const Vec& v) const { return v.cwiseMax(ls_).cwiseMin(us_); }

  struct Residuals {
    double primal = 0.0;
    double dual = 0.0;
    double primal_scale = 0.0;
    double dual_scale = 0.0;
  };

  // Residuals of an unscaled (x, y) pair against the original problem.
  Residuals unscaled_residuals(const Vec& x, const Vec& y) const {
    const Vec Ax = A_ * x;
    const Vec z = Ax.cwiseMax(l_).cwiseMin(u_);
    const Vec Px = P_ * x;
    const Vec Aty = A_.transpose() * y;
    Residuals r;
    r.primal = m_ ? (Ax - z).cwiseAbs().maxCoeff() : 0.0;
    r.dual = n_ ? (Px + q_ + Aty).cwiseAbs().maxCoeff() : 0.0;
    auto inf_norm = [](const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; };
    r.primal_scale = std::max(inf_norm(Ax), inf_norm(z));
    r.dual_scale = std::max({inf_norm(Px), inf_norm(Aty), inf_norm(q_)});
    return r;
  }

  bool converged(const Residuals& r) const {
    return r.primal <= settings_.tol + settings_.rel_tol * r.primal_scale &&
           r.dual <= settings_.tol + settings_.rel_tol * r.dual_scale;
  }

  // Dual sign conditions: y_i > 0 only at the upper bound, y_i < 0 only at
  // the lower bound.
  bool dual_signs_ok(const Vec& x, const Vec& y) const {
    const Vec Ax = A_ * x;
    const double ytol = settings_.tol + settings_.rel_tol * (y.size() ? y.cwiseAbs().maxCoeff() : 0.0);
    const double ptol = 10.0 * settings_.tol * (1.0 + (Ax.size() ? Ax.cwiseAbs().maxCoeff() : 0.0));
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (is_eq_[static_cast<std::size_t>(i)]) continue;
      if (y(i) > ytol && !(u_(i) - Ax(i) <= ptol)) return false;
      if (y(i) < -ytol && !(Ax(i) - l_(i) <= ptol)) return false;
    }
    return true;
  }

  // Equality-constrained solve on the active set guessed from (z, y). The
  // guess is then corrected a few times: violated rows join, rows whose
  // multiplier has the wrong sign leave.
  std::optional<std::pair<Vec, Vec>> polish(const Vec& xs, const Vec& zs, const Vec& ys) {
    const double active_band = settings_.polish_active_band;
    std::vector<int> side(static_cast<std::size_t>(m_), 0);  // -1 lower, +1 upper, 2 equality
    std::vector<Eigen::Index> guess;
    for (Eigen::Index i = 0; i < m_; ++i) {
      auto& s = side[static_cast<std::size_t>(i)];
      if (is_eq_[static_cast<std::size_t>(i)]) {
        s = 2;
      } else if (zs(i) - ls_(i) < std::max(-ys(i), active_band)) {
        s = -1;
      } else if (us_(i) - zs(i) < std::max(ys(i), active_band)) {
        s = 1;
      }
      if (s != 0) guess.push_back(i * 3 + s + 1);
    }
    if (guess == last_polish_set_) return std::nullopt;
    last_polish_set_ = guess;

    Vec x_scaled = xs;
    Vec y_scaled = Vec::Zero(m_);
    for (int round = 0; round <= settings_.polish_active_set_iters; ++round) {
      if (!solve_active(side, x_scaled, y_scaled)) return std::nullopt;
      const Vec Ax = As_ * x_scaled;
      bool changed = false;
      for (Eigen::Index i = 0; i < m_; ++i) {
        auto& s = side[static_cast<std::size_t>(i)];
        if (s == 2) continue;
        const double tol = settings_.tol * (1.0 + std::abs(Ax(i)));
        if (s == 0 && Ax(i) > us_(i) + tol) {
          s = 1;
        } else if (s == 0 && Ax(i) < ls_(i) - tol) {
          s = -1;
        } else if ((s == 1 && y_scaled(i) < 0.0) || (s == -1 && y_scaled(i) > 0.0)) {
          s = 0;
        } else {
          continue;
        }
        changed = true;
      }
      if (!changed) break;
    }

    Vec x = D_.cwiseProduct(x_scaled);
    Vec y = E_.cwiseProduct(y_scaled) / cost_scale_;
    return std::make_pair(std::move(x), std::move(y));
  }

  // KKT solve in scaled variables with the rows of `side` pinned to a bound.
  bool solve_active(const std::vector<int>& side, Vec& x_scaled, Vec& y_scaled) const {
    std::vector<Eigen::Index> active;
    std::vector<double> target;
    for (Eigen::Index i = 0; i < m_; ++i) {
      const int s = side[static_cast<std::size_t>(i)];
      if (s == 0) continue;
      active.push_back(i);
      target.push_back(s == 1 ? us_(i) : ls_(i));
    }
    const Eigen::Index na = static_cast<Eigen::Index>(active.size());
    const Eigen::Index dim = n_ + na;
    std::vector<Eigen::Index> row_map(static_cast<std::size_t>(m_), -1);
    for (Eigen::Index k = 0; k < na; ++k) row_map[static_cast<std::size_t>(active[static_cast<std::size_t>(k)])] = k;

    std::vector<Triplet> trips;
    for (int k = 0; k < Ps_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(Ps_, k); it; ++it)
        trips.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < As_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(As_, k); it; ++it) {
        const Eigen::Index r = row_map[static_cast<std::size_t>(it.row())];
        if (r < 0) continue;
        trips.emplace_back(it.col(), n_ + r, it.value());
        trips.emplace_back(n_ + r, it.col(), it.value());
      }
    SparseMatrix K(dim, dim);
    K.setFromTriplets(trips.begin(), trips.end());
    K.makeCompressed();

    Vec rhs(dim);
    rhs.head(n_) = -qs_;
    for (Eigen::Index k = 0; k < na; ++k) rhs(n_ + k) = target[static_cast<std::size_t>(k)];

    // Exact KKT solve; falls back to a regularized LDL' with iterative
    // refinement when the active set makes the system singular.
    Vec sol;
    Eigen::SparseLU<SparseMatrix> lu;
    lu.compute(K);
    if (lu.info() == Eigen::Success) {
      sol = lu.solve(rhs);
      for (int it = 0; it < 2 && sol.allFinite(); ++it) sol += lu.solve(Vec(rhs - K * sol));
    }
    if (lu.info() != Eigen::Success || !sol.allFinite()) {
      SparseMatrix Kreg = K;
      for (Eigen::Index j = 0; j < n_; ++j) Kreg.coeffRef(j, j) += settings_.polish_delta;
      for (Eigen::Index k = 0; k < na; ++k) Kreg.coeffRef(n_ + k, n_ + k) -= settings_.polish_delta;
      Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> ldlt(Kreg);
      if (ldlt.info() != Eigen::Success) return false;
      sol = Vec::Zero(dim);
      sol.head(n_) = x_scaled;
      double prev_norm = kInfinity;
      for (int it = 0; it < settings_.polish_refine_iters; ++it) {
        const Vec res = rhs - K * sol;
        const double norm = res.cwiseAbs().maxCoeff();
        if (norm < 1e-14 * (1.0 + rhs.cwiseAbs().maxCoeff()) || norm > 0.9 * prev_norm) break;
        prev_norm = norm;
        sol += ldlt.solve(res);
      }
    }
    if (!sol.allFinite()) return false;
    x_scaled = sol.head(n_);
    y_scaled.setZero();
    for (Eigen::Index k = 0; k < na; ++k) y_scaled(active[static_cast<std::size_t>(k)]) = sol(n_ + k);
    return true;
  }

  QpSolution make_solution(const Vec& x, const Vec& y, QpStatus status, int iters,
                           bool polished) const {
    QpSolution s;
    s.x = x;
    s.y_eq = y.head(meq_);
    s.y_in = y.tail(m_ - meq_);
    s.status = status;
    const Residuals r = unscaled_residuals(x, y);
    s.primal_residual = r.primal;
    s.dual_residual = r.dual;
    s.objective = 0.5 * x.dot(P_ * x) + q_.dot(x);
    s.iterations = iters;
    s.polished = polished;
    return s;
  }

  bool primal_infeasible(const Vec& dy_scaled) const {
    const Vec dy = E_.cwiseProduct(dy_scaled);
    const double norm = dy.size() ? dy.cwiseAbs().maxCoeff() : 0.0;
    if (norm < 1e-12) return false;
    const double eps = settings_.infeasibility_tol;
    double support = 0.0;
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (dy(i) > eps * norm) {
        if (!std::isfinite(u_(i))) return false;
        support += u_(i) * dy(i);
      } else if (dy(i) < -eps * norm) {
        if (!std::isfinite(l_(i))) return false;
        support += l_(i) * dy(i);
      }
    }
    const Vec Atdy = A_.transpose() * dy;
    const double at_norm = Atdy.size() ? Atdy.cwiseAbs().maxCoeff() : 0.0;
    return at_norm <= eps * norm && support < -eps * norm;
  }

  QpSolution iterate(const QpWarmStart* ws) {
    const double alpha = settings_.alpha;
    const double sigma = settings_.sigma;

    Vec x = Vec::Zero(n_);
    Vec y = Vec::Zero(m_);
    if (ws != nullptr && ws->x.size() == n_) {
      x = D_.cwiseInverse().cwiseProduct(ws->x);
      if (ws->y_eq.size() == meq_ && ws->y_in.size() == m_ - meq_) {
        Vec yu(m_);
        yu << ws->y_eq, ws->y_in;
        y = cost_scale_ * E_.cwiseInverse().cwiseProduct(yu);
      }
    }
    Vec z = project(As_ * x);
    Vec rhs(n_ + m_);
    Vec y_prev = y;
    last_polish_set_.clear();

    std::optional<QpSolution> best;
    int iter = 0;
    for (iter = 1; iter <= settings_.max_iter; ++iter) {
      rhs.head(n_) = sigma * x - qs_;
      rhs.tail(m_) = z - rho_vec_.cwiseInverse().cwiseProduct(y);
      const Vec sol = ldlt_.solve(rhs);
      const auto x_tilde = sol.head(n_);
      const Vec z_tilde = z + rho_vec_.cwiseInverse().cwiseProduct(sol.tail(m_) - y);

      x = alpha * x_tilde + (1.0 - alpha) * x;
      const Vec z_relaxed = alpha * z_tilde + (1.0 - alpha) * z;
      const Vec z_next = project(z_relaxed + rho_vec_.cwiseInverse().cwiseProduct(y));
      y += rho_vec_.cwiseProduct(z_relaxed - z_next);
      z = z_next;

      if (iter % settings_.check_every != 0 && iter != settings_.max_iter) continue;

      const Vec xu = D_.cwiseProduct(x);
      const Vec yu = E_.cwiseProduct(y) / cost_scale_;
      const Residuals r = unscaled_residuals(xu, yu);

      if (converged(r)) {
        QpSolution s = make_solution(xu, yu, QpStatus::kOptimal, iter, false);
        if (settings_.polish) {
          if (auto pol = polish(x, z, y)) {
            const Residuals rp = unscaled_residuals(pol->first, pol->second);
            if (converged(rp) && rp.primal <= r.primal + settings_.tol &&
                dual_signs_ok(pol->first, pol->second)) {
              return make_solution(pol->first, pol->second, QpStatus::kOptimal, iter, true);
            }
          }
        }
        return s;
      }

      // Early polish whenever the guessed active set changes; the full KKT
      // check rejects wrong guesses.
      if (settings_.polish) {
        if (auto pol = polish(x, z, y)) {
          const Residuals rp = unscaled_residuals(pol->first, pol->second);
          if (converged(rp) && dual_signs_ok(pol->first, pol->second)) {
            return make_solution(pol->first, pol->second, QpStatus::kOptimal, iter, true);
          }
        }
      }

      if (primal_infeasible(y - y_prev)) {
        return make_solution(xu, yu, QpStatus::kInfeasible, iter, false);
      }
      y_prev = y;

      if (!best || r.primal + r.dual < best->primal_residual + best->dual_residual) {
        best = make_solution(xu, yu, QpStatus::kMaxIter, iter, false);
      }

      if (settings_.adaptive_rho) {
        const Vec Ax = As_ * x;
        const Vec Px = Ps_ * x;
        const Vec Aty = As_.transpose() * y;
        auto inf_norm = [](const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; };
        const double prim = inf_norm(Ax - z) / std::max({inf_norm(Ax), inf_norm(z), 1e-10});
        const double dual = inf_norm(Px + qs_ + Aty) /
                            std::max({inf_norm(Px), inf_norm(Aty), inf_norm(qs_), 1e-10});
        if (prim > 0.0 && dual > 0.0) {
          const double rho_new =
              std::clamp(rho_bar_ * std::sqrt(prim / dual), 1e-6, 1e6);
          if (rho_new > 5.0 * rho_bar_ || rho_new < 0.2 * rho_bar_) refactor_with_rho(rho_new);
        }
      }
    }
    best->iterations = settings_.max_iter;
    return *best;
  }

  QpSettings settings_;

  Eigen::Index n_ = 0;
  Eigen::Index m_ = 0;
  Eigen::Index meq_ = 0;
  SparseMatrix P_, A_, Ps_, As_;
  Vec q_, l_, u_, qs_, ls_, us_;
  Vec D_, E_;
  double cost_scale_ = 1.0;
  double rho_bar_ = 0.1;
  Vec rho_vec_;
  std::vector<bool> is_eq_;
  SparseMatrix kkt_;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Upper> ldlt_;
  std::vector<Eigen::Index> last_polish_set_;
};

struct BoxQpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd multipliers;  // >0 at upper, <0 at lower, 0 when free
  QpStatus status = QpStatus::kMaxIter;
  int iterations = 0;
};

/// Dense primal active-set method for min 1/2 x'Hx + f'x, lo <= x <= hi with
/// H positive definite. Exact up to round-off; meant for small problems.
inline BoxQpResult solve_box_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& f,
                                const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                const Eigen::VectorXd* warm_start = nullptr,
                                double tol = 1e-10) {
  const Eigen::Index n = H.rows();
  if (H.cols() != n || f.size() != n || lo.size() != n || hi.size() != n) {
    throw DimensionMismatch("box QP sizes disagree");
  }
  if (Eigen::LLT<Eigen::MatrixXd>(H).info() != Eigen::Success) {
    throw InvalidArgument("box QP cost must be positive definite");
  }
  BoxQpResult out;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lo(i) > hi(i)) {
      out.status = QpStatus::kInfeasible;
      out.x = lo.cwiseMax(-1e300).cwiseMin(hi.cwiseMin(1e300));
      out.multipliers = Eigen::VectorXd::Zero(n);
      return out;
    }
  }

  // 0 free, -1 at lower, +1 at upper
  std::vector<int> state(static_cast<std::size_t>(n), 0);
  Eigen::VectorXd x = (warm_start != nullptr && warm_start->size() == n)
                          ? Eigen::VectorXd(*warm_start)
                          : Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (x(i) <= lo(i)) {
      x(i) = lo(i);
      state[static_cast<std::size_t>(i)] = -1;
    } else if (x(i) >= hi(i)) {
      x(i) = hi(i);
      state[static_cast<std::size_t>(i)] = 1;
    }
  }
  const double scale = 1.0 + f.cwiseAbs().maxCoeff() + H.cwiseAbs().maxCoeff();

  const int max_iter = static_cast<int>(20 * n + 20);
  bool at_minimizer = false;
  for (int iter = 1; iter <= max_iter; ++iter) {
    out.iterations = iter;
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i)
      if (state[static_cast<std::size_t>(i)] == 0) free.push_back(i);
    const Eigen::VectorXd g = H * x + f;

    Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
    if (!free.empty()) {
      const auto nf = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd Hff(nf, nf);
      Eigen::VectorXd gf(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        gf(a) = g(free[static_cast<std::size_t>(a)]);
        for (Eigen::Index b = 0; b < nf; ++b)
          Hff(a, b) = H(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
      }
      const Eigen::VectorXd pf = Hff.llt().solve(-gf);
      for (Eigen::Index a = 0; a < nf; ++a) p(free[static_cast<std::size_t>(a)]) = pf(a);
    }

    const double step_norm = p.cwiseAbs().maxCoeff();
    if (at_minimizer || step_norm <= tol * (1.0 + x.cwiseAbs().maxCoeff())) {
      at_minimizer = false;
      // Stationary on the working set: check multiplier signs.
      Eigen::Index worst = -1;
      double worst_val = -tol * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int st = state[static_cast<std::size_t>(i)];
        const double lam = st == -1 ? g(i) : (st == 1 ? -g(i) : 0.0);
        if (lam < worst_val) {
          worst_val = lam;
          worst = i;
        }
      }
      if (worst < 0) {
        out.x = x;
        out.multipliers = Eigen::VectorXd::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i)
          if (state[static_cast<std::size_t>(i)] != 0) out.multipliers(i) = -g(i);
        out.status = QpStatus::kOptimal;
        return out;
      }
      state[static_cast<std::size_t>(worst)] = 0;
      continue;
    }

    double t = 1.0;
    Eigen::Index blocking = -1;
    for (const Eigen::Index i : free) {
      if (p(i) < 0.0 && std::isfinite(lo(i))) {
        const double ti = (lo(i) - x(i)) / p(i);
        if (ti < t) {
          t = ti;
          blocking = i;
        }
      } else if (p(i) > 0.0 && std::isfinite(hi(i))) {
        const double ti = (hi(i) - x(i)) / p(i);
        if (ti < t) {
          t = ti;
          blocking = i;
        }
      }
    }
    x += std::max(t, 0.0) * p;
    if (blocking < 0) {
      at_minimizer = true;
    } else {
      const bool upper = p(blocking) > 0.0;
      x(blocking) = upper ? hi(blocking) : lo(blocking);
      state[static_cast<std::size_t>(blocking)] = upper ? 1 : -1;
    }
  }
  out.x = x;
  out.multipliers = Eigen::VectorXd::Zero(n);
  out.status = QpStatus::kMaxIter;
  return out;
}

/// One-shot convenience wrapper around QpSolver.
inline QpSolution solve_qp(const QpProblem& problem, double tol = 1e-6,
                           int max_iter = 4000,
                           const std::optional<Eigen::VectorXd>& warm_start = std::nullopt) {
  QpSettings settings;
  settings.tol = tol;
  settings.rel_tol = tol;
  settings.max_iter = max_iter;
  QpSolver solver(settings);
  if (warm_start) {
    QpWarmStart ws{*warm_start, {}, {}};
    return solver.solve(problem, &ws);
  }
  return solver.solve(problem);
}

}  // namespace slosh_stop
