// Primal-dual interior point method for the same QP form as qp.hpp,
// Mehrotra predictor-corrector on the reduced KKT system
//
//   [ H + Ain' W Ain + dp I   Aeq' ] [dx]
//   [ Aeq                   -dd I ] [dy]
//
// with W the diagonal of z/s over the finite bounds. Rows with lo == hi are
// moved to the equality block. Iteration counts barely depend on the
// conditioning of the problem, which is what the stop OCP needs.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "slosh_stop/qp.hpp"

namespace slosh_stop {

struct IpmSettings {
  double tol = 1e-10;
  // Accepted when the iteration stalls (factorization breakdown close to
  // the solution).
  double acceptable_tol = 1e-7;
  int max_iter = 80;
  double regularization = 1e-8;
  double max_regularization = 1e-4;
  int refine_iters = 3;
  double step_fraction = 0.99;
};

class IpmSolver {
 public:
  explicit IpmSolver(IpmSettings settings = {}) : settings_(settings) {}

  [[nodiscard]] const IpmSettings& settings() const { return settings_; }

  QpSolution solve(const QpProblem& problem) {
    problem.validate();
    using Vec = Eigen::VectorXd;
    const Eigen::Index n = problem.num_variables();
    const Eigen::Index m_in = problem.Ain.rows();

    // Pinned rows join the equalities.
    std::vector<Eigen::Index> pinned, free_rows;
    for (Eigen::Index i = 0; i < m_in; ++i) {
      (problem.lo(i) == problem.hi(i) ? pinned : free_rows).push_back(i);
    }
    const SparseMatrix Ain_t = problem.Ain.transpose();
    auto select_rows = [&](const std::vector<Eigen::Index>& rows) {
      std::vector<Triplet> t;
      for (std::size_t k = 0; k < rows.size(); ++k)
        for (SparseMatrix::InnerIterator it(Ain_t, rows[k]); it; ++it)
          t.emplace_back(static_cast<Eigen::Index>(k), it.row(), it.value());
      SparseMatrix out(static_cast<Eigen::Index>(rows.size()), n);
      out.setFromTriplets(t.begin(), t.end());
      return out;
    };
    const SparseMatrix P = select_rows(pinned);
    const SparseMatrix G = select_rows(free_rows);
    const Eigen::Index meq = problem.Aeq.rows() + P.rows();
    const Eigen::Index mg = G.rows();

    SparseMatrix A(meq, n);
    {
      std::vector<Triplet> t;
      for (int k = 0; k < problem.Aeq.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(problem.Aeq, k); it; ++it)
          t.emplace_back(it.row(), it.col(), it.value());
      for (int k = 0; k < P.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(P, k); it; ++it)
          t.emplace_back(problem.Aeq.rows() + it.row(), it.col(), it.value());
      A.setFromTriplets(t.begin(), t.end());
    }
    Vec b(meq);
    b.head(problem.Aeq.rows()) = problem.beq;
    for (std::size_t k = 0; k < pinned.size(); ++k) {
      b(problem.Aeq.rows() + static_cast<Eigen::Index>(k)) = problem.lo(pinned[k]);
    }
    Vec lo(mg), hi(mg);
    for (std::size_t k = 0; k < free_rows.size(); ++k) {
      lo(static_cast<Eigen::Index>(k)) = problem.lo(free_rows[k]);
      hi(static_cast<Eigen::Index>(k)) = problem.hi(free_rows[k]);
    }
    // Indicator of finite bounds; infinite sides carry s = 1, z = 0 and
    // never enter the residuals.
    const Vec has_hi = hi.unaryExpr([](double v) { return std::isfinite(v) ? 1.0 : 0.0; });
    const Vec has_lo = lo.unaryExpr([](double v) { return std::isfinite(v) ? 1.0 : 0.0; });
    const Vec hi_f = hi.unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; });
    const Vec lo_f = lo.unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; });
    const double n_bounds = has_hi.sum() + has_lo.sum();

    const SparseMatrix& H = problem.H;
    const Vec& f = problem.f;

    Vec x = Vec::Zero(n), y = Vec::Zero(meq);
    Vec su = Vec::Ones(mg), sl = Vec::Ones(mg), zu = has_hi, zl = has_lo;
    {
      const Vec gx = G * x;
      for (Eigen::Index i = 0; i < mg; ++i) {
        if (has_hi(i) > 0.0) su(i) = std::max(hi_f(i) - gx(i), 1.0);
        if (has_lo(i) > 0.0) sl(i) = std::max(gx(i) - lo_f(i), 1.0);
      }
    }

    Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> ldlt;
    bool analyzed = false;
    auto inf_norm = [](const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; };
    const double scale_b = 1.0 + inf_norm(b);
    const double scale_f = 1.0 + inf_norm(f);
    const double scale_h = 1.0 + std::max(inf_norm(hi_f), inf_norm(lo_f));

    QpSolution out;
    out.status = QpStatus::kMaxIter;
    // Worst scaled KKT error; the best iterate is kept in case the
    // iteration stalls.
    double best_merit = kInfinity;
    Vec bx = x, by = y, bzu = zu, bzl = zl;
    int iter = 0;
    for (iter = 0; iter < settings_.max_iter; ++iter) {
      const Vec gx = G * x;
      const Vec rd = H * x + f + A.transpose() * y + G.transpose() * (zu - zl);
      const Vec rp = A * x - b;
      const Vec ru = (gx + su - hi_f).cwiseProduct(has_hi);
      const Vec rl = (-gx + sl + lo_f).cwiseProduct(has_lo);
      const double gap = n_bounds > 0 ? (su.dot(zu.cwiseProduct(has_hi)) + sl.dot(zl.cwiseProduct(has_lo))) / n_bounds : 0.0;
      const double obj = 0.5 * x.dot(H * x) + f.dot(x);
      const double merit = std::max({inf_norm(rp) / scale_b, std::max(inf_norm(ru), inf_norm(rl)) / scale_h,
                                     inf_norm(rd) / scale_f, gap / (1.0 + std::abs(obj))});
      if (merit < best_merit) {
        best_merit = merit;
        bx = x;
        by = y;
        bzu = zu;
        bzl = zl;
      }
      if (merit <= settings_.tol) break;

      // Reduced system matrix for this iterate.
      const Vec wu = zu.cwiseQuotient(su).cwiseProduct(has_hi);
      const Vec wl = zl.cwiseQuotient(sl).cwiseProduct(has_lo);
      const Vec w = wu + wl;
      auto assemble = [&](double dp, double dd) {
      SparseMatrix K(n + meq, n + meq);
      {
        const SparseMatrix GtWG = G.transpose() * w.asDiagonal() * G;
        SparseMatrix top = H + GtWG;
        std::vector<Triplet> t;
        t.reserve(static_cast<std::size_t>(top.nonZeros() + A.nonZeros() + n + meq));
        for (int k = 0; k < top.outerSize(); ++k)
          for (SparseMatrix::InnerIterator it(top, k); it; ++it)
            if (it.row() >= it.col()) t.emplace_back(it.row(), it.col(), it.value());
        for (int k = 0; k < A.outerSize(); ++k)
          for (SparseMatrix::InnerIterator it(A, k); it; ++it)
            t.emplace_back(n + it.row(), it.col(), it.value());
        for (Eigen::Index i = 0; i < n; ++i) t.emplace_back(i, i, dp);
        for (Eigen::Index i = 0; i < meq; ++i) t.emplace_back(n + i, n + i, -dd);
        K.setFromTriplets(t.begin(), t.end());
      }
      return K;
      };
      // Regularization grows until the factorization goes through.
      bool factored = false;
      for (double reg = settings_.regularization; reg <= settings_.max_regularization; reg *= 100.0) {
        const SparseMatrix K = assemble(reg, reg);
        if (!analyzed) {
          ldlt.analyzePattern(K);
          analyzed = true;
        }
        ldlt.factorize(K);
        if (ldlt.info() == Eigen::Success) {
          factored = true;
          break;
        }
      }
      if (!factored) break;

      // Unregularized operator for refinement.
      auto apply = [&](const Vec& v) {
        Vec r(n + meq);
        const Vec vx = v.head(n);
        r.head(n) = H * vx + G.transpose() * w.cwiseProduct(G * vx) + A.transpose() * v.tail(meq);
        r.tail(meq) = A * vx;
        return r;
      };

      struct Dir {
        Vec dx, dy, dsu, dsl, dzu, dzl;
      };
      auto direction = [&](const Vec& rcu, const Vec& rcl) {
        // rc = complementarity residual target (s.*z + corrections - sigma mu)
        const Vec tu = (zu.cwiseProduct(ru) - rcu).cwiseQuotient(su).cwiseProduct(has_hi);
        const Vec tl = (zl.cwiseProduct(rl) - rcl).cwiseQuotient(sl).cwiseProduct(has_lo);
        Vec rhs(n + meq);
        rhs.head(n) = -rd - G.transpose() * (tu - tl);
        rhs.tail(meq) = -rp;
        Vec sol = ldlt.solve(rhs);
        for (int r = 0; r < settings_.refine_iters; ++r) sol += ldlt.solve(Vec(rhs - apply(sol)));
        Dir d;
        d.dx = sol.head(n);
        d.dy = sol.tail(meq);
        const Vec gdx = G * d.dx;
        d.dsu = (-ru - gdx).cwiseProduct(has_hi);
        d.dsl = (-rl + gdx).cwiseProduct(has_lo);
        d.dzu = (zu.cwiseProduct(gdx + ru) - rcu).cwiseQuotient(su).cwiseProduct(has_hi);
        d.dzl = (zl.cwiseProduct(-gdx + rl) - rcl).cwiseQuotient(sl).cwiseProduct(has_lo);
        return d;
      };
      auto max_step = [&](const Dir& d) {
        double a = kInfinity;
        for (Eigen::Index i = 0; i < mg; ++i) {
          if (has_hi(i) > 0.0) {
            if (d.dsu(i) < 0.0) a = std::min(a, -su(i) / d.dsu(i));
            if (d.dzu(i) < 0.0) a = std::min(a, -zu(i) / d.dzu(i));
          }
          if (has_lo(i) > 0.0) {
            if (d.dsl(i) < 0.0) a = std::min(a, -sl(i) / d.dsl(i));
            if (d.dzl(i) < 0.0) a = std::min(a, -zl(i) / d.dzl(i));
          }
        }
        return a;
      };

      // Predictor.
      const Vec rcu_aff = su.cwiseProduct(zu).cwiseProduct(has_hi);
      const Vec rcl_aff = sl.cwiseProduct(zl).cwiseProduct(has_lo);
      const Dir aff = direction(rcu_aff, rcl_aff);
      const double a_aff = std::min(1.0, max_step(aff));
      double sigma = 0.0;
      if (n_bounds > 0) {
        const double mu_aff = ((su + a_aff * aff.dsu).dot((zu + a_aff * aff.dzu).cwiseProduct(has_hi)) +
                               (sl + a_aff * aff.dsl).dot((zl + a_aff * aff.dzl).cwiseProduct(has_lo))) /
                              n_bounds;
        sigma = std::pow(std::max(mu_aff, 0.0) / std::max(gap, 1e-300), 3);
        sigma = std::min(sigma, 1.0);
      }

      // Corrector.
      const Vec rcu = (rcu_aff + aff.dsu.cwiseProduct(aff.dzu) - Vec::Constant(mg, sigma * gap)).cwiseProduct(has_hi);
      const Vec rcl = (rcl_aff + aff.dsl.cwiseProduct(aff.dzl) - Vec::Constant(mg, sigma * gap)).cwiseProduct(has_lo);
      const Dir d = direction(rcu, rcl);
      const double a = std::min(1.0, settings_.step_fraction * max_step(d));

      x += a * d.dx;
      y += a * d.dy;
      su += a * d.dsu;
      sl += a * d.dsl;
      zu += a * d.dzu;
      zl += a * d.dzl;
      if (!x.allFinite()) break;
    }
    x = bx;
    y = by;
    zu = bzu;
    zl = bzl;
    if (best_merit <= settings_.acceptable_tol) out.status = QpStatus::kOptimal;

    out.x = x;
    out.iterations = iter;
    out.objective = problem.objective(x);
    // Multipliers in the ADMM convention: one per row, positive on the upper
    // side.
    out.y_eq = y.head(problem.Aeq.rows());
    out.y_in = Vec::Zero(m_in);
    for (std::size_t k = 0; k < free_rows.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      out.y_in(free_rows[k]) = zu(i) * has_hi(i) - zl(i) * has_lo(i);
    }
    for (std::size_t k = 0; k < pinned.size(); ++k) {
      out.y_in(pinned[k]) = y(problem.Aeq.rows() + static_cast<Eigen::Index>(k));
    }
    const Vec Ain_x = problem.Ain * x;
    double pr = meq ? inf_norm(problem.Aeq * x - problem.beq) : 0.0;
    for (Eigen::Index i = 0; i < m_in; ++i) {
      pr = std::max({pr, Ain_x(i) - problem.hi(i), problem.lo(i) - Ain_x(i)});
    }
    out.primal_residual = pr;
    out.dual_residual = inf_norm(Vec(H * x + f + problem.Aeq.transpose() * out.y_eq +
                                     problem.Ain.transpose() * out.y_in));
    return out;
  }

 private:
  IpmSettings settings_;
};

/// One-shot wrapper.
inline QpSolution solve_qp_ipm(const QpProblem& problem, const IpmSettings& settings = {}) {
  IpmSolver solver(settings);
  return solver.solve(problem);
}

}  // namespace slosh_stop
