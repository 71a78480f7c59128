#include "roadsense/nonneg_qp.hpp"

#include "roadsense/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

namespace roadsense {

double nonneg_qp_kkt_residual(const Eigen::MatrixXd& Q, const Eigen::VectorXd& b,
                              const Eigen::VectorXd& x) {
  const Eigen::VectorXd g = Q * x - b;
  double res = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    res = std::max(res, std::max(0.0, -x[i]));
    res = std::max(res, x[i] > 0.0 ? std::abs(g[i]) : std::max(0.0, -g[i]));
  }
  return res;
}

namespace {

// Solves Q_PP z_P = b_P; entries outside P are zero.
Eigen::VectorXd solve_passive(const Eigen::MatrixXd& Q, const Eigen::VectorXd& b,
                              const std::vector<Eigen::Index>& passive) {
  const auto m = static_cast<Eigen::Index>(passive.size());
  Eigen::MatrixXd qp(m, m);
  Eigen::VectorXd bp(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    bp[i] = b[passive[static_cast<std::size_t>(i)]];
    for (Eigen::Index j = 0; j < m; ++j) {
      qp(i, j) = Q(passive[static_cast<std::size_t>(i)], passive[static_cast<std::size_t>(j)]);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(qp);
  if (llt.info() != Eigen::Success) throw SolverFailure("QP matrix is not positive definite");
  const Eigen::VectorXd zp = llt.solve(bp);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(b.size());
  for (Eigen::Index i = 0; i < m; ++i) z[passive[static_cast<std::size_t>(i)]] = zp[i];
  return z;
}

}  // namespace

NonnegQpResult solve_nonneg_qp(const Eigen::MatrixXd& Q, const Eigen::VectorXd& b, double tol,
                               int max_iter) {
  const Eigen::Index n = b.size();
  if (Q.rows() != n || Q.cols() != n) throw SolverFailure("QP dimensions do not match");
  if (max_iter <= 0) max_iter = static_cast<int>(3 * n + 30);

  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  NonnegQpResult out;
  out.x = Eigen::VectorXd::Zero(n);
  if (n == 0) return out;

  std::vector<char> in_passive(static_cast<std::size_t>(n), 0);
  std::vector<Eigen::Index> passive;
  Eigen::VectorXd& x = out.x;

  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    const Eigen::VectorXd w = b - Q * x;  // negative gradient
    Eigen::Index enter = -1;
    double best = tol * scale;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!in_passive[static_cast<std::size_t>(j)] && w[j] > best) {
        best = w[j];
        enter = j;
      }
    }
    if (enter < 0) break;
    in_passive[static_cast<std::size_t>(enter)] = 1;
    passive.push_back(enter);
    std::sort(passive.begin(), passive.end());

    for (int inner = 0; inner <= n; ++inner) {
      Eigen::VectorXd z = solve_passive(Q, b, passive);
      bool feasible = true;
      double alpha = 1.0;
      Eigen::Index block = -1;
      for (auto i : passive) {
        if (z[i] <= 0.0) {
          feasible = false;
          const double denom = x[i] - z[i];
          const double a = denom > 0.0 ? x[i] / denom : 0.0;
          if (block < 0 || a < alpha) {
            alpha = a;
            block = i;
          }
        }
      }
      if (feasible) {
        x = z;
        break;
      }
      x += alpha * (z - x);
      x[block] = 0.0;
      std::vector<Eigen::Index> kept;
      for (auto i : passive) {
        if (x[i] <= 1e-15 * scale) {
          x[i] = 0.0;
          in_passive[static_cast<std::size_t>(i)] = 0;
        } else {
          kept.push_back(i);
        }
      }
      passive.swap(kept);
    }
  }

  out.kkt_residual = nonneg_qp_kkt_residual(Q, b, x) / scale;
  if (!(out.kkt_residual <= tol)) {
    std::ostringstream os;
    os << "active-set QP stopped after " << out.iterations << " iterations with KKT residual "
       << out.kkt_residual;
    throw SolverFailure(os.str());
  }
  return out;
}

}  // namespace roadsense
