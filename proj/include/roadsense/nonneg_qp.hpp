#pragma once

#include <Eigen/Dense>

namespace roadsense {

struct NonnegQpResult {
  Eigen::VectorXd x;
  double kkt_residual = 0.0;  // scaled by max(1, ‖b‖∞)
  int iterations = 0;
};

/// min ½ xᵀQx − bᵀx  s.t. x ≥ 0, Q symmetric positive definite.
/// Lawson–Hanson style active set: variables enter the passive set by largest
/// negative gradient, the passive subproblem is solved by Cholesky, and
/// infeasible steps are cut back to the boundary. Throws SolverFailure when
/// max_iter is hit or the final KKT residual exceeds tol.
NonnegQpResult solve_nonneg_qp(const Eigen::MatrixXd& Q, const Eigen::VectorXd& b, double tol,
                               int max_iter = 0);

/// Projected-gradient KKT residual of x for the problem above (unscaled).
double nonneg_qp_kkt_residual(const Eigen::MatrixXd& Q, const Eigen::VectorXd& b,
                              const Eigen::VectorXd& x);

}  // namespace roadsense
