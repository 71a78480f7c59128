#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace roadsense {

struct SensorModel {
  double sigma_nom_sq = 1.0;
  double cost_per_sensor = 1.0;
};

struct PlacementWeights {
  double gamma = 2.0;
  double discrepancy_kappa = 20.0;
  double discard_threshold = 100.0;
};

/// Candidate cells and all-or-none groups. An empty `available` list means
/// every cell is a candidate.
struct GeoConstraints {
  std::vector<std::size_t> available;
  std::vector<std::vector<std::size_t>> groups;
};

inline constexpr double kInfiniteCost = std::numeric_limits<double>::infinity();

/// Gram matrices at or above this condition number count as singular.
inline constexpr double kMaxInformationCondition = 1e12;

struct BlueCovariance {
  Eigen::MatrixXd covariance;  // V G⁻¹ Vᵀ
  double trace = 0.0;          // equals tr(G⁻¹) since VᵀV = I
};

/// Error covariance of the best linear unbiased estimate of the cumulative
/// flows from sensors on `selection`, each with variance σ²_nom.
/// Throws SingularInformation.
BlueCovariance blue_covariance(const Eigen::MatrixXd& V, const std::vector<std::size_t>& selection,
                               const SensorModel& model);

/// Same with a variance per cell (H = I, Σ = diag(variances)); infinite
/// entries mean "no sensor".
BlueCovariance blue_covariance(const Eigen::MatrixXd& V, const Eigen::VectorXd& variances);

/// trace V_p + c·|selection|, or kInfiniteCost when the information matrix is
/// singular.
double total_cost(const std::vector<std::size_t>& selection, const Eigen::MatrixXd& V,
                  const SensorModel& model);

/// n × (n−1) orthonormal complement of the all-ones direction (Householder
/// reflection of 1 onto e1, columns 2..n, sign-fixed).
Eigen::MatrixXd build_discrepancy_basis(int n);

/// −v_iᵀ M⁻² v_i with M = VᵀΩV. Throws SingularInformation.
Eigen::VectorXd trace_objective_gradient(const Eigen::MatrixXd& V, const Eigen::VectorXd& omega);

/// F(ω) = tr((VᵀΩV)⁻¹) + γ Σ ω + κ exp(−cᵀω), c = W·1.
class RelaxationObjective {
 public:
  RelaxationObjective(Eigen::MatrixXd V, double gamma, double kappa);

  /// +∞ when VᵀΩV is not positive definite or too ill-conditioned.
  double value(const Eigen::VectorXd& omega) const;
  /// Full gradient; throws SingularInformation where value() is infinite.
  Eigen::VectorXd gradient(const Eigen::VectorXd& omega) const;

  const Eigen::VectorXd& discrepancy_direction() const { return c_; }
  const Eigen::MatrixXd& basis() const { return V_; }

 private:
  Eigen::MatrixXd V_;
  double gamma_;
  double kappa_;
  Eigen::VectorXd c_;
};

struct PlacementSolution {
  Eigen::VectorXd omega;  // per cell, 1/σ²_e; zero outside the candidates
  std::vector<std::size_t> selected;
  double vp_trace = kInfiniteCost;
  double total_cost = kInfiniteCost;
  bool feasible = false;
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  /// smallest discarded virtual variance / largest kept one (∞ if nothing
  /// was discarded, 0 if nothing was kept)
  double bimodality = 0.0;
};

struct SolverOptions {
  double tol = 1e-7;
  int max_iter = 200000;
  int memory = 10;
};

/// Convex relaxation of the placement problem, solved by spectral projected
/// gradient on the box [0, 1/σ²_nom] with nonmonotone backtracking. Group
/// members share one variable. Throws InfeasibleCandidateSet when the
/// candidates cannot make the information matrix nonsingular, SolverFailure
/// when the iteration stalls.
PlacementSolution virtual_variance_solve(const Eigen::MatrixXd& V, const SensorModel& model,
                                         const PlacementWeights& weights,
                                         const std::optional<GeoConstraints>& constraints = {},
                                         const SolverOptions& options = {});

struct BudgetStep {
  int t = 0;
  double gamma = 0.0;
  int sensors = 0;
  double vp_trace = kInfiniteCost;
};

struct BudgetResult {
  PlacementSolution solution;
  std::vector<BudgetStep> log;
  bool budget_not_met = false;
  bool infeasible = false;  // n_max below the number of onramps
};

/// γ(t+1) = growth·γ(t) from γ(0) = gamma0 until the selection has at most
/// n_max sensors or t = t_max.
BudgetResult budget_constrained_solve(const Eigen::MatrixXd& V, const SensorModel& model,
                                      double gamma0, double kappa, double discard_threshold,
                                      int n_max, int t_max, double growth,
                                      const std::optional<GeoConstraints>& constraints = {},
                                      const SolverOptions& options = {});

struct ExhaustiveResult {
  std::vector<std::size_t> selected;  // empty when no subset is feasible
  double vp_trace = kInfiniteCost;
  double total_cost = kInfiniteCost;
  std::uint64_t evaluated = 0;
};

/// Best size-h selection by enumeration (groups taken all-or-none), lowest
/// trace first, lexicographically smallest subset on ties. Throws
/// BudgetExceeded when the subset count exceeds `max_subsets`.
ExhaustiveResult exhaustive_search(const Eigen::MatrixXd& V, const SensorModel& model, int h,
                                   const std::optional<GeoConstraints>& constraints = {},
                                   std::uint64_t max_subsets = 400'000'000ULL,
                                   unsigned threads = 0);

}  // namespace roadsense
