#pragma once

#include "roadsense/fundamental_diagram.hpp"
#include "roadsense/network.hpp"
#include "roadsense/simulator.hpp"

#include <Eigen/Dense>

#include <array>
#include <map>
#include <vector>

namespace roadsense {

struct ObserverConfig {
  double gain_kappa = 0.2;
  double flow_weight_gamma = 10.0;
  double qp_ridge = 1e-9;
  double qp_tol = 1e-8;
};

void validate(const ObserverConfig& cfg);

struct ObserverState {
  Eigen::VectorXd rho_hat;
  Eigen::VectorXd f_out_hat;
  Eigen::VectorXd f_in_hat;
  Eigen::VectorXd rho_pseudo;
  std::map<int, double> held_speed;  // last FCD speed per segment
};

ObserverState initial_observer_state(const Eigen::VectorXd& rho_hat);

/// Outflow estimate: argmin ‖L̄f‖² + γ Σ_m (f_e − φ_e)² + ridge ‖f‖², f ≥ 0.
/// The balance term covers the non-onramp cells only; onramp outflows are
/// tied to the network solely through their downstream cells.
class FlowEstimator {
 public:
  FlowEstimator(const TrafficNetwork& net, ObserverConfig cfg);

  Eigen::VectorXd estimate(const std::map<std::size_t, double>& flow_meas) const;

  /// Objective value at f for the given readings.
  double objective(const Eigen::VectorXd& f, const std::map<std::size_t, double>& flow_meas) const;

  const Eigen::MatrixXd& balance() const { return lap_; }

 private:
  Eigen::MatrixXd lap_;
  Eigen::MatrixXd gram_;
  ObserverConfig cfg_;
};

Eigen::VectorXd estimate_outflows(const MeasurementBatch& meas, const TrafficNetwork& net,
                                  const ObserverConfig& cfg);

/// Picks the branch root of fd_inverse whose implied speed is closest to the
/// measured speed; ties go to the free-flow root.
double pseudo_density(double f_out, double v_meas, const FundamentalDiagram& fd);

/// ρ̂ + (f̂in − f̂out)/ℓ + κ(ρ̃ − ρ̂), clamped to [0, ρj].
Eigen::VectorXd advance_density(const Eigen::VectorXd& rho_hat, const Eigen::VectorXd& f_in,
                                const Eigen::VectorXd& f_out, const Eigen::VectorXd& rho_pseudo,
                                double kappa, const TrafficNetwork& net, const Diagrams& fds);

class Observer {
 public:
  Observer(const TrafficNetwork& net, const Diagrams& fds, ObserverConfig cfg);

  /// Consumes the batch for step t: fills f̂ and ρ̃ for step t into `state`
  /// and returns the state advanced to t + 1.
  ObserverState step(ObserverState& state, const MeasurementBatch& meas) const;

 private:
  const TrafficNetwork* net_;
  const Diagrams* fds_;
  ObserverConfig cfg_;
  FlowEstimator estimator_;
};

ObserverState observer_step(ObserverState& state, const MeasurementBatch& meas,
                            const TrafficNetwork& net, const Diagrams& fds,
                            const ObserverConfig& cfg);

inline constexpr std::array<double, 3> kErrorLevels{0.75, 0.90, 0.95};

/// Smallest δ with at least a fraction p of the values ≤ δ.
double percentile_delta(std::vector<double> values, double p);

struct DayPercentiles {
  int day = 0;
  std::array<double, 3> density{};
  std::array<double, 3> flow{};
};

struct ErrorReport {
  Eigen::MatrixXd abs_density_err;  // steps x cells
  Eigen::MatrixXd abs_flow_err;
  int transient = 0;
  std::vector<DayPercentiles> days;
};

/// Absolute errors per (t, e) and per-day δ levels over steps t >= transient.
ErrorReport error_report(const Eigen::MatrixXd& true_density, const Eigen::MatrixXd& est_density,
                         const Eigen::MatrixXd& true_flow, const Eigen::MatrixXd& est_flow,
                         int steps_per_day, int transient);

struct Reconstruction {
  Eigen::MatrixXd density;     // ρ̂(t), t = 0..H−1
  Eigen::MatrixXd outflow;     // f̂out(t)
  Eigen::MatrixXd inflow;      // f̂in(t)
  Eigen::MatrixXd pseudo;      // ρ̃(t)
  ErrorReport report;
};

Reconstruction run_reconstruction(const TrafficNetwork& net, const Diagrams& fds,
                                  const std::vector<MeasurementBatch>& batches,
                                  const Trajectory& truth, const ObserverConfig& cfg,
                                  const Eigen::VectorXd& initial_estimate, int steps_per_day,
                                  int transient);

}  // namespace roadsense
