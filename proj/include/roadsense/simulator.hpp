#pragma once

#include "roadsense/fundamental_diagram.hpp"
#include "roadsense/network.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <random>
#include <vector>

namespace roadsense {

using Diagrams = std::vector<FundamentalDiagram>;

struct SimState {
  int t = 0;
  Eigen::VectorXd density;  // veh/km
};

struct StepResult {
  SimState next;
  Eigen::VectorXd outflow;   // veh per period, per cell
  Eigen::VectorXd inflow;    // Rᵀ·outflow + admitted exogenous inflow
  Eigen::VectorXd admitted;  // exogenous inflow actually accepted by onramps
};

/// Free-flow and wave speeds must not exceed the cell length per period,
/// otherwise the explicit update can leave [0, ρj]. Throws OutOfRange.
void check_cfl(const TrafficNetwork& net, const Diagrams& fds);

/// One demand–supply transition. `exogenous` is indexed by cell and must be
/// zero outside onramps; onramps admit at most their own supply.
StepResult ctm_step(const SimState& state, const Eigen::VectorXd& exogenous,
                    const TrafficNetwork& net, const Diagrams& fds);

/// Piecewise-constant exogenous rate: value of the last breakpoint with
/// start_step <= t, zero before the first one.
struct DemandProfile {
  std::size_t cell = 0;
  std::vector<std::pair<int, double>> breakpoints;  // (start_step, veh per period)

  double rate(int t) const;
};

struct Trajectory {
  Eigen::MatrixXd density;   // (horizon + 1) x |E|
  Eigen::MatrixXd outflow;   // horizon x |E|
  Eigen::MatrixXd inflow;    // horizon x |E|
  Eigen::MatrixXd admitted;  // horizon x |E|

  int horizon() const { return static_cast<int>(outflow.rows()); }
};

Trajectory simulate(const TrafficNetwork& net, const Diagrams& fds,
                    const std::vector<DemandProfile>& demand,
                    const Eigen::VectorXd& initial_density, int horizon);

struct MassBalance {
  double storage_change = 0.0;  // Σ ℓ (ρ(end) − ρ(0)), vehicles
  double net_inflow = 0.0;      // Σ_t (admitted − exiting outflow)
  double relative_error = 0.0;
};

MassBalance mass_balance(const TrafficNetwork& net, const Trajectory& traj);

struct SensorNoiseModel {
  double sigma_flow = 0.0;     // veh per period
  double sigma_density = 0.0;  // veh/km
  double sigma_fcd = 0.0;      // km per period
  std::uint64_t seed = 0;
};

struct MeasurementBatch {
  int t = 0;
  std::map<std::size_t, double> flow_meas;     // outflow readings on the layout
  std::map<std::size_t, double> density_meas;
  std::map<std::size_t, double> inflow_meas;   // entrance readings on onramps
  std::map<int, double> fcd_speed;             // segment -> km per period
  bool fcd_refreshed = false;
};

/// Cells below this density report their free-flow speed.
inline constexpr double kSpeedDensityFloor = 0.5;

/// Stateful measurement generator: draws noise from its own stream and keeps
/// the per-step segment speeds of the current FCD window.
class MeasurementSynthesizer {
 public:
  MeasurementSynthesizer(const TrafficNetwork& net, const Diagrams& fds,
                         std::vector<std::size_t> layout, std::vector<std::size_t> inflow_layout,
                         SensorNoiseModel noise);

  /// Batch for step t from the density at the start of the step and the
  /// resulting flows. Must be called with t = 0, 1, 2, ... in order.
  MeasurementBatch measure(int t, const Eigen::VectorXd& density, const Eigen::VectorXd& outflow,
                           const Eigen::VectorXd& admitted);

 private:
  const TrafficNetwork* net_;
  const Diagrams* fds_;
  std::vector<std::size_t> layout_;
  std::vector<std::size_t> inflow_layout_;
  SensorNoiseModel noise_;
  std::mt19937_64 rng_;
  std::map<int, std::vector<double>> window_;  // segment -> per-step mean speeds
  std::map<int, double> held_;
  int next_t_ = 0;
};

std::vector<MeasurementBatch> measure_all(const TrafficNetwork& net, const Diagrams& fds,
                                          const Trajectory& traj,
                                          const std::vector<std::size_t>& layout,
                                          const std::vector<std::size_t>& inflow_layout,
                                          const SensorNoiseModel& noise);

/// Per-cell speed v = f/ρ with the free-flow fallback at near-zero density.
double cell_speed(double outflow, double density, const FundamentalDiagram& fd);

/// o / (100 · ℓ_ave); throws OutOfRange outside [0, 100] or for ℓ_ave <= 0.
double occupancy_to_density(double occupancy_percent, double avg_vehicle_length_km);

/// Column sums of the outflow history over rows [t0, t1).
Eigen::VectorXd cumulative_outflows(const Eigen::MatrixXd& outflow, int t0, int t1);

}  // namespace roadsense
