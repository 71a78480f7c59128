#pragma once

#include "roadsense/network.hpp"

#include <map>
#include <utility>
#include <vector>

namespace roadsense {

/// Linear freeflow branch up to rho_crit, quadratic congested branch
/// a·ρ² + b·ρ + c through (rho_crit, capacity) and (rho_jam, 0).
/// Flows are in vehicles per sample period, densities in veh/km.
struct FundamentalDiagram {
  double rho_crit = 20.0;
  double capacity = 7.5;
  double rho_jam = 250.0;
  double quad_a = 0.0;
  double quad_b = 0.0;
  double quad_c = 0.0;
  double v_ff = 0.0;        // km per period
  double wave_speed = 0.0;  // signed, −C/(ρj − ρc)

  double eval(double rho) const;
  double demand(double rho) const;
  double supply(double rho) const;
};

/// Builds a diagram with congested curvature `a` (clamped to the admissible
/// range, see max_curvature). Throws OutOfRange on inconsistent parameters.
FundamentalDiagram make_diagram(double rho_crit, double capacity, double rho_jam,
                                double a = 0.0);

/// Largest a for which the congested branch stays non-increasing and
/// non-negative on [ρc, ρj].
double max_curvature(double rho_crit, double capacity, double rho_jam);

/// Throws OutOfRange outside [0, ρj].
double fd_eval(const FundamentalDiagram& fd, double rho);

struct DensityRoots {
  double freeflow = 0.0;
  double congested = 0.0;
};

DensityRoots fd_inverse(const FundamentalDiagram& fd, double flow);

std::pair<double, double> derive_speeds(const FundamentalDiagram& fd);

struct FlowDensitySample {
  double density = 0.0;
  double flow = 0.0;
};

struct CriticalFitOptions {
  double rho_jam = 250.0;
  double delta = 0.5;
  double eps = 1e-4;
  int max_iter = 5000;
  double rho_min = 1.0;
  double capacity_min = 0.1;
};

struct CriticalFit {
  double rho_crit = 0.0;
  double capacity = 0.0;
  int iterations = 0;
  bool converged = false;
  double cost = 0.0;
};

/// Least-squares cost of a triangular diagram, V(ρc, C) = ½ Σ (φ_k − φ(ρ_k))².
double triangular_cost(const std::vector<FlowDensitySample>& samples, double rho_crit,
                       double capacity, double rho_jam);

/// Analytic gradient of triangular_cost with respect to (ρc, C).
std::pair<double, double> triangular_cost_gradient(
    const std::vector<FlowDensitySample>& samples, double rho_crit, double capacity,
    double rho_jam);

/// Diminishing-step gradient descent on (ρc, C). Each coordinate step is
/// scaled by the inverse Gauss–Newton curvature at the starting point so that
/// δ is dimensionless; with `precondition = false` the raw iteration is run.
CriticalFit calibrate_critical(const std::vector<FlowDensitySample>& samples,
                               const CriticalFitOptions& options, double rho_crit0,
                               double capacity0, bool precondition = true);

struct CongestedFit {
  FundamentalDiagram diagram;
  bool no_congested_samples = false;
  double residual = 0.0;  // RMS over congested samples
};

/// Constrained least squares for the congested branch; one free parameter a.
CongestedFit calibrate_congested(const std::vector<FlowDensitySample>& samples,
                                 double rho_crit, double capacity, double rho_jam);

/// Fills cells without a diagram from the (up to) two nearest calibrated cells
/// by undirected graph distance, with inverse-distance weights.
std::map<std::size_t, FundamentalDiagram> extend_diagrams(
    const std::map<std::size_t, FundamentalDiagram>& calibrated, const TrafficNetwork& net);

}  // namespace roadsense
