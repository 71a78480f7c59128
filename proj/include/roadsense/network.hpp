#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace roadsense {

enum class CellKind { Onramp, Offramp, Internal };

std::string to_string(CellKind kind);
CellKind cell_kind_from_string(const std::string& text);

struct Cell {
  int id = 0;                                // external label used in files
  double length_km = 0.0;
  CellKind kind = CellKind::Internal;
  int segment_id = 0;                        // FCD segment containing the cell
  double speed_limit_km_per_step = 0.0;      // km per sample period T
};

struct Split {
  int from_id = 0;
  int to_id = 0;
  double ratio = 0.0;
};

/// In-memory form of a network description document.
struct NetworkDescription {
  std::vector<Cell> cells;
  std::vector<Split> splits;
  double sample_period_s = 15.0;
  int fcd_period_steps = 4;
  /// Optional all-or-none sensor groups (e.g. parallel lanes of one section),
  /// given as cell ids. Consumed by placement, not by the network itself.
  std::vector<std::vector<int>> lane_groups;
};

/// Static cell graph with its splitting-ratio matrix R (row = from, column = to).
///
/// The constructor enforces the structural invariants: positive lengths and
/// speed limits, unique ids, non-negative ratios, no self loops, no flow into
/// onramps, unit row sums on non-offramp cells and row sums <= 1 on offramps.
/// Connectivity is checked separately (check_connectivity / build_network).
class TrafficNetwork {
 public:
  TrafficNetwork(std::vector<Cell> cells, Eigen::MatrixXd splitting,
                 double sample_period_s, int fcd_period_steps);

  std::size_t size() const { return cells_.size(); }
  const std::vector<Cell>& cells() const { return cells_; }
  const Cell& cell(std::size_t index) const { return cells_.at(index); }
  const Eigen::MatrixXd& splitting() const { return splitting_; }
  double sample_period_s() const { return sample_period_s_; }
  int fcd_period_steps() const { return fcd_period_steps_; }

  /// Position of the cell with external label `id`; throws MalformedSpec.
  std::size_t index_of(int id) const;
  bool has_id(int id) const { return index_by_id_.count(id) != 0; }

  bool is_onramp(std::size_t i) const { return cells_[i].kind == CellKind::Onramp; }
  bool is_offramp(std::size_t i) const { return cells_[i].kind == CellKind::Offramp; }
  const std::vector<std::size_t>& onramps() const { return onramps_; }
  const std::vector<std::size_t>& offramps() const { return offramps_; }
  const std::vector<std::size_t>& downstream(std::size_t i) const { return downstream_[i]; }
  const std::vector<std::size_t>& upstream(std::size_t i) const { return upstream_[i]; }

  /// Fraction of the outflow of cell i that leaves the network.
  double exit_fraction(std::size_t i) const;

  /// Segment id -> member cells, in cell order.
  const std::map<int, std::vector<std::size_t>>& segments() const { return segments_; }

  Eigen::VectorXd lengths() const;

 private:
  std::vector<Cell> cells_;
  Eigen::MatrixXd splitting_;
  double sample_period_s_;
  int fcd_period_steps_;
  std::map<int, std::size_t> index_by_id_;
  std::vector<std::size_t> onramps_;
  std::vector<std::size_t> offramps_;
  std::vector<std::vector<std::size_t>> downstream_;
  std::vector<std::vector<std::size_t>> upstream_;
  std::map<int, std::vector<std::size_t>> segments_;
};

struct ConnectivityReport {
  bool connected = false;
  /// Cells that do not lie on any onramp -> discharging-offramp path.
  std::vector<std::size_t> violating_cells;
};

/// Every cell must be reachable from an onramp and must reach an offramp
/// that actually discharges vehicles (row sum of R strictly below 1).
ConnectivityReport check_connectivity(const TrafficNetwork& net);

/// Builds and fully validates a network (structure + connectivity).
TrafficNetwork build_network(const NetworkDescription& description);

/// L̄ = (Rᵀ − I) with onramp rows removed.
struct ReducedLaplacian {
  Eigen::MatrixXd matrix;
  std::vector<std::size_t> row_cells;     // non-onramp cells, in cell order
  std::vector<std::size_t> onramp_cells;  // onramp cells, in cell order
};

ReducedLaplacian reduced_laplacian(const TrafficNetwork& net);

/// Orthonormal basis V of ker L̄ (|E| x r, r = number of onramps).
struct KernelBasis {
  Eigen::MatrixXd V;

  Eigen::Index cells() const { return V.rows(); }
  Eigen::Index rank() const { return V.cols(); }
};

/// Singular-value tolerance used to decide the numerical kernel dimension.
inline constexpr double kKernelRankTolerance = 1e-8;

/// Throws RankDeficiency when the numerical kernel dimension differs from the
/// onramp count (or there are no onramps at all).
KernelBasis kernel_basis(const ReducedLaplacian& lap);

/// Flips each column so that its largest-magnitude entry is positive
/// (first such entry on ties).
void fix_column_signs(Eigen::MatrixXd& m);

}  // namespace roadsense
