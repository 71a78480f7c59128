#include "roadsense/network.hpp"

#include "roadsense/errors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>

namespace roadsense {

namespace {

constexpr double kRowSumTolerance = 1e-9;

}  // namespace

std::string to_string(CellKind kind) {
  switch (kind) {
    case CellKind::Onramp:
      return "onramp";
    case CellKind::Offramp:
      return "offramp";
    case CellKind::Internal:
      return "internal";
  }
  return "internal";
}

CellKind cell_kind_from_string(const std::string& text) {
  if (text == "onramp") return CellKind::Onramp;
  if (text == "offramp") return CellKind::Offramp;
  if (text == "internal") return CellKind::Internal;
  throw MalformedSpec("unknown cell kind '" + text + "'");
}

TrafficNetwork::TrafficNetwork(std::vector<Cell> cells, Eigen::MatrixXd splitting,
                               double sample_period_s, int fcd_period_steps)
    : cells_(std::move(cells)),
      splitting_(std::move(splitting)),
      sample_period_s_(sample_period_s),
      fcd_period_steps_(fcd_period_steps) {
  const auto n = cells_.size();
  if (n == 0) throw MalformedSpec("network has no cells");
  if (splitting_.rows() != static_cast<Eigen::Index>(n) ||
      splitting_.cols() != static_cast<Eigen::Index>(n)) {
    throw MalformedSpec("splitting matrix must be |E| x |E|");
  }
  if (!(sample_period_s_ > 0.0)) throw MalformedSpec("sample_period_s must be positive");
  if (fcd_period_steps_ < 1) throw MalformedSpec("fcd_period_steps must be >= 1");

  for (std::size_t i = 0; i < n; ++i) {
    const Cell& c = cells_[i];
    if (!(c.length_km > 0.0) || !std::isfinite(c.length_km)) {
      throw MalformedSpec("cell " + std::to_string(c.id) + ": length_km must be positive");
    }
    if (!(c.speed_limit_km_per_step > 0.0) || !std::isfinite(c.speed_limit_km_per_step)) {
      throw MalformedSpec("cell " + std::to_string(c.id) +
                          ": speed_limit_km_per_step must be positive");
    }
    if (!index_by_id_.emplace(c.id, i).second) {
      throw MalformedSpec("duplicate cell id " + std::to_string(c.id));
    }
    if (c.kind == CellKind::Onramp) onramps_.push_back(i);
    if (c.kind == CellKind::Offramp) offramps_.push_back(i);
    segments_[c.segment_id].push_back(i);
  }

  downstream_.resize(n);
  upstream_.resize(n);
  for (std::size_t e = 0; e < n; ++e) {
    double row_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double r = splitting_(e, k);
      if (!std::isfinite(r) || r < 0.0) {
        throw MalformedSpec("negative or non-finite splitting ratio from cell " +
                            std::to_string(cells_[e].id));
      }
      if (r == 0.0) continue;
      if (e == k) throw MalformedSpec("self loop on cell " + std::to_string(cells_[e].id));
      if (cells_[k].kind == CellKind::Onramp) {
        throw MalformedSpec("split into onramp cell " + std::to_string(cells_[k].id));
      }
      row_sum += r;
      downstream_[e].push_back(k);
      upstream_[k].push_back(e);
    }
    if (cells_[e].kind == CellKind::Offramp) {
      if (row_sum > 1.0 + kRowSumTolerance) {
        std::ostringstream os;
        os << "offramp cell " << cells_[e].id << " splits sum to " << row_sum << " > 1";
        throw RowSumViolation(os.str());
      }
    } else if (std::abs(row_sum - 1.0) > kRowSumTolerance) {
      std::ostringstream os;
      os << "cell " << cells_[e].id << " splits sum to " << row_sum << ", expected 1";
      throw RowSumViolation(os.str());
    }
  }
}

std::size_t TrafficNetwork::index_of(int id) const {
  auto it = index_by_id_.find(id);
  if (it == index_by_id_.end()) throw MalformedSpec("unknown cell id " + std::to_string(id));
  return it->second;
}

double TrafficNetwork::exit_fraction(std::size_t i) const {
  return std::max(0.0, 1.0 - splitting_.row(static_cast<Eigen::Index>(i)).sum());
}

Eigen::VectorXd TrafficNetwork::lengths() const {
  Eigen::VectorXd l(static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) l[static_cast<Eigen::Index>(i)] = cells_[i].length_km;
  return l;
}

ConnectivityReport check_connectivity(const TrafficNetwork& net) {
  const auto n = net.size();
  std::vector<char> from_onramp(n, 0), to_exit(n, 0);

  std::deque<std::size_t> queue;
  for (auto o : net.onramps()) {
    from_onramp[o] = 1;
    queue.push_back(o);
  }
  while (!queue.empty()) {
    auto e = queue.front();
    queue.pop_front();
    for (auto k : net.downstream(e)) {
      if (!from_onramp[k]) {
        from_onramp[k] = 1;
        queue.push_back(k);
      }
    }
  }

  for (auto o : net.offramps()) {
    if (net.exit_fraction(o) > kRowSumTolerance) {
      to_exit[o] = 1;
      queue.push_back(o);
    }
  }
  while (!queue.empty()) {
    auto e = queue.front();
    queue.pop_front();
    for (auto k : net.upstream(e)) {
      if (!to_exit[k]) {
        to_exit[k] = 1;
        queue.push_back(k);
      }
    }
  }

  ConnectivityReport report;
  for (std::size_t e = 0; e < n; ++e) {
    if (!from_onramp[e] || !to_exit[e]) report.violating_cells.push_back(e);
  }
  report.connected = report.violating_cells.empty();
  return report;
}

TrafficNetwork build_network(const NetworkDescription& description) {
  const auto n = description.cells.size();
  std::map<int, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) index.emplace(description.cells[i].id, i);

  Eigen::MatrixXd splitting = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                                    static_cast<Eigen::Index>(n));
  for (const auto& s : description.splits) {
    auto from = index.find(s.from_id);
    auto to = index.find(s.to_id);
    if (from == index.end() || to == index.end()) {
      throw MalformedSpec("split " + std::to_string(s.from_id) + " -> " +
                          std::to_string(s.to_id) + " references an unknown cell");
    }
    if (!std::isfinite(s.ratio) || s.ratio < 0.0) {
      throw MalformedSpec("split " + std::to_string(s.from_id) + " -> " +
                          std::to_string(s.to_id) + " has a negative ratio");
    }
    splitting(static_cast<Eigen::Index>(from->second), static_cast<Eigen::Index>(to->second)) +=
        s.ratio;
  }

  TrafficNetwork net(description.cells, std::move(splitting), description.sample_period_s,
                     description.fcd_period_steps);
  auto report = check_connectivity(net);
  if (!report.connected) {
    std::ostringstream os;
    os << "cells not on any onramp -> offramp path:";
    for (auto e : report.violating_cells) os << ' ' << net.cell(e).id;
    throw ConnectivityViolation(os.str());
  }
  return net;
}

ReducedLaplacian reduced_laplacian(const TrafficNetwork& net) {
  const auto n = static_cast<Eigen::Index>(net.size());
  const Eigen::MatrixXd full =
      net.splitting().transpose() - Eigen::MatrixXd::Identity(n, n);

  ReducedLaplacian lap;
  for (std::size_t e = 0; e < net.size(); ++e) {
    (net.is_onramp(e) ? lap.onramp_cells : lap.row_cells).push_back(e);
  }
  lap.matrix.resize(static_cast<Eigen::Index>(lap.row_cells.size()), n);
  for (std::size_t i = 0; i < lap.row_cells.size(); ++i) {
    lap.matrix.row(static_cast<Eigen::Index>(i)) =
        full.row(static_cast<Eigen::Index>(lap.row_cells[i]));
  }
  return lap;
}

void fix_column_signs(Eigen::MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double peak = m.col(j).cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (std::abs(m(i, j)) >= peak - 1e-12 * std::max(1.0, peak)) {
        if (m(i, j) < 0.0) m.col(j) = -m.col(j);
        break;
      }
    }
  }
}

KernelBasis kernel_basis(const ReducedLaplacian& lap) {
  const Eigen::Index n = lap.matrix.cols();
  const auto r = static_cast<Eigen::Index>(lap.onramp_cells.size());
  if (r == 0) throw RankDeficiency("network has no onramps; the kernel of L̄ is trivial");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(lap.matrix, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > kKernelRankTolerance) ++rank;
  }
  const Eigen::Index kernel_dim = n - rank;
  if (kernel_dim != r) {
    throw RankDeficiency("numerical kernel dimension " + std::to_string(kernel_dim) +
                         " differs from onramp count " + std::to_string(r));
  }

  const Eigen::MatrixXd z = svd.matrixV().rightCols(kernel_dim);

  // Express the kernel through unit onramp outflows: N = Z * Z_on^{-1}.
  Eigen::MatrixXd z_on(r, r);
  for (Eigen::Index i = 0; i < r; ++i) {
    z_on.row(i) = z.row(static_cast<Eigen::Index>(lap.onramp_cells[static_cast<std::size_t>(i)]));
  }
  Eigen::MatrixXd canonical = z;
  Eigen::JacobiSVD<Eigen::MatrixXd> on_svd(z_on);
  const auto& on_sv = on_svd.singularValues();
  if (on_sv[r - 1] > 1e-10 * std::max(1.0, on_sv[0])) {
    canonical = z * z_on.partialPivLu().inverse();
  }

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(canonical);
  KernelBasis basis;
  basis.V = qr.householderQ() * Eigen::MatrixXd::Identity(n, r);
  fix_column_signs(basis.V);
  return basis;
}

}  // namespace roadsense
