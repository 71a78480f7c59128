#pragma once

// Shared fixtures and independent oracles for the unit and acceptance tests.
// Oracles deliberately avoid the code paths they check: reachability is a
// plain BFS over the splitting matrix, kernels come from FullPivLU, BLUE
// covariances from the constrained least-squares KKT system, exhaustive
// placement from std::next_permutation enumeration.

#include "roadsense/fundamental_diagram.hpp"
#include "roadsense/network.hpp"
#include "roadsense/placement.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <random>
#include <vector>

namespace roadsense::testing {

/// Random network satisfying the connectivity assumption: cells [0, r) are
/// onramps, every other cell has an upstream neighbour of smaller index, every
/// cell but the last has a downstream neighbour of larger index, and the last
/// cell is an offramp that discharges everything. Extra random edges (possibly
/// backward, creating loops) and extra leaking offramps are sprinkled in.
inline NetworkDescription random_network(std::mt19937_64& rng, int n, int r) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  NetworkDescription d;
  for (int i = 0; i < n; ++i) {
    Cell c;
    c.id = i;
    c.length_km = 0.2 + 0.6 * unit(rng);
    c.speed_limit_km_per_step = 0.1 + 0.1 * unit(rng);
    c.segment_id = i / 3;
    c.kind = i < r ? CellKind::Onramp : CellKind::Internal;
    d.cells.push_back(c);
  }
  d.cells[static_cast<std::size_t>(n - 1)].kind = CellKind::Offramp;

  std::vector<std::vector<bool>> edge(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(n), false));
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int i = r; i < n; ++i) edge[static_cast<std::size_t>(pick(0, i - 1))][static_cast<std::size_t>(i)] = true;
  for (int i = 0; i < n - 1; ++i) edge[static_cast<std::size_t>(i)][static_cast<std::size_t>(pick(std::max(i + 1, r), n - 1))] = true;
  const int extra = pick(0, n);
  for (int k = 0; k < extra; ++k) {
    const int a = pick(0, n - 2);
    const int b = pick(r, n - 1);
    if (a != b) edge[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = true;
  }
  for (int i = r; i < n - 1; ++i) {
    if (unit(rng) < 0.15) d.cells[static_cast<std::size_t>(i)].kind = CellKind::Offramp;
  }

  for (int i = 0; i < n; ++i) {
    std::vector<int> outs;
    for (int j = 0; j < n; ++j) {
      if (edge[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) outs.push_back(j);
    }
    if (outs.empty()) continue;
    const bool leaks = d.cells[static_cast<std::size_t>(i)].kind == CellKind::Offramp;
    const double keep = leaks ? 0.2 + 0.6 * unit(rng) : 1.0;
    std::vector<double> w;
    double total = 0.0;
    for (std::size_t k = 0; k < outs.size(); ++k) {
      w.push_back(0.1 + unit(rng));
      total += w.back();
    }
    for (std::size_t k = 0; k < outs.size(); ++k) d.splits.push_back({i, outs[k], keep * w[k] / total});
  }
  return d;
}

inline NetworkDescription random_network(std::mt19937_64& rng, int n_lo, int n_hi, int r_lo, int r_hi) {
  const int r = std::uniform_int_distribution<int>(r_lo, r_hi)(rng);
  const int n = std::uniform_int_distribution<int>(std::max(n_lo, r + 1), std::max(n_hi, r + 1))(rng);
  return random_network(rng, n, r);
}

/// Cells reachable forward from an onramp and backward from a leaking offramp.
inline std::vector<bool> bfs_on_some_path(const Eigen::MatrixXd& R, const std::vector<bool>& onramp,
                                          const std::vector<bool>& offramp) {
  const auto n = static_cast<std::size_t>(R.rows());
  auto sweep = [&](std::vector<bool> seen, bool forward) {
    std::deque<std::size_t> q;
    for (std::size_t i = 0; i < n; ++i) {
      if (seen[i]) q.push_back(i);
    }
    while (!q.empty()) {
      const auto u = q.front();
      q.pop_front();
      for (std::size_t v = 0; v < n; ++v) {
        const double w = forward ? R(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v))
                                 : R(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u));
        if (w > 0.0 && !seen[v]) {
          seen[v] = true;
          q.push_back(v);
        }
      }
    }
    return seen;
  };
  std::vector<bool> sinks(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    sinks[i] = offramp[i] && R.row(static_cast<Eigen::Index>(i)).sum() < 1.0 - 1e-9;
  }
  const auto fwd = sweep(onramp, true);
  const auto bwd = sweep(sinks, false);
  std::vector<bool> ok(n);
  for (std::size_t i = 0; i < n; ++i) ok[i] = fwd[i] && bwd[i];
  return ok;
}

/// Orthonormal kernel basis from a full-pivot LU (independent of the SVD path).
inline Eigen::MatrixXd lu_kernel(const Eigen::MatrixXd& A) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  lu.setThreshold(1e-10);
  const Eigen::MatrixXd K = lu.kernel();
  return Eigen::HouseholderQR<Eigen::MatrixXd>(K).householderQ() *
         Eigen::MatrixXd::Identity(K.rows(), K.cols());
}

/// Largest sine of the principal angles between two orthonormal bases.
inline double subspace_gap(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols()) return std::numeric_limits<double>::infinity();
  return (A * A.transpose() - B * B.transpose()).norm();
}

/// Covariance of the minimum-variance estimate of f from y = f_S + noise,
/// subject to L̄ f = 0, computed from the KKT system of
///   min ‖P f − y‖²  s.t.  L̄ f = 0
/// (P selects the measured cells). f̂ = A y with A read off the KKT inverse;
/// Cov = σ² A Aᵀ.
inline Eigen::MatrixXd blue_oracle(const Eigen::MatrixXd& Lbar, const std::vector<std::size_t>& selection,
                                   double sigma_sq) {
  const auto n = Lbar.cols();
  const auto m = Lbar.rows();
  const auto s = static_cast<Eigen::Index>(selection.size());
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(s, n);
  for (Eigen::Index i = 0; i < s; ++i) P(i, static_cast<Eigen::Index>(selection[static_cast<std::size_t>(i)])) = 1.0;
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = P.transpose() * P;
  K.topRightCorner(n, m) = Lbar.transpose();
  K.bottomLeftCorner(m, n) = Lbar;
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + m, s);
  rhs.topRows(n) = P.transpose();
  const Eigen::MatrixXd sol = K.completeOrthogonalDecomposition().pseudoInverse() * rhs;
  const Eigen::MatrixXd A = sol.topRows(n);
  return sigma_sq * A * A.transpose();
}

/// Best size-h subset by plain lexicographic enumeration of cell indices.
struct EnumerationBest {
  std::vector<std::size_t> selected;
  double trace = std::numeric_limits<double>::infinity();
};

inline EnumerationBest enumerate_best(const Eigen::MatrixXd& V, int h, double sigma_sq) {
  const int n = static_cast<int>(V.rows());
  std::vector<bool> mask(static_cast<std::size_t>(n), false);
  std::fill(mask.begin(), mask.begin() + h, true);
  EnumerationBest best;
  do {
    std::vector<std::size_t> sel;
    for (int i = 0; i < n; ++i) {
      if (mask[static_cast<std::size_t>(i)]) sel.push_back(static_cast<std::size_t>(i));
    }
    Eigen::MatrixXd H(static_cast<Eigen::Index>(sel.size()), V.cols());
    for (std::size_t k = 0; k < sel.size(); ++k) H.row(static_cast<Eigen::Index>(k)) = V.row(static_cast<Eigen::Index>(sel[k]));
    const Eigen::MatrixXd G = H.transpose() * H / sigma_sq;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(G);
    const auto sv = svd.singularValues();
    if (sv(sv.size() - 1) <= 0.0 || sv(0) / sv(sv.size() - 1) >= 1e12) continue;
    const double tr = G.inverse().trace();
    if (tr < best.trace * (1.0 - 1e-12)) {
      best.trace = tr;
      best.selected = sel;
    }
  } while (std::prev_permutation(mask.begin(), mask.end()));
  return best;
}

/// Triangular-diagram samples with Gaussian flow noise, densities uniform on [0, ρj].
inline std::vector<FlowDensitySample> triangular_samples(std::mt19937_64& rng, int k, double rho_crit,
                                                         double capacity, double rho_jam, double sigma) {
  std::uniform_real_distribution<double> dens(0.0, rho_jam);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<FlowDensitySample> out;
  for (int i = 0; i < k; ++i) {
    const double rho = dens(rng);
    const double phi = rho <= rho_crit ? capacity * rho / rho_crit
                                       : capacity * (rho_jam - rho) / (rho_jam - rho_crit);
    out.push_back({rho, phi + (sigma > 0.0 ? noise(rng) : 0.0)});
  }
  return out;
}

/// Central difference of a scalar function of a vector.
template <class F>
Eigen::VectorXd central_difference(F&& f, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

}  // namespace roadsense::testing
