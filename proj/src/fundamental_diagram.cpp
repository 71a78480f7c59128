#include "roadsense/fundamental_diagram.hpp"

#include "roadsense/errors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace roadsense {

double max_curvature(double rho_crit, double capacity, double rho_jam) {
  const double span = rho_jam - rho_crit;
  return capacity / (span * span);
}

FundamentalDiagram make_diagram(double rho_crit, double capacity, double rho_jam, double a) {
  if (!std::isfinite(rho_crit) || !std::isfinite(capacity) || !std::isfinite(rho_jam) ||
      !std::isfinite(a)) {
    throw OutOfRange("non-finite fundamental diagram parameter");
  }
  if (!(rho_crit > 0.0 && rho_crit < rho_jam)) {
    std::ostringstream os;
    os << "need 0 < rho_crit < rho_jam, got rho_crit=" << rho_crit << " rho_jam=" << rho_jam;
    throw OutOfRange(os.str());
  }
  if (!(capacity > 0.0)) throw OutOfRange("capacity must be positive");

  FundamentalDiagram fd;
  fd.rho_crit = rho_crit;
  fd.capacity = capacity;
  fd.rho_jam = rho_jam;
  fd.quad_a = std::clamp(a, 0.0, max_curvature(rho_crit, capacity, rho_jam));
  fd.quad_b = -capacity / (rho_jam - rho_crit) - fd.quad_a * (rho_crit + rho_jam);
  fd.quad_c = -fd.quad_a * rho_jam * rho_jam - fd.quad_b * rho_jam;
  fd.v_ff = capacity / rho_crit;
  fd.wave_speed = -capacity / (rho_jam - rho_crit);
  return fd;
}

double FundamentalDiagram::eval(double rho) const {
  rho = std::clamp(rho, 0.0, rho_jam);
  if (rho <= rho_crit) return v_ff * rho;
  // Written around the triangular line so the endpoint values are exact.
  const double tri = capacity * (rho_jam - rho) / (rho_jam - rho_crit);
  return std::max(0.0, tri + quad_a * (rho - rho_crit) * (rho - rho_jam));
}

double FundamentalDiagram::demand(double rho) const { return eval(std::min(rho, rho_crit)); }

double FundamentalDiagram::supply(double rho) const { return eval(std::max(rho, rho_crit)); }

double fd_eval(const FundamentalDiagram& fd, double rho) {
  const double slack = 1e-9 * std::max(1.0, fd.rho_jam);
  if (!std::isfinite(rho) || rho < -slack || rho > fd.rho_jam + slack) {
    std::ostringstream os;
    os << "density " << rho << " outside [0, " << fd.rho_jam << "]";
    throw OutOfRange(os.str());
  }
  return fd.eval(rho);
}

DensityRoots fd_inverse(const FundamentalDiagram& fd, double flow) {
  if (!(flow > 0.0)) return {0.0, fd.rho_jam};
  if (flow >= fd.capacity) return {fd.rho_crit, fd.rho_crit};

  DensityRoots roots;
  roots.freeflow = std::clamp(flow / fd.v_ff, 0.0, fd.rho_crit);

  const double span = fd.rho_jam - fd.rho_crit;
  double rho;
  if (fd.quad_a * span * span <= 1e-12 * fd.capacity) {
    rho = fd.rho_jam - flow * span / fd.capacity;
  } else {
    // Root of aρ² + bρ + (c − flow) on the decreasing side of the parabola,
    // via the cancellation-free form of the quadratic formula.
    const double a = fd.quad_a;
    const double b = fd.quad_b;
    const double c = fd.quad_c - flow;
    const double disc = std::max(0.0, b * b - 4.0 * a * c);
    const double q = -0.5 * (b - std::sqrt(disc));  // b < 0 on this branch
    rho = q != 0.0 ? c / q : fd.rho_jam;
  }
  roots.congested = std::clamp(rho, fd.rho_crit, fd.rho_jam);
  return roots;
}

std::pair<double, double> derive_speeds(const FundamentalDiagram& fd) {
  return {fd.capacity / fd.rho_crit, -fd.capacity / (fd.rho_jam - fd.rho_crit)};
}

namespace {

double triangular(double rho, double rho_crit, double capacity, double rho_jam) {
  if (rho <= rho_crit) return capacity / rho_crit * rho;
  return capacity * (rho_jam - rho) / (rho_jam - rho_crit);
}

}  // namespace

double triangular_cost(const std::vector<FlowDensitySample>& samples, double rho_crit,
                       double capacity, double rho_jam) {
  double v = 0.0;
  for (const auto& s : samples) {
    const double r = s.flow - triangular(s.density, rho_crit, capacity, rho_jam);
    v += r * r;
  }
  return 0.5 * v;
}

std::pair<double, double> triangular_cost_gradient(
    const std::vector<FlowDensitySample>& samples, double rho_crit, double capacity,
    double rho_jam) {
  const double span = rho_jam - rho_crit;
  double g_rho = 0.0;
  double g_cap = 0.0;
  for (const auto& s : samples) {
    const double r = s.flow - triangular(s.density, rho_crit, capacity, rho_jam);
    if (s.density <= rho_crit) {
      g_rho += r * capacity / (rho_crit * rho_crit) * s.density;
      g_cap -= r * s.density / rho_crit;
    } else {
      g_rho -= r * capacity * (rho_jam - s.density) / (span * span);
      g_cap -= r * (rho_jam - s.density) / span;
    }
  }
  return {g_rho, g_cap};
}

CriticalFit calibrate_critical(const std::vector<FlowDensitySample>& samples,
                               const CriticalFitOptions& options, double rho_crit0,
                               double capacity0, bool precondition) {
  if (samples.empty()) throw EmptyLearningSet("no flow/density samples");
  const double rho_jam = options.rho_jam;
  if (!(rho_crit0 > 0.0 && rho_crit0 < rho_jam) || !(capacity0 > 0.0)) {
    throw OutOfRange("calibration initial point outside 0 < rho_crit < rho_jam, C > 0");
  }
  for (const auto& s : samples) {
    if (!std::isfinite(s.density) || !std::isfinite(s.flow)) {
      throw NonFiniteGradient("non-finite calibration sample");
    }
  }

  const double rho_lo = options.rho_min;
  const double rho_hi = rho_jam - options.rho_min;
  double rho_crit = std::clamp(rho_crit0, rho_lo, rho_hi);
  double capacity = std::max(capacity0, options.capacity_min);

  double scale_rho = 1.0;
  double scale_cap = 1.0;
  if (precondition) {
    const double span = rho_jam - rho_crit;
    double h_rho = 0.0;
    double h_cap = 0.0;
    for (const auto& s : samples) {
      if (s.density <= rho_crit) {
        const double d_rho = capacity / (rho_crit * rho_crit) * s.density;
        const double d_cap = s.density / rho_crit;
        h_rho += d_rho * d_rho;
        h_cap += d_cap * d_cap;
      } else {
        const double d_rho = capacity * (rho_jam - s.density) / (span * span);
        const double d_cap = (rho_jam - s.density) / span;
        h_rho += d_rho * d_rho;
        h_cap += d_cap * d_cap;
      }
    }
    if (h_rho > 0.0) scale_rho = 1.0 / h_rho;
    if (h_cap > 0.0) scale_cap = 1.0 / h_cap;
  }

  CriticalFit fit;
  for (int n = 1; n <= options.max_iter; ++n) {
    const auto [g_rho, g_cap] = triangular_cost_gradient(samples, rho_crit, capacity, rho_jam);
    if (!std::isfinite(g_rho) || !std::isfinite(g_cap)) {
      throw NonFiniteGradient("gradient became non-finite at iteration " + std::to_string(n));
    }
    const double step = options.delta / n;
    const double next_rho = std::clamp(rho_crit - step * scale_rho * g_rho, rho_lo, rho_hi);
    const double next_cap = std::max(capacity - step * scale_cap * g_cap, options.capacity_min);
    const double moved = std::hypot(next_rho - rho_crit, next_cap - capacity);
    rho_crit = next_rho;
    capacity = next_cap;
    fit.iterations = n;
    if (moved < options.eps) {
      fit.converged = true;
      break;
    }
  }
  fit.rho_crit = rho_crit;
  fit.capacity = capacity;
  fit.cost = triangular_cost(samples, rho_crit, capacity, rho_jam);
  return fit;
}

CongestedFit calibrate_congested(const std::vector<FlowDensitySample>& samples,
                                 double rho_crit, double capacity, double rho_jam) {
  // φ(ρ) = T(ρ) + a·g(ρ), T the triangular line, g = (ρ − ρc)(ρ − ρj): both
  // equality constraints hold for every a, leaving a scalar least squares.
  double num = 0.0;
  double den = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    if (!(s.density > rho_crit)) continue;
    const double g = (s.density - rho_crit) * (s.density - rho_jam);
    const double tri = capacity * (rho_jam - s.density) / (rho_jam - rho_crit);
    num += g * (s.flow - tri);
    den += g * g;
    ++count;
  }

  CongestedFit fit;
  const double a = den > 0.0 ? num / den : 0.0;
  fit.no_congested_samples = count == 0;
  fit.diagram = make_diagram(rho_crit, capacity, rho_jam, a);
  if (count > 0) {
    double ss = 0.0;
    for (const auto& s : samples) {
      if (!(s.density > rho_crit)) continue;
      const double r = s.flow - fit.diagram.eval(s.density);
      ss += r * r;
    }
    fit.residual = std::sqrt(ss / static_cast<double>(count));
  }
  return fit;
}

std::map<std::size_t, FundamentalDiagram> extend_diagrams(
    const std::map<std::size_t, FundamentalDiagram>& calibrated, const TrafficNetwork& net) {
  const std::size_t n = net.size();
  std::map<std::size_t, FundamentalDiagram> out;
  for (std::size_t e = 0; e < n; ++e) {
    auto it = calibrated.find(e);
    if (it != calibrated.end()) {
      out.emplace(e, it->second);
      continue;
    }

    // Undirected breadth-first search; neighbours visited in cell order so
    // that equal-distance ties resolve by cell index.
    std::vector<int> dist(n, -1);
    std::deque<std::size_t> queue{e};
    dist[e] = 0;
    std::vector<std::pair<int, std::size_t>> found;
    while (!queue.empty()) {
      auto u = queue.front();
      queue.pop_front();
      if (u != e && calibrated.count(u)) found.emplace_back(dist[u], u);
      std::vector<std::size_t> nbrs = net.downstream(u);
      nbrs.insert(nbrs.end(), net.upstream(u).begin(), net.upstream(u).end());
      std::sort(nbrs.begin(), nbrs.end());
      for (auto v : nbrs) {
        if (dist[v] < 0) {
          dist[v] = dist[u] + 1;
          queue.push_back(v);
        }
      }
    }
    if (found.empty()) {
      throw NoCalibratedNeighbor("cell " + std::to_string(net.cell(e).id) +
                                 " has no calibrated cell in its component");
    }
    std::sort(found.begin(), found.end());
    if (found.size() > 2) found.resize(2);

    double wsum = 0.0, rc = 0.0, cap = 0.0, rj = 0.0, a = 0.0;
    for (auto [d, u] : found) {
      const double w = 1.0 / d;
      const auto& fd = calibrated.at(u);
      wsum += w;
      rc += w * fd.rho_crit;
      cap += w * fd.capacity;
      rj += w * fd.rho_jam;
      a += w * fd.quad_a;
    }
    out.emplace(e, make_diagram(rc / wsum, cap / wsum, rj / wsum, a / wsum));
  }
  return out;
}

}  // namespace roadsense
