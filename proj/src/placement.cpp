#include "roadsense/placement.hpp"

#include "roadsense/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <numeric>
#include <sstream>
#include <thread>

namespace roadsense {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

// Eigen-decomposition of a symmetric information matrix, or nothing when it
// is not safely invertible.
struct Spectrum {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

std::optional<Spectrum> regular_spectrum(const Eigen::MatrixXd& g) {
  if (g.rows() == 0) return std::nullopt;
  if (!g.allFinite()) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
  if (es.info() != Eigen::Success) return std::nullopt;
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi >= kMaxInformationCondition * lo) return std::nullopt;
  return Spectrum{es.eigenvalues(), es.eigenvectors()};
}

BlueCovariance covariance_from_gram(const Eigen::MatrixXd& V, const Eigen::MatrixXd& gram) {
  auto spec = regular_spectrum(gram);
  if (!spec) {
    throw SingularInformation("information matrix VᵀΣ⁻¹V is singular or ill-conditioned");
  }
  const Eigen::MatrixXd inv = spec->vectors * spec->values.cwiseInverse().asDiagonal() *
                              spec->vectors.transpose();
  BlueCovariance out;
  out.covariance = V * inv * V.transpose();
  out.trace = spec->values.cwiseInverse().sum();
  return out;
}

void check_cells(const Eigen::MatrixXd& V, const std::vector<std::size_t>& cells) {
  for (auto e : cells) {
    if (ix(e) >= V.rows()) throw OutOfRange("selection references cell " + std::to_string(e));
  }
}

// Candidate cells grouped into solver units (a group or a single cell),
// ordered by their smallest member.
struct Units {
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> candidates;
};

Units make_units(Eigen::Index n, const std::optional<GeoConstraints>& constraints) {
  std::vector<char> available(static_cast<std::size_t>(n), constraints && !constraints->available.empty() ? 0 : 1);
  if (constraints) {
    for (auto e : constraints->available) {
      if (ix(e) >= n) throw MalformedSpec("available cell " + std::to_string(e) + " out of range");
      available[e] = 1;
    }
  }
  std::vector<int> owner(static_cast<std::size_t>(n), -1);
  Units units;
  if (constraints) {
    for (const auto& g : constraints->groups) {
      if (g.empty()) continue;
      std::vector<std::size_t> members(g);
      std::sort(members.begin(), members.end());
      members.erase(std::unique(members.begin(), members.end()), members.end());
      for (auto e : members) {
        if (ix(e) >= n) throw MalformedSpec("group cell " + std::to_string(e) + " out of range");
        if (!available[e]) {
          throw MalformedSpec("group member " + std::to_string(e) + " is not an available cell");
        }
        if (owner[e] >= 0) throw MalformedSpec("groups must be disjoint");
        owner[e] = static_cast<int>(units.members.size());
      }
      units.members.push_back(std::move(members));
    }
  }
  for (Eigen::Index e = 0; e < n; ++e) {
    const auto u = static_cast<std::size_t>(e);
    if (available[u]) units.candidates.push_back(u);
    if (available[u] && owner[u] < 0) units.members.push_back({u});
  }
  std::sort(units.members.begin(), units.members.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return units;
}

}  // namespace

BlueCovariance blue_covariance(const Eigen::MatrixXd& V, const std::vector<std::size_t>& selection,
                               const SensorModel& model) {
  check_cells(V, selection);
  if (!(model.sigma_nom_sq > 0.0)) throw OutOfRange("sigma_nom_sq must be positive");
  if (static_cast<Eigen::Index>(selection.size()) < V.cols()) {
    throw SingularInformation(std::to_string(selection.size()) + " sensors cannot observe " +
                              std::to_string(V.cols()) + " independent flow directions");
  }
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(V.cols(), V.cols());
  for (auto e : selection) gram.noalias() += V.row(ix(e)).transpose() * V.row(ix(e));
  gram /= model.sigma_nom_sq;
  return covariance_from_gram(V, gram);
}

BlueCovariance blue_covariance(const Eigen::MatrixXd& V, const Eigen::VectorXd& variances) {
  if (variances.size() != V.rows()) throw OutOfRange("one variance per cell expected");
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(V.cols(), V.cols());
  for (Eigen::Index e = 0; e < V.rows(); ++e) {
    const double s2 = variances[e];
    if (!(s2 > 0.0)) throw OutOfRange("variances must be positive");
    if (std::isinf(s2)) continue;
    gram.noalias() += V.row(e).transpose() * V.row(e) / s2;
  }
  return covariance_from_gram(V, gram);
}

double total_cost(const std::vector<std::size_t>& selection, const Eigen::MatrixXd& V,
                  const SensorModel& model) {
  try {
    return blue_covariance(V, selection, model).trace +
           model.cost_per_sensor * static_cast<double>(selection.size());
  } catch (const SingularInformation&) {
    return kInfiniteCost;
  }
}

Eigen::MatrixXd build_discrepancy_basis(int n) {
  if (n < 2) throw OutOfRange("discrepancy basis needs n >= 2");
  const double rn = std::sqrt(static_cast<double>(n));
  Eigen::VectorXd u = Eigen::VectorXd::Ones(n);
  u[0] -= rn;
  const Eigen::MatrixXd h =
      Eigen::MatrixXd::Identity(n, n) - 2.0 * u * u.transpose() / u.squaredNorm();
  Eigen::MatrixXd w = h.rightCols(n - 1);
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    Eigen::Index arg = 0;
    w.col(j).cwiseAbs().maxCoeff(&arg);
    if (w(arg, j) < 0.0) w.col(j) = -w.col(j);
  }
  return w;
}

Eigen::VectorXd trace_objective_gradient(const Eigen::MatrixXd& V, const Eigen::VectorXd& omega) {
  const Eigen::MatrixXd gram = V.transpose() * omega.asDiagonal() * V;
  auto spec = regular_spectrum(gram);
  if (!spec) throw SingularInformation("VᵀΩV is singular at the requested point");
  // v_iᵀ M⁻² v_i = ‖Λ⁻¹ Qᵀ v_i‖²
  const Eigen::MatrixXd scaled =
      (V * spec->vectors) * spec->values.cwiseInverse().asDiagonal();
  return -scaled.rowwise().squaredNorm();
}

RelaxationObjective::RelaxationObjective(Eigen::MatrixXd V, double gamma, double kappa)
    : V_(std::move(V)), gamma_(gamma), kappa_(kappa) {
  const auto n = static_cast<int>(V_.rows());
  c_ = n >= 2 ? Eigen::VectorXd(build_discrepancy_basis(n).rowwise().sum())
              : Eigen::VectorXd::Zero(n);
}

double RelaxationObjective::value(const Eigen::VectorXd& omega) const {
  const Eigen::MatrixXd gram = V_.transpose() * omega.asDiagonal() * V_;
  auto spec = regular_spectrum(gram);
  if (!spec) return kInfiniteCost;
  double f = spec->values.cwiseInverse().sum() + gamma_ * omega.sum();
  if (kappa_ != 0.0) f += kappa_ * std::exp(-c_.dot(omega));
  return f;
}

Eigen::VectorXd RelaxationObjective::gradient(const Eigen::VectorXd& omega) const {
  Eigen::VectorXd g = trace_objective_gradient(V_, omega);
  g.array() += gamma_;
  if (kappa_ != 0.0) g -= kappa_ * std::exp(-c_.dot(omega)) * c_;
  return g;
}

PlacementSolution virtual_variance_solve(const Eigen::MatrixXd& V, const SensorModel& model,
                                         const PlacementWeights& weights,
                                         const std::optional<GeoConstraints>& constraints,
                                         const SolverOptions& options) {
  if (!(model.sigma_nom_sq > 0.0)) throw OutOfRange("sigma_nom_sq must be positive");
  if (!(weights.gamma >= 0.0) || !(weights.discrepancy_kappa >= 0.0)) {
    throw OutOfRange("gamma and kappa must be non-negative");
  }
  if (!(weights.discard_threshold > model.sigma_nom_sq)) {
    throw OutOfRange("discard threshold must exceed sigma_nom_sq");
  }

  const Eigen::Index n = V.rows();
  const Units units = make_units(n, constraints);
  const auto m = static_cast<Eigen::Index>(units.members.size());
  if (static_cast<Eigen::Index>(units.candidates.size()) < V.cols()) {
    throw InfeasibleCandidateSet(std::to_string(units.candidates.size()) +
                                 " candidate cells for " + std::to_string(V.cols()) + " onramps");
  }

  // ω = B x, one column per unit.
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n, m);
  for (Eigen::Index u = 0; u < m; ++u) {
    for (auto e : units.members[static_cast<std::size_t>(u)]) B(ix(e), u) = 1.0;
  }
  const double upper = 1.0 / model.sigma_nom_sq;
  const RelaxationObjective objective(V, weights.gamma, weights.discrepancy_kappa);
  if (!std::isfinite(objective.value(B * Eigen::VectorXd::Constant(m, upper)))) {
    throw InfeasibleCandidateSet("candidate cells leave the information matrix singular");
  }

  auto project = [upper](Eigen::VectorXd x) {
    return Eigen::VectorXd(x.cwiseMax(0.0).cwiseMin(upper));
  };
  auto value = [&](const Eigen::VectorXd& x) { return objective.value(B * x); };
  auto grad = [&](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(B.transpose() * objective.gradient(B * x));
  };

  Eigen::VectorXd x = Eigen::VectorXd::Constant(m, 0.5 * upper);
  double f = value(x);
  Eigen::VectorXd g = grad(x);
  std::deque<double> history{f};
  double lambda = 1.0;
  double residual = (project(x - g) - x).cwiseAbs().maxCoeff();
  int it = 0;
  for (; it < options.max_iter && residual > options.tol; ++it) {
    const Eigen::VectorXd d = project(x - lambda * g) - x;
    const double fmax = *std::max_element(history.begin(), history.end());
    const double slope = g.dot(d);
    double step = 1.0;
    Eigen::VectorXd xn;
    double fn = kInfiniteCost;
    for (;;) {
      xn = x + step * d;
      fn = value(xn);
      if (fn <= fmax + 1e-4 * step * slope) break;
      step *= 0.5;
      if (step < 1e-20) break;
    }
    if (!(fn <= fmax + 1e-4 * step * slope)) {
      // No progress possible in floating point; accept only if essentially
      // stationary already.
      if (residual <= 100.0 * options.tol) break;
      std::ostringstream os;
      os << "line search stalled at iteration " << it << " with projected-gradient residual "
         << residual;
      throw SolverFailure(os.str());
    }
    const Eigen::VectorXd gn = grad(xn);
    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd y = gn - g;
    const double sy = s.dot(y);
    lambda = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-12, 1e12) : 1e12;
    x = xn;
    f = fn;
    g = gn;
    history.push_back(f);
    if (static_cast<int>(history.size()) > options.memory) history.pop_front();
    residual = (project(x - g) - x).cwiseAbs().maxCoeff();
  }
  if (residual > 100.0 * options.tol) {
    std::ostringstream os;
    os << "virtual-variance solver hit " << options.max_iter
       << " iterations with residual " << residual;
    throw SolverFailure(os.str());
  }

  PlacementSolution sol;
  sol.omega = B * x;
  sol.objective = f;
  sol.kkt_residual = residual;
  sol.iterations = it;
  const double keep_floor = 1.0 / weights.discard_threshold;
  double min_kept = kInfiniteCost;
  double max_dropped = 0.0;
  for (auto e : units.candidates) {
    const double w = sol.omega[ix(e)];
    if (w >= keep_floor) {
      sol.selected.push_back(e);
      min_kept = std::min(min_kept, w);
    } else {
      max_dropped = std::max(max_dropped, w);
    }
  }
  if (sol.selected.empty()) {
    sol.bimodality = 0.0;
  } else if (max_dropped <= 0.0) {
    sol.bimodality = kInfiniteCost;
  } else {
    sol.bimodality = min_kept / max_dropped;
  }
  try {
    sol.vp_trace = blue_covariance(V, sol.selected, model).trace;
    sol.total_cost = sol.vp_trace + model.cost_per_sensor * static_cast<double>(sol.selected.size());
    sol.feasible = true;
  } catch (const SingularInformation&) {
    sol.feasible = false;
  }
  return sol;
}

BudgetResult budget_constrained_solve(const Eigen::MatrixXd& V, const SensorModel& model,
                                      double gamma0, double kappa, double discard_threshold,
                                      int n_max, int t_max, double growth,
                                      const std::optional<GeoConstraints>& constraints,
                                      const SolverOptions& options) {
  if (!(gamma0 > 0.0) || !(growth > 1.0)) {
    throw OutOfRange("budget iteration needs gamma0 > 0 and growth > 1");
  }
  if (t_max < 0) throw OutOfRange("t_max must be non-negative");

  BudgetResult res;
  if (n_max < V.cols()) {
    res.infeasible = true;
    res.budget_not_met = true;
    return res;
  }

  double gamma = gamma0;
  for (int t = 0;; ++t) {
    PlacementWeights w{gamma, kappa, discard_threshold};
    res.solution = virtual_variance_solve(V, model, w, constraints, options);
    const int count = static_cast<int>(res.solution.selected.size());
    res.log.push_back({t, gamma, count, res.solution.vp_trace});
    if (count <= n_max) break;
    if (t >= t_max) {
      res.budget_not_met = true;
      break;
    }
    gamma *= growth;
  }
  return res;
}

namespace {

// Cholesky of a small SPD matrix held row-major in `a` (r x r); returns
// tr(A⁻¹) or +∞ when a pivot collapses.
double inverse_trace(std::vector<double>& a, int r, std::vector<double>& work) {
  double scale = 0.0;
  for (int i = 0; i < r; ++i) scale = std::max(scale, a[static_cast<std::size_t>(i * r + i)]);
  const double floor = scale * 1e-12;
  for (int j = 0; j < r; ++j) {
    double d = a[static_cast<std::size_t>(j * r + j)];
    for (int k = 0; k < j; ++k) d -= a[static_cast<std::size_t>(j * r + k)] * a[static_cast<std::size_t>(j * r + k)];
    if (!(d > floor)) return kInfiniteCost;
    const double l = std::sqrt(d);
    a[static_cast<std::size_t>(j * r + j)] = l;
    for (int i = j + 1; i < r; ++i) {
      double s = a[static_cast<std::size_t>(i * r + j)];
      for (int k = 0; k < j; ++k) s -= a[static_cast<std::size_t>(i * r + k)] * a[static_cast<std::size_t>(j * r + k)];
      a[static_cast<std::size_t>(i * r + j)] = s / l;
    }
  }
  // tr(A⁻¹) = ‖L⁻¹‖²_F, column by column of L⁻¹ via forward substitution.
  double trace = 0.0;
  for (int c = 0; c < r; ++c) {
    for (int i = 0; i < r; ++i) {
      double s = i == c ? 1.0 : 0.0;
      for (int k = c; k < i; ++k) s -= a[static_cast<std::size_t>(i * r + k)] * work[static_cast<std::size_t>(k)];
      work[static_cast<std::size_t>(i)] = i < c ? 0.0 : s / a[static_cast<std::size_t>(i * r + i)];
      if (i >= c) trace += work[static_cast<std::size_t>(i)] * work[static_cast<std::size_t>(i)];
    }
  }
  return trace;
}

struct Candidate {
  double trace = kInfiniteCost;
  std::vector<std::size_t> cells;  // sorted
};

bool better(const Candidate& a, const Candidate& b) {
  if (!std::isfinite(a.trace)) return false;
  if (!std::isfinite(b.trace)) return true;
  const double tol = 1e-12 * std::max(1.0, std::abs(b.trace));
  if (a.trace < b.trace - tol) return true;
  if (a.trace > b.trace + tol) return false;
  return a.cells < b.cells;
}

class SubsetSearch {
 public:
  SubsetSearch(const Units& units, const std::vector<std::vector<double>>& unit_gram, int r, int h)
      : units_(units), unit_gram_(unit_gram), r_(r), h_(h) {
    const auto m = units.members.size();
    suffix_.assign(m + 1, 0);
    for (std::size_t u = m; u-- > 0;) suffix_[u] = suffix_[u + 1] + static_cast<int>(units.members[u].size());
    grams_.assign(static_cast<std::size_t>(h + 1), std::vector<double>(static_cast<std::size_t>(r * r), 0.0));
    scratch_.assign(static_cast<std::size_t>(r * r), 0.0);
    work_.assign(static_cast<std::size_t>(r), 0.0);
  }

  // All subsets whose smallest unit is `first`.
  void run_chunk(std::size_t first) {
    const int size = static_cast<int>(units_.members[first].size());
    if (size > h_) return;
    add(0, first);
    chosen_.push_back(first);
    descend(first + 1, h_ - size, 1);
    chosen_.pop_back();
  }

  const Candidate& best() const { return best_; }
  std::uint64_t evaluated() const { return evaluated_; }

 private:
  void add(int depth, std::size_t unit) {
    auto& dst = grams_[static_cast<std::size_t>(depth + 1)];
    const auto& src = grams_[static_cast<std::size_t>(depth)];
    const auto& g = unit_gram_[unit];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] + g[i];
  }

  void descend(std::size_t start, int remaining, int depth) {
    if (remaining == 0) {
      leaf(depth);
      return;
    }
    for (std::size_t u = start; u < units_.members.size(); ++u) {
      if (suffix_[u] < remaining) break;
      const int size = static_cast<int>(units_.members[u].size());
      if (size > remaining) continue;
      add(depth, u);
      chosen_.push_back(u);
      descend(u + 1, remaining - size, depth + 1);
      chosen_.pop_back();
    }
  }

  void leaf(int depth) {
    ++evaluated_;
    scratch_ = grams_[static_cast<std::size_t>(depth)];
    const double trace = inverse_trace(scratch_, r_, work_);
    if (!std::isfinite(trace)) return;
    if (std::isfinite(best_.trace) && trace > best_.trace * (1.0 + 1e-12) + 1e-12) return;
    Candidate c;
    c.trace = trace;
    for (auto u : chosen_) {
      c.cells.insert(c.cells.end(), units_.members[u].begin(), units_.members[u].end());
    }
    std::sort(c.cells.begin(), c.cells.end());
    if (better(c, best_)) best_ = std::move(c);
  }

  const Units& units_;
  const std::vector<std::vector<double>>& unit_gram_;
  int r_;
  int h_;
  std::vector<int> suffix_;
  std::vector<std::vector<double>> grams_;
  std::vector<double> scratch_;
  std::vector<double> work_;
  std::vector<std::size_t> chosen_;
  Candidate best_;
  std::uint64_t evaluated_ = 0;
};

// Number of unit combinations with total size h (saturating).
std::uint64_t count_subsets(const Units& units, int h) {
  std::vector<long double> ways(static_cast<std::size_t>(h + 1), 0.0L);
  ways[0] = 1.0L;
  for (const auto& m : units.members) {
    const int s = static_cast<int>(m.size());
    for (int k = h; k >= s; --k) ways[static_cast<std::size_t>(k)] += ways[static_cast<std::size_t>(k - s)];
  }
  const long double w = ways[static_cast<std::size_t>(h)];
  return w >= 1.8e19L ? UINT64_MAX : static_cast<std::uint64_t>(w);
}

}  // namespace

ExhaustiveResult exhaustive_search(const Eigen::MatrixXd& V, const SensorModel& model, int h,
                                   const std::optional<GeoConstraints>& constraints,
                                   std::uint64_t max_subsets, unsigned threads) {
  if (!(model.sigma_nom_sq > 0.0)) throw OutOfRange("sigma_nom_sq must be positive");
  const int r = static_cast<int>(V.cols());
  const Units units = make_units(V.rows(), constraints);
  if (h < r || h > static_cast<int>(units.candidates.size())) {
    throw OutOfRange("sensor count h=" + std::to_string(h) + " outside [" + std::to_string(r) +
                     ", " + std::to_string(units.candidates.size()) + "]");
  }
  const std::uint64_t total = count_subsets(units, h);
  if (total > max_subsets) {
    throw BudgetExceeded(std::to_string(total) + " subsets exceed the enumeration cap of " +
                         std::to_string(max_subsets));
  }

  std::vector<std::vector<double>> unit_gram;
  for (const auto& m : units.members) {
    std::vector<double> g(static_cast<std::size_t>(r * r), 0.0);
    for (auto e : m) {
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) {
          g[static_cast<std::size_t>(i * r + j)] += V(ix(e), i) * V(ix(e), j) / model.sigma_nom_sq;
        }
      }
    }
    unit_gram.push_back(std::move(g));
  }

  const std::size_t chunks = units.members.size();
  std::vector<Candidate> chunk_best(chunks);
  std::vector<std::uint64_t> chunk_count(chunks, 0);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(chunks, 1)));

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      SubsetSearch search(units, unit_gram, r, h);
      search.run_chunk(c);
      chunk_best[c] = search.best();
      chunk_count[c] = search.evaluated();
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  Candidate best;
  ExhaustiveResult res;
  for (std::size_t c = 0; c < chunks; ++c) {
    res.evaluated += chunk_count[c];
    if (better(chunk_best[c], best)) best = chunk_best[c];
  }
  if (!best.cells.empty()) {
    res.selected = best.cells;
    res.vp_trace = blue_covariance(V, res.selected, model).trace;
    res.total_cost = res.vp_trace + model.cost_per_sensor * static_cast<double>(h);
  }
  return res;
}

}  // namespace roadsense
