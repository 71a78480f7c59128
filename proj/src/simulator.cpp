#include "roadsense/simulator.hpp"

#include "roadsense/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace roadsense {

namespace {

constexpr double kNegativeSlack = 1e-9;

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

}  // namespace

void check_cfl(const TrafficNetwork& net, const Diagrams& fds) {
  if (fds.size() != net.size()) throw MalformedSpec("need one fundamental diagram per cell");
  for (std::size_t e = 0; e < net.size(); ++e) {
    const double len = net.cell(e).length_km;
    const auto [v_ff, w] = derive_speeds(fds[e]);
    if (v_ff > len * (1.0 + 1e-12) || -w > len * (1.0 + 1e-12)) {
      std::ostringstream os;
      os << "cell " << net.cell(e).id << ": free-flow speed " << v_ff << " or wave speed "
         << -w << " exceeds the cell length " << len << " per period";
      throw OutOfRange(os.str());
    }
  }
}

StepResult ctm_step(const SimState& state, const Eigen::VectorXd& exogenous,
                    const TrafficNetwork& net, const Diagrams& fds) {
  const std::size_t n = net.size();
  const auto& split = net.splitting();

  Eigen::VectorXd demand(ix(n)), supply(ix(n));
  for (std::size_t e = 0; e < n; ++e) {
    demand[ix(e)] = fds[e].demand(state.density[ix(e)]);
    supply[ix(e)] = fds[e].supply(state.density[ix(e)]);
  }

  // Each receiving cell scales all requests by the same factor; a sender is
  // held back by its most constrained receiver.
  const Eigen::VectorXd requested = split.transpose() * demand;
  Eigen::VectorXd accept = Eigen::VectorXd::Ones(ix(n));
  for (std::size_t k = 0; k < n; ++k) {
    if (requested[ix(k)] > supply[ix(k)]) accept[ix(k)] = supply[ix(k)] / requested[ix(k)];
  }

  StepResult out;
  out.outflow.resize(ix(n));
  out.admitted = Eigen::VectorXd::Zero(ix(n));
  for (std::size_t e = 0; e < n; ++e) {
    double factor = 1.0;
    for (auto k : net.downstream(e)) factor = std::min(factor, accept[ix(k)]);
    out.outflow[ix(e)] = demand[ix(e)] * factor;
    const double lambda = exogenous[ix(e)];
    if (lambda != 0.0) {
      if (!net.is_onramp(e) || lambda < 0.0) {
        throw OutOfRange("exogenous inflow must be non-negative and supported on onramps");
      }
      out.admitted[ix(e)] = std::min(lambda, supply[ix(e)]);
    }
  }
  out.inflow = split.transpose() * out.outflow + out.admitted;

  out.next.t = state.t + 1;
  out.next.density.resize(ix(n));
  for (std::size_t e = 0; e < n; ++e) {
    double rho = state.density[ix(e)] +
                 (out.inflow[ix(e)] - out.outflow[ix(e)]) / net.cell(e).length_km;
    if (rho < -kNegativeSlack) {
      std::ostringstream os;
      os << "cell " << net.cell(e).id << " density " << rho << " at step " << state.t;
      throw NegativeDensity(os.str());
    }
    out.next.density[ix(e)] = std::clamp(rho, 0.0, fds[e].rho_jam);
  }
  return out;
}

double DemandProfile::rate(int t) const {
  double r = 0.0;
  for (const auto& [start, value] : breakpoints) {
    if (start <= t) r = value;
    else break;
  }
  return r;
}

Trajectory simulate(const TrafficNetwork& net, const Diagrams& fds,
                    const std::vector<DemandProfile>& demand,
                    const Eigen::VectorXd& initial_density, int horizon) {
  const auto n = ix(net.size());
  if (horizon < 1) throw OutOfRange("horizon must be >= 1");
  if (initial_density.size() != n) throw MalformedSpec("initial density has wrong length");
  check_cfl(net, fds);
  for (Eigen::Index e = 0; e < n; ++e) {
    const double rho = initial_density[e];
    if (!(rho >= 0.0) || rho > fds[static_cast<std::size_t>(e)].rho_jam) {
      throw OutOfRange("initial density outside [0, rho_jam]");
    }
  }

  Trajectory traj;
  traj.density.resize(horizon + 1, n);
  traj.outflow.resize(horizon, n);
  traj.inflow.resize(horizon, n);
  traj.admitted.resize(horizon, n);

  SimState state{0, initial_density};
  traj.density.row(0) = state.density.transpose();
  Eigen::VectorXd lambda(n);
  for (int t = 0; t < horizon; ++t) {
    lambda.setZero();
    for (const auto& d : demand) lambda[ix(d.cell)] += d.rate(t);
    auto step = ctm_step(state, lambda, net, fds);
    traj.outflow.row(t) = step.outflow.transpose();
    traj.inflow.row(t) = step.inflow.transpose();
    traj.admitted.row(t) = step.admitted.transpose();
    state = std::move(step.next);
    traj.density.row(t + 1) = state.density.transpose();
  }
  return traj;
}

MassBalance mass_balance(const TrafficNetwork& net, const Trajectory& traj) {
  const Eigen::VectorXd len = net.lengths();
  Eigen::VectorXd exit(ix(net.size()));
  for (std::size_t e = 0; e < net.size(); ++e) exit[ix(e)] = net.exit_fraction(e);

  MassBalance mb;
  const Eigen::Index last = traj.density.rows() - 1;
  mb.storage_change = len.dot(traj.density.row(last).transpose() - traj.density.row(0).transpose());
  mb.net_inflow = traj.admitted.sum() - (traj.outflow * exit).sum();
  const double scale = std::max({1.0, std::abs(mb.net_inflow), traj.admitted.sum(),
                                 len.dot(traj.density.row(0).transpose())});
  mb.relative_error = std::abs(mb.storage_change - mb.net_inflow) / scale;
  return mb;
}

double cell_speed(double outflow, double density, const FundamentalDiagram& fd) {
  if (density < kSpeedDensityFloor) return fd.v_ff;
  return outflow / density;
}

MeasurementSynthesizer::MeasurementSynthesizer(const TrafficNetwork& net, const Diagrams& fds,
                                               std::vector<std::size_t> layout,
                                               std::vector<std::size_t> inflow_layout,
                                               SensorNoiseModel noise)
    : net_(&net),
      fds_(&fds),
      layout_(std::move(layout)),
      inflow_layout_(std::move(inflow_layout)),
      noise_(noise),
      rng_(noise.seed) {
  if (noise_.sigma_flow < 0 || noise_.sigma_density < 0 || noise_.sigma_fcd < 0) {
    throw OutOfRange("noise standard deviations must be non-negative");
  }
  for (auto e : layout_) {
    if (e >= net.size()) throw OutOfRange("sensor layout references an unknown cell");
  }
  for (auto e : inflow_layout_) {
    if (e >= net.size() || !net.is_onramp(e)) {
      throw OutOfRange("inflow sensors can only sit on onramps");
    }
  }
}

MeasurementBatch MeasurementSynthesizer::measure(int t, const Eigen::VectorXd& density,
                                                 const Eigen::VectorXd& outflow,
                                                 const Eigen::VectorXd& admitted) {
  if (t != next_t_) throw OutOfRange("measurement steps must be consecutive from 0");
  ++next_t_;

  std::normal_distribution<double> unit(0.0, 1.0);
  MeasurementBatch batch;
  batch.t = t;
  for (auto e : layout_) {
    const double wf = unit(rng_);
    const double wr = unit(rng_);
    batch.flow_meas[e] = outflow[ix(e)] + noise_.sigma_flow * wf;
    batch.density_meas[e] = density[ix(e)] + noise_.sigma_density * wr;
  }
  for (auto e : inflow_layout_) {
    batch.inflow_meas[e] = admitted[ix(e)] + noise_.sigma_flow * unit(rng_);
  }

  // Windows [kN, (k+1)N − 1] are published at t = (k+1)N and held until the
  // next publication; before the first one batches carry no speeds.
  const int window = net_->fcd_period_steps();
  if (t > 0 && t % window == 0) {
    std::map<int, double> fresh;
    for (auto& [segment, speeds] : window_) {
      double mean = 0.0;
      for (double v : speeds) mean += v;
      mean /= static_cast<double>(speeds.size());
      fresh[segment] = mean + noise_.sigma_fcd * unit(rng_);
      speeds.clear();
    }
    held_ = std::move(fresh);
    batch.fcd_refreshed = true;
  }
  batch.fcd_speed = held_;

  for (const auto& [segment, members] : net_->segments()) {
    double sum = 0.0;
    for (auto e : members) sum += cell_speed(outflow[ix(e)], density[ix(e)], (*fds_)[e]);
    window_[segment].push_back(sum / static_cast<double>(members.size()));
  }
  return batch;
}

std::vector<MeasurementBatch> measure_all(const TrafficNetwork& net, const Diagrams& fds,
                                          const Trajectory& traj,
                                          const std::vector<std::size_t>& layout,
                                          const std::vector<std::size_t>& inflow_layout,
                                          const SensorNoiseModel& noise) {
  MeasurementSynthesizer synth(net, fds, layout, inflow_layout, noise);
  std::vector<MeasurementBatch> batches;
  batches.reserve(static_cast<std::size_t>(traj.horizon()));
  for (int t = 0; t < traj.horizon(); ++t) {
    batches.push_back(synth.measure(t, traj.density.row(t).transpose(),
                                    traj.outflow.row(t).transpose(),
                                    traj.admitted.row(t).transpose()));
  }
  return batches;
}

double occupancy_to_density(double occupancy_percent, double avg_vehicle_length_km) {
  if (!(occupancy_percent >= 0.0 && occupancy_percent <= 100.0)) {
    throw OutOfRange("occupancy must lie in [0, 100] percent");
  }
  if (!(avg_vehicle_length_km > 0.0)) throw OutOfRange("average vehicle length must be positive");
  return occupancy_percent / (100.0 * avg_vehicle_length_km);
}

Eigen::VectorXd cumulative_outflows(const Eigen::MatrixXd& outflow, int t0, int t1) {
  if (t0 < 0 || t1 > outflow.rows() || t0 >= t1) {
    throw OutOfRange("cumulative window must be a non-empty range inside the history");
  }
  return outflow.middleRows(t0, t1 - t0).colwise().sum().transpose();
}

}  // namespace roadsense
