#include "roadsense/observer.hpp"

#include "roadsense/errors.hpp"
#include "roadsense/nonneg_qp.hpp"

#include <algorithm>
#include <cmath>

namespace roadsense {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

}  // namespace

void validate(const ObserverConfig& cfg) {
  if (!(cfg.gain_kappa >= 0.0 && cfg.gain_kappa <= 1.0)) {
    throw OutOfRange("observer gain_kappa must lie in [0, 1]");
  }
  if (!(cfg.flow_weight_gamma > 0.0)) throw OutOfRange("flow_weight_gamma must be positive");
  if (!(cfg.qp_ridge >= 0.0)) throw OutOfRange("qp_ridge must be non-negative");
  if (!(cfg.qp_tol > 0.0)) throw OutOfRange("qp_tol must be positive");
}

ObserverState initial_observer_state(const Eigen::VectorXd& rho_hat) {
  ObserverState s;
  s.rho_hat = rho_hat;
  s.f_out_hat = Eigen::VectorXd::Zero(rho_hat.size());
  s.f_in_hat = Eigen::VectorXd::Zero(rho_hat.size());
  s.rho_pseudo = rho_hat;
  return s;
}

FlowEstimator::FlowEstimator(const TrafficNetwork& net, ObserverConfig cfg)
    : lap_(reduced_laplacian(net).matrix), cfg_(cfg) {
  gram_ = lap_.transpose() * lap_;
}

Eigen::VectorXd FlowEstimator::estimate(const std::map<std::size_t, double>& flow_meas) const {
  Eigen::MatrixXd q = gram_;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(gram_.rows());
  q.diagonal().array() += cfg_.qp_ridge;
  for (const auto& [e, phi] : flow_meas) {
    q(ix(e), ix(e)) += cfg_.flow_weight_gamma;
    b[ix(e)] = cfg_.flow_weight_gamma * phi;
  }
  return solve_nonneg_qp(q, b, cfg_.qp_tol).x;
}

double FlowEstimator::objective(const Eigen::VectorXd& f,
                                const std::map<std::size_t, double>& flow_meas) const {
  double v = (lap_ * f).squaredNorm() + cfg_.qp_ridge * f.squaredNorm();
  for (const auto& [e, phi] : flow_meas) {
    const double r = f[ix(e)] - phi;
    v += cfg_.flow_weight_gamma * r * r;
  }
  return v;
}

Eigen::VectorXd estimate_outflows(const MeasurementBatch& meas, const TrafficNetwork& net,
                                  const ObserverConfig& cfg) {
  validate(cfg);
  return FlowEstimator(net, cfg).estimate(meas.flow_meas);
}

double pseudo_density(double f_out, double v_meas, const FundamentalDiagram& fd) {
  const auto roots = fd_inverse(fd, f_out);
  const double v_free = roots.freeflow > 0.0 ? f_out / roots.freeflow : fd.v_ff;
  const double v_cong = roots.congested > 0.0 ? f_out / roots.congested : fd.v_ff;
  return std::abs(v_free - v_meas) <= std::abs(v_cong - v_meas) ? roots.freeflow
                                                                 : roots.congested;
}

Eigen::VectorXd advance_density(const Eigen::VectorXd& rho_hat, const Eigen::VectorXd& f_in,
                                const Eigen::VectorXd& f_out, const Eigen::VectorXd& rho_pseudo,
                                double kappa, const TrafficNetwork& net, const Diagrams& fds) {
  Eigen::VectorXd next(rho_hat.size());
  for (std::size_t e = 0; e < net.size(); ++e) {
    const auto i = ix(e);
    const double rho = rho_hat[i] + (f_in[i] - f_out[i]) / net.cell(e).length_km +
                       kappa * (rho_pseudo[i] - rho_hat[i]);
    next[i] = std::clamp(rho, 0.0, fds[e].rho_jam);
  }
  return next;
}

Observer::Observer(const TrafficNetwork& net, const Diagrams& fds, ObserverConfig cfg)
    : net_(&net), fds_(&fds), cfg_(cfg), estimator_(net, cfg) {
  validate(cfg_);
  if (fds.size() != net.size()) throw MalformedSpec("need one fundamental diagram per cell");
}

ObserverState Observer::step(ObserverState& state, const MeasurementBatch& meas) const {
  const auto& net = *net_;
  const auto& fds = *fds_;
  const auto n = ix(net.size());

  state.f_out_hat = estimator_.estimate(meas.flow_meas);

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(n);
  for (auto o : net.onramps()) {
    auto it = meas.inflow_meas.find(o);
    lambda[ix(o)] = it != meas.inflow_meas.end() ? std::max(0.0, it->second)
                                                 : state.f_out_hat[ix(o)];
  }
  state.f_in_hat = net.splitting().transpose() * state.f_out_hat + lambda;

  for (const auto& [segment, v] : meas.fcd_speed) state.held_speed[segment] = v;
  state.rho_pseudo.resize(n);
  for (std::size_t e = 0; e < net.size(); ++e) {
    auto it = state.held_speed.find(net.cell(e).segment_id);
    const double v = it != state.held_speed.end() ? it->second : fds[e].v_ff;
    state.rho_pseudo[ix(e)] = pseudo_density(state.f_out_hat[ix(e)], v, fds[e]);
  }

  ObserverState next;
  next.rho_hat = advance_density(state.rho_hat, state.f_in_hat, state.f_out_hat,
                                 state.rho_pseudo, cfg_.gain_kappa, net, fds);
  next.f_out_hat = state.f_out_hat;
  next.f_in_hat = state.f_in_hat;
  next.rho_pseudo = state.rho_pseudo;
  next.held_speed = state.held_speed;
  return next;
}

ObserverState observer_step(ObserverState& state, const MeasurementBatch& meas,
                            const TrafficNetwork& net, const Diagrams& fds,
                            const ObserverConfig& cfg) {
  return Observer(net, fds, cfg).step(state, meas);
}

double percentile_delta(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto m = values.size();
  auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(m) - 1e-12));
  k = std::clamp<std::size_t>(k, 1, m);
  return values[k - 1];
}

ErrorReport error_report(const Eigen::MatrixXd& true_density, const Eigen::MatrixXd& est_density,
                         const Eigen::MatrixXd& true_flow, const Eigen::MatrixXd& est_flow,
                         int steps_per_day, int transient) {
  if (true_density.rows() != est_density.rows() || true_density.cols() != est_density.cols() ||
      true_flow.rows() != est_flow.rows() || true_flow.cols() != est_flow.cols() ||
      true_density.rows() != true_flow.rows()) {
    throw MalformedSpec("truth and estimate traces are not aligned");
  }
  if (steps_per_day < 1) throw OutOfRange("steps_per_day must be >= 1");

  ErrorReport rep;
  rep.transient = transient;
  rep.abs_density_err = (true_density - est_density).cwiseAbs();
  rep.abs_flow_err = (true_flow - est_flow).cwiseAbs();

  const auto steps = static_cast<int>(true_density.rows());
  for (int start = 0; start < steps; start += steps_per_day) {
    const int lo = std::max(start, transient);
    const int hi = std::min(steps, start + steps_per_day);
    if (lo >= hi) continue;
    std::vector<double> dens, flow;
    for (int t = lo; t < hi; ++t) {
      for (Eigen::Index e = 0; e < rep.abs_density_err.cols(); ++e) {
        dens.push_back(rep.abs_density_err(t, e));
        flow.push_back(rep.abs_flow_err(t, e));
      }
    }
    DayPercentiles row;
    row.day = start / steps_per_day;
    for (std::size_t i = 0; i < kErrorLevels.size(); ++i) {
      row.density[i] = percentile_delta(dens, kErrorLevels[i]);
      row.flow[i] = percentile_delta(flow, kErrorLevels[i]);
    }
    rep.days.push_back(row);
  }
  return rep;
}

Reconstruction run_reconstruction(const TrafficNetwork& net, const Diagrams& fds,
                                  const std::vector<MeasurementBatch>& batches,
                                  const Trajectory& truth, const ObserverConfig& cfg,
                                  const Eigen::VectorXd& initial_estimate, int steps_per_day,
                                  int transient) {
  const int horizon = static_cast<int>(batches.size());
  if (horizon != truth.horizon()) throw MalformedSpec("measurement stream and truth differ in length");
  const auto n = ix(net.size());

  Observer observer(net, fds, cfg);
  Reconstruction rec;
  rec.density.resize(horizon, n);
  rec.outflow.resize(horizon, n);
  rec.inflow.resize(horizon, n);
  rec.pseudo.resize(horizon, n);

  ObserverState state = initial_observer_state(initial_estimate);
  for (int t = 0; t < horizon; ++t) {
    rec.density.row(t) = state.rho_hat.transpose();
    ObserverState next = observer.step(state, batches[static_cast<std::size_t>(t)]);
    rec.outflow.row(t) = state.f_out_hat.transpose();
    rec.inflow.row(t) = state.f_in_hat.transpose();
    rec.pseudo.row(t) = state.rho_pseudo.transpose();
    state = std::move(next);
  }

  rec.report = error_report(truth.density.topRows(horizon), rec.density, truth.outflow,
                            rec.outflow, steps_per_day, transient);
  return rec;
}

}  // namespace roadsense
