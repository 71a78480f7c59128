#include "roadsense/builtin_networks.hpp"
#include "roadsense/errors.hpp"
#include "roadsense/simulator.hpp"

#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace roadsense;
using Catch::Approx;

namespace {

Diagrams uniform(const TrafficNetwork& net, double rho_crit = 20, double rho_jam = 250) {
  Diagrams fds;
  for (const auto& c : net.cells()) fds.push_back(make_diagram(rho_crit, c.speed_limit_km_per_step * rho_crit, rho_jam));
  return fds;
}

Eigen::VectorXd zeros(const TrafficNetwork& net) { return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.size())); }

}  // namespace

TEST_CASE("empty network stays empty", "[simulator]") {
  const auto net = build_network(grid_network());
  const auto fds = uniform(net);
  const auto traj = simulate(net, fds, {}, zeros(net), 50);
  CHECK(traj.density.cwiseAbs().maxCoeff() == 0.0);
  CHECK(traj.outflow.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("free flow out of a single cell", "[simulator]") {
  const auto net = build_network(chain_network(2));
  const auto fds = uniform(net);
  SimState s{0, Eigen::Vector2d(0.0, 10.0)};
  const auto step = ctm_step(s, zeros(net), net, fds);
  CHECK(step.outflow[1] == Approx(fds[1].v_ff * 10.0));
  CHECK(step.next.density[1] == Approx(10.0 - fds[1].v_ff * 10.0 / 0.5));
}

TEST_CASE("jammed receiver blocks its sender", "[simulator]") {
  const auto net = build_network(chain_network(2));
  const auto fds = uniform(net);
  SimState s{0, Eigen::Vector2d(5.0, 250.0)};
  Eigen::VectorXd lambda = zeros(net);
  lambda[0] = 1.0;
  const auto step = ctm_step(s, lambda, net, fds);
  CHECK(step.outflow[0] == 0.0);
  CHECK(step.next.density[0] == Approx(5.0 + 1.0 / 0.5));
}

TEST_CASE("onramps admit at most their supply", "[simulator]") {
  const auto net = build_network(chain_network(2));
  const auto fds = uniform(net);
  SimState s{0, Eigen::Vector2d(250.0, 0.0)};
  Eigen::VectorXd lambda = zeros(net);
  lambda[0] = 3.0;
  const auto step = ctm_step(s, lambda, net, fds);
  CHECK(step.admitted[0] == 0.0);
  CHECK(step.next.density[0] <= 250.0);
}

TEST_CASE("exogenous inflow only on onramps", "[simulator]") {
  const auto net = build_network(chain_network(3));
  const auto fds = uniform(net);
  Eigen::VectorXd lambda = zeros(net);
  lambda[1] = 1.0;
  CHECK_THROWS_AS(ctm_step({0, zeros(net)}, lambda, net, fds), OutOfRange);
}

TEST_CASE("step size check", "[simulator]") {
  const auto net = build_network(chain_network(3, 0.1, 0.375));
  CHECK_THROWS_AS(check_cfl(net, uniform(net)), OutOfRange);
  const auto ok = build_network(chain_network(3));
  CHECK_NOTHROW(check_cfl(ok, uniform(ok)));
}

TEST_CASE("demand profiles are piecewise constant", "[simulator]") {
  DemandProfile p{0, {{10, 2.0}, {20, 0.5}}};
  CHECK(p.rate(0) == 0.0);
  CHECK(p.rate(10) == 2.0);
  CHECK(p.rate(19) == 2.0);
  CHECK(p.rate(500) == 0.5);
}

TEST_CASE("conservation, bounds and kernel residual on random networks", "[simulator][property]") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const auto net = build_network(testing::random_network(rng, 5, 30, 1, 4));
    const auto fds = uniform(net, 20, 200);
    std::vector<DemandProfile> demand;
    std::uniform_real_distribution<double> u(0.5, 3.0);
    for (auto e : net.onramps()) demand.push_back({e, {{0, u(rng)}, {150, u(rng)}, {300, 0.0}}});
    const auto traj = simulate(net, fds, demand, zeros(net), 1500);

    const auto mb = mass_balance(net, traj);
    CHECK(mb.relative_error <= 1e-6);
    for (Eigen::Index t = 0; t < traj.outflow.rows(); ++t) {
      for (std::size_t e = 0; e < net.size(); ++e) {
        const double f = traj.outflow(t, static_cast<Eigen::Index>(e));
        CHECK(f >= 0.0);
        CHECK(f <= fds[e].capacity * (1 + 1e-12));
        CHECK(traj.density(t, static_cast<Eigen::Index>(e)) <= fds[e].rho_jam);
      }
    }
    // the balance residual of the cumulative flows is exactly the storage change
    const auto f = cumulative_outflows(traj.outflow, 0, traj.horizon());
    const auto lap = reduced_laplacian(net);
    const Eigen::VectorXd residual = lap.matrix * f;
    for (std::size_t k = 0; k < lap.row_cells.size(); ++k) {
      const auto e = static_cast<Eigen::Index>(lap.row_cells[k]);
      const double stored = net.cell(lap.row_cells[k]).length_km * (traj.density(traj.horizon(), e) - traj.density(0, e));
      CHECK(residual[static_cast<Eigen::Index>(k)] == Approx(stored).margin(1e-9 * std::max(1.0, f.maxCoeff())));
    }
  }
}

TEST_CASE("a drained day cycle leaves cumulative flows near the kernel", "[simulator]") {
  const auto net = build_network(grid_network());
  const auto fds = uniform(net);
  std::vector<DemandProfile> demand;
  for (auto o : net.onramps()) demand.push_back({o, {{0, 1.0}, {100, 2.5}, {250, 0.0}}});
  const auto traj = simulate(net, fds, demand, zeros(net), 800);
  const auto f = cumulative_outflows(traj.outflow, 0, traj.horizon());
  CHECK((reduced_laplacian(net).matrix * f).cwiseAbs().maxCoeff() <= 0.02 * f.cwiseAbs().maxCoeff());
}

TEST_CASE("cumulative outflows", "[simulator]") {
  Eigen::MatrixXd hist = Eigen::MatrixXd::Constant(10, 3, 2.0);
  CHECK(cumulative_outflows(hist, 0, 10) == Eigen::VectorXd::Constant(3, 20.0));
  CHECK(cumulative_outflows(Eigen::MatrixXd::Zero(5, 2), 0, 5) == Eigen::VectorXd::Zero(2));
  CHECK_THROWS_AS(cumulative_outflows(hist, 3, 3), OutOfRange);
}

TEST_CASE("occupancy conversion", "[simulator]") {
  CHECK(occupancy_to_density(0, 0.005) == 0.0);
  CHECK(occupancy_to_density(10, 0.005) == Approx(20));
  CHECK(occupancy_to_density(100, 0.005) == Approx(200));
  CHECK_THROWS_AS(occupancy_to_density(101, 0.005), OutOfRange);
  CHECK_THROWS_AS(occupancy_to_density(-1, 0.005), OutOfRange);
  CHECK_THROWS_AS(occupancy_to_density(10, 0), OutOfRange);
}

TEST_CASE("noiseless measurements equal the truth", "[simulator]") {
  const auto net = build_network(chain_network(6));
  const auto fds = uniform(net);
  const auto traj = simulate(net, fds, {{0, {{0, 3.0}}}}, zeros(net), 40);
  const std::vector<std::size_t> layout{1, 3, 5};
  const auto batches = measure_all(net, fds, traj, layout, {0}, SensorNoiseModel{});
  for (const auto& b : batches) {
    for (auto e : layout) {
      CHECK(b.flow_meas.at(e) == traj.outflow(b.t, static_cast<Eigen::Index>(e)));
      CHECK(b.density_meas.at(e) == traj.density(b.t, static_cast<Eigen::Index>(e)));
    }
    CHECK(b.inflow_meas.at(0) == traj.admitted(b.t, 0));
  }
}

TEST_CASE("FCD windows average the previous N steps", "[simulator]") {
  // one segment of two free-flowing cells; speeds are driven by hand
  const auto net = build_network(chain_network(2));
  const auto fds = uniform(net);
  MeasurementSynthesizer synth(net, fds, {}, {}, SensorNoiseModel{});
  const std::vector<double> speeds{0.3, 0.3, 0.4, 0.4, 0.1, 0.1, 0.1, 0.1, 0.2};
  std::vector<MeasurementBatch> out;
  for (int t = 0; t < static_cast<int>(speeds.size()); ++t) {
    const Eigen::Vector2d rho(10.0, 10.0);
    const Eigen::Vector2d f = rho * speeds[static_cast<std::size_t>(t)];
    out.push_back(synth.measure(t, rho, f, Eigen::Vector2d::Zero()));
  }
  for (int t = 0; t < 4; ++t) CHECK(out[static_cast<std::size_t>(t)].fcd_speed.empty());
  CHECK(out[4].fcd_refreshed);
  CHECK(out[4].fcd_speed.at(0) == Approx(0.35).epsilon(1e-14));
  for (int t = 5; t < 8; ++t) {
    CHECK_FALSE(out[static_cast<std::size_t>(t)].fcd_refreshed);
    CHECK(out[static_cast<std::size_t>(t)].fcd_speed.at(0) == out[4].fcd_speed.at(0));
  }
  CHECK(out[8].fcd_speed.at(0) == Approx(0.1).epsilon(1e-14));
  CHECK_THROWS_AS(synth.measure(3, Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()),
                  OutOfRange);
}

TEST_CASE("near-empty cells report free-flow speed", "[simulator]") {
  const auto fd = make_diagram(20, 7.5, 250);
  CHECK(cell_speed(0.0, 0.0, fd) == fd.v_ff);
  CHECK(cell_speed(0.01, 0.1, fd) == fd.v_ff);
  CHECK(cell_speed(3.0, 60.0, fd) == Approx(0.05));
}

TEST_CASE("same seed, same noise", "[simulator]") {
  const auto net = build_network(grid_network());
  const auto fds = uniform(net);
  std::vector<DemandProfile> demand;
  for (auto e : net.onramps()) demand.push_back({e, {{0, 1.0}}});
  const auto traj = simulate(net, fds, demand, zeros(net), 60);
  std::vector<std::size_t> layout{0, 3, 7, 12};
  const SensorNoiseModel noise{0.3, 2.0, 0.05, 42};
  const auto a = measure_all(net, fds, traj, layout, {}, noise);
  const auto b = measure_all(net, fds, traj, layout, {}, noise);
  const auto c = measure_all(net, fds, traj, layout, {}, {0.3, 2.0, 0.05, 43});
  bool differs = false;
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].flow_meas == b[t].flow_meas);
    CHECK(a[t].density_meas == b[t].density_meas);
    CHECK(a[t].fcd_speed == b[t].fcd_speed);
    differs = differs || a[t].flow_meas != c[t].flow_meas;
  }
  CHECK(differs);
}
