#include "roadsense/builtin_networks.hpp"
#include "roadsense/errors.hpp"
#include "roadsense/network.hpp"

#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <numeric>

using namespace roadsense;
using Catch::Approx;

namespace {

NetworkDescription two_cell_chain() {
  NetworkDescription d;
  d.cells = {{1, 0.5, CellKind::Onramp, 0, 0.375}, {2, 0.5, CellKind::Offramp, 0, 0.375}};
  d.splits = {{1, 2, 1.0}};
  return d;
}

NetworkDescription fork_network() {
  NetworkDescription d;
  d.cells = {{1, 0.5, CellKind::Onramp, 0, 0.375},
             {2, 0.5, CellKind::Offramp, 0, 0.375},
             {3, 0.5, CellKind::Offramp, 0, 0.375}};
  d.splits = {{1, 2, 0.5}, {1, 3, 0.5}};
  return d;
}

TrafficNetwork raw(const NetworkDescription& d) {
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.cells.size()),
                                            static_cast<Eigen::Index>(d.cells.size()));
  for (const auto& s : d.splits) {
    Eigen::Index from = 0, to = 0;
    for (std::size_t i = 0; i < d.cells.size(); ++i) {
      if (d.cells[i].id == s.from_id) from = static_cast<Eigen::Index>(i);
      if (d.cells[i].id == s.to_id) to = static_cast<Eigen::Index>(i);
    }
    R(from, to) += s.ratio;
  }
  return TrafficNetwork(d.cells, R, d.sample_period_s, d.fcd_period_steps);
}

std::vector<bool> kinds(const TrafficNetwork& net, CellKind k) {
  std::vector<bool> out;
  for (const auto& c : net.cells()) out.push_back(c.kind == k);
  return out;
}

}  // namespace

TEST_CASE("smallest legal network", "[network]") {
  const auto net = build_network(two_cell_chain());
  CHECK(net.size() == 2);
  CHECK(net.onramps().size() == 1);
  const auto lap = reduced_laplacian(net);
  REQUIRE(lap.matrix.rows() == 1);
  CHECK(lap.matrix(0, 0) == 1.0);
  CHECK(lap.matrix(0, 1) == -1.0);
}

TEST_CASE("row sums above one are rejected", "[network]") {
  auto d = fork_network();
  d.cells[0].kind = CellKind::Internal;
  d.cells.insert(d.cells.begin(), Cell{0, 0.5, CellKind::Onramp, 0, 0.375});
  d.splits.push_back({0, 1, 1.0});
  d.splits[1].ratio = 0.7;  // 0.5 + 0.7 = 1.2 out of internal cell 1
  CHECK_THROWS_AS(build_network(d), RowSumViolation);
}

TEST_CASE("structural errors", "[network]") {
  auto neg = two_cell_chain();
  neg.cells[1].length_km = -1.0;
  CHECK_THROWS_AS(build_network(neg), MalformedSpec);

  auto loop = two_cell_chain();
  loop.cells.push_back({3, 0.5, CellKind::Offramp, 0, 0.375});
  loop.cells[1].kind = CellKind::Internal;
  loop.splits.push_back({2, 2, 0.5});
  loop.splits.push_back({2, 3, 0.5});
  CHECK_THROWS_AS(build_network(loop), MalformedSpec);

  auto into_onramp = fork_network();
  into_onramp.splits.push_back({2, 1, 0.5});
  CHECK_THROWS_AS(build_network(into_onramp), MalformedSpec);

  auto dup = two_cell_chain();
  dup.cells[1].id = 1;
  CHECK_THROWS_AS(build_network(dup), MalformedSpec);

  auto internal_short = two_cell_chain();
  internal_short.cells.push_back({3, 0.5, CellKind::Offramp, 0, 0.375});
  internal_short.cells[1].kind = CellKind::Internal;
  internal_short.splits.push_back({2, 3, 0.9});
  CHECK_THROWS_AS(build_network(internal_short), RowSumViolation);
}

TEST_CASE("rocade-like network is valid", "[network]") {
  const auto net = build_network(rocade_network());
  CHECK(net.size() == 46);
  CHECK(net.onramps().size() == 2);
  CHECK(check_connectivity(net).connected);
  // 70/30 lane change on a plain two-lane section
  const auto& R = net.splitting();
  CHECK(R(net.index_of(2), net.index_of(4)) == Approx(0.7));
  CHECK(R(net.index_of(2), net.index_of(5)) == Approx(0.3));
}

TEST_CASE("connectivity predicate", "[network]") {
  NetworkDescription d;
  d.cells = {{1, 0.5, CellKind::Onramp, 0, 0.375},
             {2, 0.5, CellKind::Internal, 0, 0.375},
             {3, 0.5, CellKind::Offramp, 0, 0.375}};
  d.splits = {{1, 2, 1.0}, {2, 3, 1.0}};
  CHECK(check_connectivity(build_network(d)).connected);

  d.cells.push_back({4, 0.5, CellKind::Internal, 0, 0.375});
  d.splits.push_back({4, 3, 1.0});
  const auto report = check_connectivity(raw(d));
  CHECK_FALSE(report.connected);
  CHECK(report.violating_cells == std::vector<std::size_t>{3});
  CHECK_THROWS_AS(build_network(d), ConnectivityViolation);
}

TEST_CASE("grid connectivity agrees with a BFS oracle", "[network]") {
  const auto net = build_network(grid_network());
  CHECK(net.size() == 25);
  const auto ok = testing::bfs_on_some_path(net.splitting(), kinds(net, CellKind::Onramp),
                                            kinds(net, CellKind::Offramp));
  CHECK(std::all_of(ok.begin(), ok.end(), [](bool b) { return b; }));
  CHECK(check_connectivity(net).connected);
}

TEST_CASE("connectivity matches BFS on random perturbed networks", "[network][property]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto d = testing::random_network(rng, 4, 20, 1, 4);
    // Drop a random split; its source becomes an offramp (row sums <= 1 are
    // legal there) so the result is structurally valid but may be disconnected.
    if (!d.splits.empty()) {
      const auto k = std::uniform_int_distribution<std::size_t>(0, d.splits.size() - 1)(rng);
      auto& from = d.cells[static_cast<std::size_t>(d.splits[k].from_id)];
      if (from.kind == CellKind::Onramp) continue;
      from.kind = CellKind::Offramp;
      d.splits.erase(d.splits.begin() + static_cast<long>(k));
    }
    std::unique_ptr<TrafficNetwork> net;
    try {
      net = std::make_unique<TrafficNetwork>(raw(d));
    } catch (const Error&) {
      continue;
    }
    const auto ok = testing::bfs_on_some_path(net->splitting(), kinds(*net, CellKind::Onramp),
                                              kinds(*net, CellKind::Offramp));
    const auto report = check_connectivity(*net);
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < ok.size(); ++i) {
      if (!ok[i]) expected.push_back(i);
    }
    CHECK(report.violating_cells == expected);
    CHECK(report.connected == expected.empty());
  }
}

TEST_CASE("reduced laplacian of a fork", "[network]") {
  const auto lap = reduced_laplacian(build_network(fork_network()));
  Eigen::MatrixXd expected(2, 3);
  expected << 0.5, -1, 0, 0.5, 0, -1;
  CHECK((lap.matrix - expected).norm() == 0.0);
  CHECK(lap.row_cells == std::vector<std::size_t>{1, 2});
}

TEST_CASE("network without onramps", "[network]") {
  NetworkDescription d;
  d.cells = {{1, 0.5, CellKind::Internal, 0, 0.375}, {2, 0.5, CellKind::Offramp, 0, 0.375}};
  d.splits = {{1, 2, 1.0}};
  const auto net = raw(d);
  const auto lap = reduced_laplacian(net);
  CHECK(lap.matrix.rows() == 2);
  CHECK_THROWS_AS(kernel_basis(lap), RankDeficiency);
}

TEST_CASE("kernel of a single-onramp chain is the constant vector", "[network]") {
  for (int n : {2, 3, 7, 20}) {
    const auto V = kernel_basis(reduced_laplacian(build_network(chain_network(n)))).V;
    REQUIRE(V.cols() == 1);
    for (Eigen::Index i = 0; i < n; ++i) CHECK(V(i, 0) == Approx(1.0 / std::sqrt(n)).epsilon(1e-12));
  }
}

TEST_CASE("disjoint chains give a block-structured basis", "[network]") {
  NetworkDescription d = chain_network(3);
  auto second = chain_network(4);
  for (auto c : second.cells) {
    c.id += 10;
    d.cells.push_back(c);
  }
  for (auto s : second.splits) d.splits.push_back({s.from_id + 10, s.to_id + 10, s.ratio});
  const auto V = kernel_basis(reduced_laplacian(build_network(d))).V;
  REQUIRE(V.cols() == 2);
  // each column lives on exactly one chain
  for (Eigen::Index k = 0; k < 2; ++k) {
    const double a = V.col(k).head(3).norm();
    const double b = V.col(k).tail(4).norm();
    CHECK(std::min(a, b) < 1e-12);
    CHECK(std::max(a, b) == Approx(1.0));
  }
}

TEST_CASE("grid kernel matches a LU null-space oracle", "[network]") {
  const auto net = build_network(grid_network());
  const auto lap = reduced_laplacian(net);
  const auto V = kernel_basis(lap).V;
  CHECK(V.cols() == static_cast<Eigen::Index>(net.onramps().size()));
  CHECK(testing::subspace_gap(V, testing::lu_kernel(lap.matrix)) <= 1e-8);
}

TEST_CASE("kernel basis invariants on random networks", "[network][property]") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const auto net = build_network(testing::random_network(rng, 5, 40, 1, 6));
    const auto lap = reduced_laplacian(net);
    const auto r = static_cast<Eigen::Index>(net.onramps().size());

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(lap.matrix);
    const auto sv = svd.singularValues();
    CHECK((sv.array() > kKernelRankTolerance).count() == lap.matrix.rows());

    Eigen::MatrixXd Lnn(lap.matrix.rows(), lap.matrix.rows());
    Eigen::Index col = 0;
    for (std::size_t e = 0; e < net.size(); ++e) {
      if (!net.is_onramp(e)) Lnn.col(col++) = lap.matrix.col(static_cast<Eigen::Index>(e));
    }
    CHECK(Eigen::JacobiSVD<Eigen::MatrixXd>(Lnn).singularValues().minCoeff() > 1e-10);

    const auto V = kernel_basis(lap).V;
    REQUIRE(V.cols() == r);
    CHECK((lap.matrix * V).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((V.transpose() * V - Eigen::MatrixXd::Identity(r, r)).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(testing::subspace_gap(V, testing::lu_kernel(lap.matrix)) <= 1e-8);

    // span idempotence: re-orthonormalising V keeps the subspace
    const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(V).householderQ() *
                              Eigen::MatrixXd::Identity(V.rows(), r);
    CHECK(testing::subspace_gap(V, Q) <= 1e-10);

    // determinism
    CHECK(kernel_basis(lap).V == V);
  }
}

TEST_CASE("relabelling cells permutes R and the laplacian", "[network][property]") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = testing::random_network(rng, 5, 25, 1, 4);
    const auto net = build_network(d);
    std::vector<std::size_t> perm(d.cells.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    NetworkDescription p = d;
    for (std::size_t i = 0; i < perm.size(); ++i) p.cells[i] = d.cells[perm[i]];
    const auto pnet = build_network(p);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      for (std::size_t j = 0; j < perm.size(); ++j) {
        CHECK(pnet.splitting()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) ==
              net.splitting()(static_cast<Eigen::Index>(perm[i]), static_cast<Eigen::Index>(perm[j])));
      }
    }
    const auto V = kernel_basis(reduced_laplacian(net)).V;
    const auto PV = kernel_basis(reduced_laplacian(pnet)).V;
    Eigen::MatrixXd back(PV.rows(), PV.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) back.row(static_cast<Eigen::Index>(perm[i])) = PV.row(static_cast<Eigen::Index>(i));
    CHECK(testing::subspace_gap(V, back) <= 1e-9);
  }
}

TEST_CASE("column sign convention", "[network]") {
  Eigen::MatrixXd m(3, 2);
  m << 0.1, 2.0, -0.9, -2.0, 0.3, 0.5;
  fix_column_signs(m);
  CHECK(m(1, 0) == 0.9);   // largest magnitude made positive
  CHECK(m(0, 1) == 2.0);   // tie: first entry wins
  CHECK(m(1, 1) == -2.0);
}
