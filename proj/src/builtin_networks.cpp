#include "roadsense/builtin_networks.hpp"

#include "roadsense/errors.hpp"

#include <algorithm>
#include <charconv>

namespace roadsense {

NetworkDescription grid_network() {
  constexpr int kSide = 5;
  auto id = [](int row, int col) { return row * kSide + col; };
  const std::vector<std::pair<int, int>> onramps{{0, 0}, {0, 1}, {0, 4}, {2, 0}};

  NetworkDescription d;
  d.cells.resize(kSide * kSide);
  for (int row = 0; row < kSide; ++row) {
    for (int col = 0; col < kSide; ++col) {
      Cell& c = d.cells[static_cast<std::size_t>(id(row, col))];
      c.id = id(row, col);
      c.length_km = 0.5;
      c.speed_limit_km_per_step = 0.5;
      c.segment_id = row;
    }
  }
  for (auto [row, col] : onramps) d.cells[static_cast<std::size_t>(id(row, col))].kind = CellKind::Onramp;
  auto is_onramp = [&](int row, int col) {
    return d.cells[static_cast<std::size_t>(id(row, col))].kind == CellKind::Onramp;
  };

  for (int row = 0; row < kSide; ++row) {
    for (int col = 0; col < kSide; ++col) {
      std::vector<int> outs;
      if (col + 1 < kSide && !is_onramp(row, col + 1)) outs.push_back(id(row, col + 1));
      if (row + 1 < kSide && !is_onramp(row + 1, col)) outs.push_back(id(row + 1, col));
      const bool exits = (row == kSide - 1 || col == kSide - 1) && !is_onramp(row, col);
      if (exits) d.cells[static_cast<std::size_t>(id(row, col))].kind = CellKind::Offramp;
      const double share = 1.0 / static_cast<double>(outs.size() + (exits ? 1 : 0));
      for (int to : outs) d.splits.push_back({id(row, col), to, share});
    }
  }
  return d;
}

NetworkDescription rocade_network() {
  constexpr int kSections = 22;
  const std::vector<int> triples{10, 21};
  const std::vector<int> exits{2, 4, 7, 9, 12, 14, 16, 18};
  auto contains = [](const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };

  NetworkDescription d;
  std::vector<std::vector<int>> sections;
  int next = 0;
  for (int s = 0; s < kSections; ++s) {
    const int lanes = contains(triples, s) ? 3 : 2;
    std::vector<int> ids;
    for (int i = 0; i < lanes; ++i) {
      Cell c;
      c.id = next++;
      c.length_km = 0.5;
      c.speed_limit_km_per_step = 0.375;  // 90 km/h over 15 s
      c.segment_id = s;
      c.kind = s == 0 ? CellKind::Onramp : CellKind::Internal;
      d.cells.push_back(c);
      ids.push_back(c.id);
    }
    sections.push_back(ids);
  }
  for (int id : sections.back()) d.cells[static_cast<std::size_t>(id)].kind = CellKind::Offramp;

  for (int s = 0; s + 1 < kSections; ++s) {
    const auto& from = sections[static_cast<std::size_t>(s)];
    const auto& to = sections[static_cast<std::size_t>(s + 1)];
    for (std::size_t i = 0; i < from.size(); ++i) {
      const int e = from[i];
      double keep = 1.0;
      if (i == 0 && contains(exits, s)) {
        keep = 0.8;
        d.cells[static_cast<std::size_t>(e)].kind = CellKind::Offramp;
      }
      if (to.size() == 3) {
        for (int k : to) d.splits.push_back({e, k, keep / 3.0});
      } else if (from.size() == 3 && i == 1) {
        d.splits.push_back({e, to[0], keep / 2.0});
        d.splits.push_back({e, to[1], keep / 2.0});
      } else {
        // Slow lane keeps to the slow lane, the fast (or outer) lane to the fast one.
        const std::size_t own = i == 0 ? 0 : 1;
        d.splits.push_back({e, to[own], 0.7 * keep});
        d.splits.push_back({e, to[1 - own], 0.3 * keep});
      }
    }
  }
  d.lane_groups = sections;
  return d;
}

NetworkDescription chain_network(int n, double length_km, double speed_limit_km_per_step) {
  if (n < 2) throw MalformedSpec("a chain needs at least two cells");
  NetworkDescription d;
  for (int i = 0; i < n; ++i) {
    Cell c;
    c.id = i;
    c.length_km = length_km;
    c.speed_limit_km_per_step = speed_limit_km_per_step;
    c.segment_id = i / 2;
    c.kind = i == 0 ? CellKind::Onramp : (i == n - 1 ? CellKind::Offramp : CellKind::Internal);
    d.cells.push_back(c);
    if (i + 1 < n) d.splits.push_back({i, i + 1, 1.0});
  }
  return d;
}

NetworkDescription builtin_network(const std::string& name) {
  if (name == "grid25") return grid_network();
  if (name == "rocade46") return rocade_network();
  if (name.rfind("chain", 0) == 0) {
    int n = 0;
    const char* first = name.data() + 5;
    const char* last = name.data() + name.size();
    auto [ptr, ec] = std::from_chars(first, last, n);
    if (ec == std::errc() && ptr == last && n >= 2) return chain_network(n);
  }
  throw MalformedSpec("unknown builtin network '" + name + "'");
}

std::vector<std::string> builtin_network_names() { return {"grid25", "rocade46", "chain<N>"}; }

}  // namespace roadsense
