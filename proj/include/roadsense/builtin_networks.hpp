#pragma once

#include "roadsense/network.hpp"

#include <string>
#include <vector>

namespace roadsense {

/// 5×5 lattice, flows to the right and downward with uniform splits; cells on
/// the east/south boundary also discharge (the exit counts as one more
/// branch). Onramps at (row, col) = (0,0), (0,1), (0,4), (2,0); an onramp on
/// the boundary sends everything into the lattice. Cell id = 5·row + col,
/// one FCD segment per row.
NetworkDescription grid_network();

/// Two-lane ring-road stretch: 22 sections of two lanes (three at sections 10
/// and 21), 46 cells. Lane changes follow a 70/30 rule, flow into a
/// three-lane section spreads evenly, the middle lane of a three-lane section
/// splits 50/50. The slow lane of sections 2, 4, 7, 9, 12, 14, 16, 18 sends
/// 20% to an exit; the last section discharges fully. Section 0 holds the two
/// onramps. Each section is one FCD segment and one all-or-none sensor group.
NetworkDescription rocade_network();

/// Single-lane chain of n cells: onramp first, discharging offramp last.
/// Two cells per FCD segment.
NetworkDescription chain_network(int n, double length_km = 0.5,
                                 double speed_limit_km_per_step = 0.375);

/// "grid25", "rocade46" or "chain<N>"; throws MalformedSpec otherwise.
NetworkDescription builtin_network(const std::string& name);

std::vector<std::string> builtin_network_names();

}  // namespace roadsense
