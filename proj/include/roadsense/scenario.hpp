#pragma once

#include "roadsense/fundamental_diagram.hpp"
#include "roadsense/json_locator.hpp"
#include "roadsense/network.hpp"
#include "roadsense/observer.hpp"
#include "roadsense/placement.hpp"
#include "roadsense/simulator.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace roadsense {

struct PlacementConfig {
  SensorModel model;
  PlacementWeights weights;
  std::optional<GeoConstraints> constraints;  // cell indices
  int n_max = 0;
  int t_max = 20;
  double growth = 1.6;
  double gamma0 = 0.2;
  int h_lo = 0;
  int h_hi = 0;
};

struct CalibrationConfig {
  CriticalFitOptions fit;
  double rho_crit0 = 20.0;  // capacity0 = speed limit · rho_crit0 per cell
};

/// Fully resolved scenario document. Cell references are stored as indices
/// into the network; the JSON form uses cell ids.
struct Scenario {
  std::string source;            // file name used in diagnostics
  NetworkDescription network_description;
  std::string builtin;           // non-empty when the network is a builtin
  Diagrams diagrams;             // per cell index
  std::vector<DemandProfile> demand;
  Eigen::VectorXd initial_density;
  SensorNoiseModel noise;
  std::vector<std::size_t> layout;
  std::vector<std::size_t> inflow_layout;
  int horizon_steps = 1;
  int steps_per_day = 1;
  int transient_steps = 0;
  ObserverConfig observer;
  std::string observer_initial = "zero";  // "zero" or "truth"
  PlacementConfig placement;
  CalibrationConfig calibration;

  TrafficNetwork network() const;
};

/// Parses and validates a scenario. Schema problems raise MalformedSpec,
/// RowSumViolation or ConnectivityViolation with "source:line: /pointer:"
/// prefixes; out-of-range values in the document are reported the same way
/// (MalformedSpec) so that every problem carries its location.
Scenario parse_scenario(const std::string& text, const std::string& source = "scenario");
Scenario load_scenario(const std::filesystem::path& path);

/// Canonical document: every default filled in, re-parses to the same scenario.
nlohmann::json resolved_document(const Scenario& scenario);

/// Network description alone (the "network" member of a scenario).
NetworkDescription parse_network(const nlohmann::json& doc, const JsonLocator& locator,
                                 const std::string& source, const std::string& pointer,
                                 std::string* builtin = nullptr);

nlohmann::json network_document(const NetworkDescription& d);
nlohmann::json diagram_document(const FundamentalDiagram& fd);

}  // namespace roadsense
