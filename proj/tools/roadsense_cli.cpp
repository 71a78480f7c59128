// roadsense: simulate, calibrate, reconstruct and place sensors on CTM networks.

#include "roadsense/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Flags {
  std::string scenario;
  std::string out;
  std::uint64_t seed = 0;
  std::string mode = "unconstrained";
  double gamma = 0.0;
  double kappa = 0.0;
  double threshold = 0.0;
  double growth = 0.0;
  int n_max = 0;
  int t_max = 0;
  std::string h_range;
  std::string traces;
  std::string diagrams;
  std::string cells = "all";
  std::string metadata;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Traffic state estimation and sensor placement on cell transmission networks", "roadsense"};
  app.set_version_flag("--version", std::string(roadsense::kToolVersion));
  app.require_subcommand(1);

  Flags f;
  auto common = [&f](CLI::App* sub, bool scenario_required) {
    auto* s = sub->add_option("--scenario", f.scenario, "Scenario JSON file");
    if (scenario_required) s->required();
    sub->add_option("--out", f.out, "Output directory")->required();
    sub->add_option("--seed", f.seed, "Override the noise seed");
  };

  auto* simulate = app.add_subcommand("simulate", "Ground-truth CTM run plus synthetic measurements");
  common(simulate, true);

  auto* calibrate = app.add_subcommand("calibrate", "Fit fundamental diagrams to measured traces");
  common(calibrate, true);
  calibrate->add_option("--traces", f.traces, "Directory written by simulate")->required();
  calibrate->add_option("--cells", f.cells, "'all' or comma-separated cell ids");

  auto* reconstruct = app.add_subcommand("reconstruct", "Run the state observer on measured traces");
  common(reconstruct, true);
  reconstruct->add_option("--traces", f.traces, "Directory written by simulate")->required();
  reconstruct->add_option("--diagrams", f.diagrams, "diagrams.json written by calibrate");

  auto* place = app.add_subcommand("place", "Sensor placement");
  common(place, true);
  place->add_option("--mode", f.mode, "unconstrained | geo | budget | exhaustive")
      ->check(CLI::IsMember({"unconstrained", "geo", "budget", "exhaustive"}));

  auto* grid = app.add_subcommand("grid-experiment", "Exhaustive sweep vs. virtual variance on the 25-cell grid");
  common(grid, false);

  for (auto* sub : {place, grid}) {
    sub->add_option("--gamma", f.gamma, "Sensor cost weight");
    sub->add_option("--kappa", f.kappa, "Discrepancy weight");
    sub->add_option("--threshold", f.threshold, "Discard threshold on virtual variances");
    sub->add_option("--h-range", f.h_range, "Exhaustive sensor counts, a..b");
  }
  place->add_option("--n-max", f.n_max, "Budget: maximum sensor count");
  place->add_option("--t-max", f.t_max, "Budget: maximum iterations");
  place->add_option("--growth", f.growth, "Budget: gamma growth factor");

  auto* replay = app.add_subcommand("replay", "Re-run a command from its metadata.json");
  replay->add_option("metadata", f.metadata, "metadata.json of a previous run")->required();
  replay->add_option("--out", f.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (replay->parsed()) {
      roadsense::replay_command(f.metadata, f.out);
      return 0;
    }
    CLI::App* sub = app.get_subcommands().front();
    roadsense::CommandOptions o;
    o.command = sub->get_name();
    o.scenario = f.scenario;
    o.out = f.out;
    auto given = [sub](const char* name) {
      const auto* opt = sub->get_option_no_throw(name);
      return opt && opt->count() > 0;
    };
    if (given("--seed")) o.seed = f.seed;
    if (o.command == "place") o.mode = f.mode;
    if (given("--gamma")) o.gamma = f.gamma;
    if (given("--kappa")) o.kappa = f.kappa;
    if (given("--threshold")) o.threshold = f.threshold;
    if (given("--growth")) o.growth = f.growth;
    if (given("--n-max")) o.n_max = f.n_max;
    if (given("--t-max")) o.t_max = f.t_max;
    if (given("--h-range")) o.h_range = roadsense::parse_h_range(f.h_range);
    o.traces = f.traces;
    o.diagrams = f.diagrams;
    if (o.command == "calibrate") o.cells = roadsense::parse_cell_list(f.cells);
    roadsense::run_command(o);
    return 0;
  } catch (const roadsense::Error& e) {
    std::cerr << "roadsense: error: " << e.what() << '\n';
    return roadsense::exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "roadsense: internal error: " << e.what() << '\n';
    return 1;
  }
}
