#include "roadsense/commands.hpp"

#include "roadsense/builtin_networks.hpp"
#include "roadsense/csv.hpp"
#include "roadsense/fundamental_diagram.hpp"
#include "roadsense/network.hpp"
#include "roadsense/observer.hpp"
#include "roadsense/placement.hpp"
#include "roadsense/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace roadsense {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::Schema: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Solver: return 4;
    case ErrorCategory::Infeasible: return 5;
  }
  return 1;
}

LogLevel log_level() {
  const char* env = std::getenv("ROADSENSE_LOG");
  if (!env) return LogLevel::Warn;
  const std::string v(env);
  if (v == "error" || v == "quiet") return LogLevel::Error;
  if (v == "info") return LogLevel::Info;
  if (v == "debug") return LogLevel::Debug;
  return LogLevel::Warn;
}

void log_message(LogLevel level, const std::string& text) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  static const char* names[] = {"error", "warning", "info", "debug"};
  std::cerr << kToolName << ": " << names[static_cast<int>(level)] << ": " << text << '\n';
}

std::pair<int, int> parse_h_range(const std::string& text) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) throw MalformedSpec("--h-range expects a..b, got '" + text + "'");
  try {
    std::size_t p1 = 0;
    std::size_t p2 = 0;
    const std::string a = text.substr(0, dots);
    const std::string b = text.substr(dots + 2);
    const int lo = std::stoi(a, &p1);
    const int hi = std::stoi(b, &p2);
    if (p1 != a.size() || p2 != b.size() || lo < 1 || hi < lo) throw std::invalid_argument(text);
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw MalformedSpec("--h-range expects a..b with 1 <= a <= b, got '" + text + "'");
  }
}

std::optional<std::vector<int>> parse_cell_list(const std::string& text) {
  if (text == "all") return std::nullopt;
  std::vector<int> ids;
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (tok.empty()) continue;
    try {
      std::size_t pos = 0;
      ids.push_back(std::stoi(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::logic_error&) {
      throw MalformedSpec("--cells expects 'all' or comma-separated cell ids, got '" + text + "'");
    }
  }
  return ids;
}

json options_document(const CommandOptions& o) {
  json doc = json::object();
  doc["command"] = o.command;
  if (!o.scenario.empty()) doc["scenario"] = o.scenario.string();
  if (o.seed) doc["seed"] = *o.seed;
  if (o.command == "place") doc["mode"] = o.mode;
  if (o.gamma) doc["gamma"] = *o.gamma;
  if (o.kappa) doc["kappa"] = *o.kappa;
  if (o.threshold) doc["threshold"] = *o.threshold;
  if (o.growth) doc["growth"] = *o.growth;
  if (o.n_max) doc["n_max"] = *o.n_max;
  if (o.t_max) doc["t_max"] = *o.t_max;
  if (o.h_range) doc["h_range"] = {o.h_range->first, o.h_range->second};
  if (!o.traces.empty()) doc["traces"] = o.traces.string();
  if (!o.diagrams.empty()) doc["diagrams"] = o.diagrams.string();
  if (o.cells) doc["cells"] = *o.cells;
  return doc;
}

CommandOptions options_from_document(const json& doc) {
  try {
    CommandOptions o;
    o.command = doc.at("command").get<std::string>();
    if (doc.contains("scenario")) o.scenario = doc.at("scenario").get<std::string>();
    if (doc.contains("seed")) o.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("mode")) o.mode = doc.at("mode").get<std::string>();
    if (doc.contains("gamma")) o.gamma = doc.at("gamma").get<double>();
    if (doc.contains("kappa")) o.kappa = doc.at("kappa").get<double>();
    if (doc.contains("threshold")) o.threshold = doc.at("threshold").get<double>();
    if (doc.contains("growth")) o.growth = doc.at("growth").get<double>();
    if (doc.contains("n_max")) o.n_max = doc.at("n_max").get<int>();
    if (doc.contains("t_max")) o.t_max = doc.at("t_max").get<int>();
    if (doc.contains("h_range")) {
      o.h_range = std::make_pair(doc.at("h_range").at(0).get<int>(), doc.at("h_range").at(1).get<int>());
    }
    if (doc.contains("traces")) o.traces = doc.at("traces").get<std::string>();
    if (doc.contains("diagrams")) o.diagrams = doc.at("diagrams").get<std::string>();
    if (doc.contains("cells")) o.cells = doc.at("cells").get<std::vector<int>>();
    return o;
  } catch (const json::exception& e) {
    throw MalformedSpec(std::string("metadata options: ") + e.what());
  }
}

namespace {

std::vector<int> ids_of(const TrafficNetwork& net, const std::vector<std::size_t>& cells) {
  std::vector<int> ids;
  for (auto e : cells) ids.push_back(net.cell(e).id);
  return ids;
}

std::vector<int> all_ids(const TrafficNetwork& net) {
  std::vector<int> ids;
  for (const auto& c : net.cells()) ids.push_back(c.id);
  return ids;
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MalformedSpec("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedSpec("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  try {
    return json::parse(os.str());
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(os.str(), e.byte == 0 ? 0 : e.byte - 1);
    throw MalformedSpec(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                        ": invalid JSON");
  }
}

void write_metadata(const fs::path& out, const CommandOptions& opts, const Scenario* sc) {
  json meta;
  meta["tool"] = kToolName;
  meta["version"] = kToolVersion;
  meta["command"] = opts.command;
  meta["options"] = options_document(opts);
  if (sc) meta["scenario"] = resolved_document(*sc);
  write_json(out / "metadata.json", meta);
}

// Command-line overrides of scenario values.
void apply_overrides(Scenario& sc, const CommandOptions& o) {
  if (o.seed) sc.noise.seed = *o.seed;
  auto& p = sc.placement;
  if (o.gamma) {
    if (!(*o.gamma >= 0.0)) throw MalformedSpec("--gamma must be non-negative");
    p.weights.gamma = *o.gamma;
  }
  if (o.kappa) {
    if (!(*o.kappa >= 0.0)) throw MalformedSpec("--kappa must be non-negative");
    p.weights.discrepancy_kappa = *o.kappa;
  }
  if (o.threshold) {
    if (!(*o.threshold > p.model.sigma_nom_sq)) throw MalformedSpec("--threshold must exceed sigma_nom_sq");
    p.weights.discard_threshold = *o.threshold;
  }
  if (o.growth) {
    if (!(*o.growth > 1.0)) throw MalformedSpec("--growth must exceed 1");
    p.growth = *o.growth;
  }
  if (o.n_max) p.n_max = *o.n_max;
  if (o.t_max) {
    if (*o.t_max < 0) throw MalformedSpec("--t-max must be >= 0");
    p.t_max = *o.t_max;
  }
  if (o.h_range) {
    p.h_lo = o.h_range->first;
    p.h_hi = o.h_range->second;
  }
}

// ---------------------------------------------------------------- traces

struct WideTable {
  std::vector<int> ids;
  std::vector<int> steps;
  Eigen::MatrixXd values;
};

CsvTable wide_table(const std::vector<int>& steps, const std::vector<int>& ids,
                    const Eigen::MatrixXd& values, const std::string& prefix,
                    const std::string& unit) {
  CsvTable t;
  t.add_column("t", "step");
  for (int id : ids) t.add_column(prefix + std::to_string(id), unit);
  for (std::size_t r = 0; r < steps.size(); ++r) {
    std::vector<std::string> row{std::to_string(steps[r])};
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      row.push_back(format_number(values(static_cast<Eigen::Index>(r), c)));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

WideTable read_wide(const fs::path& path, const std::string& prefix) {
  const CsvTable t = read_csv(path);
  WideTable w;
  if (t.names.empty() || t.names[0] != "t") throw MalformedSpec(path.string() + ": first column must be t");
  for (std::size_t i = 1; i < t.names.size(); ++i) {
    if (t.names[i].rfind(prefix, 0) != 0) {
      throw MalformedSpec(path.string() + ":1: unexpected column '" + t.names[i] + "'");
    }
    w.ids.push_back(static_cast<int>(parse_number(t.names[i].substr(prefix.size()))));
  }
  w.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(w.ids.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    w.steps.push_back(static_cast<int>(parse_number(t.rows[r][0])));
    for (std::size_t c = 0; c < w.ids.size(); ++c) {
      w.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = parse_number(t.rows[r][c + 1]);
    }
  }
  return w;
}

std::vector<int> step_range(int first, int count) {
  std::vector<int> s(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) s[static_cast<std::size_t>(i)] = first + i;
  return s;
}

Eigen::MatrixXd batch_matrix(const std::vector<MeasurementBatch>& batches,
                             const std::vector<std::size_t>& cells,
                             std::map<std::size_t, double> MeasurementBatch::*field) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(batches.size()), static_cast<Eigen::Index>(cells.size()));
  for (std::size_t t = 0; t < batches.size(); ++t) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = (batches[t].*field).at(cells[c]);
    }
  }
  return m;
}

void write_traces(const fs::path& dir, const TrafficNetwork& net, const Trajectory& traj,
                  const std::vector<MeasurementBatch>& batches, const Scenario& sc) {
  const auto ids = all_ids(net);
  write_csv(dir / "truth_density.csv", matrix_table(traj.density, ids, "veh/km"));
  write_csv(dir / "truth_outflow.csv", matrix_table(traj.outflow, ids, "veh/period"));
  write_csv(dir / "truth_inflow.csv", matrix_table(traj.inflow, ids, "veh/period"));
  write_csv(dir / "truth_admitted.csv", matrix_table(traj.admitted, ids, "veh/period"));

  const auto steps = step_range(0, static_cast<int>(batches.size()));
  write_csv(dir / "meas_flow.csv",
            wide_table(steps, ids_of(net, sc.layout),
                       batch_matrix(batches, sc.layout, &MeasurementBatch::flow_meas), "cell_",
                       "veh/period"));
  write_csv(dir / "meas_density.csv",
            wide_table(steps, ids_of(net, sc.layout),
                       batch_matrix(batches, sc.layout, &MeasurementBatch::density_meas), "cell_",
                       "veh/km"));
  write_csv(dir / "meas_inflow.csv",
            wide_table(steps, ids_of(net, sc.inflow_layout),
                       batch_matrix(batches, sc.inflow_layout, &MeasurementBatch::inflow_meas),
                       "cell_", "veh/period"));

  std::vector<int> segs;
  for (const auto& [seg, cells] : net.segments()) segs.push_back(seg);
  std::vector<int> fcd_steps;
  std::vector<std::vector<double>> rows;
  for (const auto& b : batches) {
    if (!b.fcd_refreshed) continue;
    fcd_steps.push_back(b.t);
    std::vector<double> row;
    for (int s : segs) row.push_back(b.fcd_speed.at(s));
    rows.push_back(row);
  }
  Eigen::MatrixXd fcd(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(segs.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < segs.size(); ++c) fcd(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  write_csv(dir / "meas_fcd.csv", wide_table(fcd_steps, segs, fcd, "segment_", "km/period"));
}

std::vector<std::size_t> indices_of(const TrafficNetwork& net, const std::vector<int>& ids,
                                    const fs::path& source) {
  std::vector<std::size_t> out;
  for (int id : ids) {
    if (!net.has_id(id)) throw MalformedSpec(source.string() + ": unknown cell id " + std::to_string(id));
    out.push_back(net.index_of(id));
  }
  return out;
}

std::vector<MeasurementBatch> read_batches(const fs::path& dir, const TrafficNetwork& net) {
  const auto flow = read_wide(dir / "meas_flow.csv", "cell_");
  const auto dens = read_wide(dir / "meas_density.csv", "cell_");
  const auto inflow = read_wide(dir / "meas_inflow.csv", "cell_");
  const auto fcd = read_wide(dir / "meas_fcd.csv", "segment_");
  const auto horizon = flow.steps.size();
  if (dens.steps.size() != horizon || inflow.steps.size() != horizon) {
    throw MalformedSpec(dir.string() + ": measurement files differ in length");
  }
  const auto flow_cells = indices_of(net, flow.ids, dir / "meas_flow.csv");
  const auto dens_cells = indices_of(net, dens.ids, dir / "meas_density.csv");
  const auto in_cells = indices_of(net, inflow.ids, dir / "meas_inflow.csv");

  std::vector<MeasurementBatch> batches(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    auto& b = batches[t];
    b.t = static_cast<int>(t);
    if (flow.steps[t] != b.t) throw MalformedSpec(dir.string() + ": steps must be 0, 1, 2, ...");
    const auto r = static_cast<Eigen::Index>(t);
    for (std::size_t c = 0; c < flow_cells.size(); ++c) b.flow_meas[flow_cells[c]] = flow.values(r, static_cast<Eigen::Index>(c));
    for (std::size_t c = 0; c < dens_cells.size(); ++c) b.density_meas[dens_cells[c]] = dens.values(r, static_cast<Eigen::Index>(c));
    for (std::size_t c = 0; c < in_cells.size(); ++c) b.inflow_meas[in_cells[c]] = inflow.values(r, static_cast<Eigen::Index>(c));
  }
  for (std::size_t r = 0; r < fcd.steps.size(); ++r) {
    const int t = fcd.steps[r];
    if (t < 0 || static_cast<std::size_t>(t) >= horizon) throw MalformedSpec(dir.string() + ": FCD step out of range");
    auto& b = batches[static_cast<std::size_t>(t)];
    b.fcd_refreshed = true;
    for (std::size_t c = 0; c < fcd.ids.size(); ++c) {
      b.fcd_speed[fcd.ids[c]] = fcd.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
  }
  return batches;
}

Eigen::MatrixXd read_cell_matrix(const fs::path& path, const TrafficNetwork& net) {
  std::vector<int> ids;
  const Eigen::MatrixXd m = table_matrix(read_csv(path), &ids);
  if (ids != all_ids(net)) throw MalformedSpec(path.string() + ": columns do not match the network cells");
  return m;
}

Trajectory read_truth(const fs::path& dir, const TrafficNetwork& net) {
  Trajectory tr;
  tr.density = read_cell_matrix(dir / "truth_density.csv", net);
  tr.outflow = read_cell_matrix(dir / "truth_outflow.csv", net);
  tr.inflow = read_cell_matrix(dir / "truth_inflow.csv", net);
  tr.admitted = read_cell_matrix(dir / "truth_admitted.csv", net);
  if (tr.density.rows() != tr.outflow.rows() + 1) {
    throw MalformedSpec(dir.string() + ": truth density needs one more row than the flows");
  }
  return tr;
}

// ---------------------------------------------------------------- simulate

void cmd_simulate(const Scenario& sc, const fs::path& out) {
  const TrafficNetwork net = sc.network();
  log_message(LogLevel::Info, "simulating " + std::to_string(sc.horizon_steps) + " steps on " +
                                  std::to_string(net.size()) + " cells");
  const Trajectory traj = simulate(net, sc.diagrams, sc.demand, sc.initial_density, sc.horizon_steps);
  const auto batches = measure_all(net, sc.diagrams, traj, sc.layout, sc.inflow_layout, sc.noise);
  write_traces(out, net, traj, batches, sc);

  const MassBalance mb = mass_balance(net, traj);
  const auto lap = reduced_laplacian(net);
  const Eigen::VectorXd f = cumulative_outflows(traj.outflow, 0, traj.horizon());
  const double fmax = f.cwiseAbs().maxCoeff();
  const double residual = fmax > 0.0 ? (lap.matrix * f).cwiseAbs().maxCoeff() / fmax : 0.0;

  CsvTable s;
  s.add_column("horizon", "step");
  s.add_column("storage_change", "veh");
  s.add_column("net_inflow", "veh");
  s.add_column("mass_balance_rel_error", "1");
  s.add_column("kernel_residual", "1");
  s.rows.push_back({std::to_string(traj.horizon()), format_number(mb.storage_change),
                    format_number(mb.net_inflow), format_number(mb.relative_error),
                    format_number(residual)});
  write_csv(out / "simulate_summary.csv", s);
}

// ---------------------------------------------------------------- calibrate

void cmd_calibrate(const Scenario& sc, const CommandOptions& o) {
  if (o.traces.empty()) throw MalformedSpec("calibrate needs --traces <dir>");
  const TrafficNetwork net = sc.network();
  const auto flow = read_wide(o.traces / "meas_flow.csv", "cell_");
  const auto dens = read_wide(o.traces / "meas_density.csv", "cell_");

  std::vector<int> cells = o.cells ? *o.cells : flow.ids;
  if (cells.empty()) {
    log_message(LogLevel::Warn, "empty cell list; nothing to calibrate");
    return;
  }
  auto column_of = [](const WideTable& w, int id) -> std::optional<Eigen::Index> {
    for (std::size_t i = 0; i < w.ids.size(); ++i) {
      if (w.ids[i] == id) return static_cast<Eigen::Index>(i);
    }
    return std::nullopt;
  };

  const auto& cfg = sc.calibration;
  std::map<std::size_t, FundamentalDiagram> calibrated;
  json entries = json::array();
  for (int id : cells) {
    if (!net.has_id(id)) throw MalformedSpec("--cells: unknown cell id " + std::to_string(id));
    const std::size_t e = net.index_of(id);
    std::vector<FlowDensitySample> samples;
    const auto fc = column_of(flow, id);
    const auto dc = column_of(dens, id);
    if (fc && dc) {
      for (Eigen::Index t = 0; t < std::min(flow.values.rows(), dens.values.rows()); ++t) {
        const double rho = dens.values(t, *dc);
        const double phi = flow.values(t, *fc);
        if (std::isfinite(rho) && std::isfinite(phi)) samples.push_back({rho, phi});
      }
    }
    if (samples.empty()) throw EmptyLearningSet("cell " + std::to_string(id) + " has no (density, flow) samples");

    const double rc0 = cfg.rho_crit0;
    const double c0 = net.cell(e).speed_limit_km_per_step * rc0;
    const CriticalFit fit = calibrate_critical(samples, cfg.fit, rc0, c0);
    if (!fit.converged) {
      log_message(LogLevel::Warn, "cell " + std::to_string(id) + ": calibration hit max_iter");
    }
    const CongestedFit cong = calibrate_congested(samples, fit.rho_crit, fit.capacity, cfg.fit.rho_jam);
    calibrated[e] = cong.diagram;
    json entry = diagram_document(cong.diagram);
    entry["cell"] = id;
    entry["calibrated"] = true;
    entry["samples"] = samples.size();
    entry["iterations"] = fit.iterations;
    entry["converged"] = fit.converged;
    entry["critical_cost"] = fit.cost;
    entry["congested_residual"] = cong.residual;
    entry["no_congested_samples"] = cong.no_congested_samples;
    entry["initial"] = {{"rho_crit", rc0}, {"capacity", c0}};
    entries.push_back(entry);
  }

  const auto extended = extend_diagrams(calibrated, net);
  for (const auto& [e, fd] : extended) {
    if (calibrated.count(e)) continue;
    json entry = diagram_document(fd);
    entry["cell"] = net.cell(e).id;
    entry["calibrated"] = false;
    entries.push_back(entry);
  }
  std::sort(entries.begin(), entries.end(), [](const json& a, const json& b) {
    return a.at("cell").get<int>() < b.at("cell").get<int>();
  });
  write_json(o.out / "diagrams.json", {{"cells", entries}});

  CsvTable t;
  t.add_column("cell", "id");
  t.add_column("rho_crit", "veh/km");
  t.add_column("capacity", "veh/period");
  t.add_column("rho_jam", "veh/km");
  t.add_column("quad_a", "period^-1 km^2/veh");
  t.add_column("iterations", "1");
  t.add_column("congested_residual", "veh/period");
  for (const auto& [e, fd] : calibrated) {
    const auto& entry = *std::find_if(entries.begin(), entries.end(), [&](const json& j) {
      return j.at("cell").get<int>() == net.cell(e).id;
    });
    t.rows.push_back({std::to_string(net.cell(e).id), format_number(fd.rho_crit),
                      format_number(fd.capacity), format_number(fd.rho_jam),
                      format_number(fd.quad_a), std::to_string(entry.at("iterations").get<int>()),
                      format_number(entry.at("congested_residual").get<double>())});
  }
  write_csv(o.out / "calibration_summary.csv", t);
}

Diagrams read_diagrams(const fs::path& path, const TrafficNetwork& net, Diagrams base) {
  const json doc = read_json(path);
  try {
    for (const auto& entry : doc.at("cells")) {
      const int id = entry.at("cell").get<int>();
      if (!net.has_id(id)) throw MalformedSpec(path.string() + ": unknown cell id " + std::to_string(id));
      base[net.index_of(id)] = make_diagram(entry.at("rho_crit").get<double>(), entry.at("capacity").get<double>(),
                                            entry.at("rho_jam").get<double>(), entry.value("quad_a", 0.0));
    }
  } catch (const json::exception& e) {
    throw MalformedSpec(path.string() + ": " + e.what());
  }
  check_cfl(net, base);
  return base;
}

// ---------------------------------------------------------------- reconstruct

void cmd_reconstruct(const Scenario& sc, const CommandOptions& o) {
  if (o.traces.empty()) throw MalformedSpec("reconstruct needs --traces <dir>");
  const TrafficNetwork net = sc.network();
  const Diagrams fds = o.diagrams.empty() ? sc.diagrams : read_diagrams(o.diagrams, net, sc.diagrams);
  const Trajectory truth = read_truth(o.traces, net);
  const auto batches = read_batches(o.traces, net);
  const Eigen::VectorXd init = sc.observer_initial == "truth"
                                   ? Eigen::VectorXd(truth.density.row(0).transpose())
                                   : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.size()));
  const Reconstruction rec = run_reconstruction(net, fds, batches, truth, sc.observer, init,
                                                sc.steps_per_day, sc.transient_steps);

  const auto ids = all_ids(net);
  write_csv(o.out / "est_density.csv", matrix_table(rec.density, ids, "veh/km"));
  write_csv(o.out / "est_outflow.csv", matrix_table(rec.outflow, ids, "veh/period"));
  write_csv(o.out / "est_inflow.csv", matrix_table(rec.inflow, ids, "veh/period"));
  write_csv(o.out / "pseudo_density.csv", matrix_table(rec.pseudo, ids, "veh/km"));
  write_csv(o.out / "abs_density_err.csv", matrix_table(rec.report.abs_density_err, ids, "veh/km"));
  write_csv(o.out / "abs_flow_err.csv", matrix_table(rec.report.abs_flow_err, ids, "veh/period"));

  CsvTable t;
  t.add_column("day", "day");
  for (double p : kErrorLevels) t.add_column("density_delta_" + std::to_string(static_cast<int>(std::lround(p * 100))), "veh/km");
  for (double p : kErrorLevels) t.add_column("flow_delta_" + std::to_string(static_cast<int>(std::lround(p * 100))), "veh/period");
  std::array<double, 3> dsum{};
  std::array<double, 3> fsum{};
  for (const auto& d : rec.report.days) {
    std::vector<std::string> row{std::to_string(d.day)};
    for (int k = 0; k < 3; ++k) row.push_back(format_number(d.density[static_cast<std::size_t>(k)]));
    for (int k = 0; k < 3; ++k) row.push_back(format_number(d.flow[static_cast<std::size_t>(k)]));
    for (std::size_t k = 0; k < 3; ++k) {
      dsum[k] += d.density[k];
      fsum[k] += d.flow[k];
    }
    t.rows.push_back(std::move(row));
  }
  write_csv(o.out / "error_report.csv", t);

  // Day averages, plus the 95% levels relative to the diagram scales.
  const double days = std::max<double>(1.0, static_cast<double>(rec.report.days.size()));
  double rho_jam = 0.0;
  double capacity = 0.0;
  for (const auto& fd : fds) {
    rho_jam = std::max(rho_jam, fd.rho_jam);
    capacity = std::max(capacity, fd.capacity);
  }
  CsvTable s;
  s.add_column("days", "day");
  for (double p : kErrorLevels) s.add_column("mean_density_delta_" + std::to_string(static_cast<int>(std::lround(p * 100))), "veh/km");
  for (double p : kErrorLevels) s.add_column("mean_flow_delta_" + std::to_string(static_cast<int>(std::lround(p * 100))), "veh/period");
  s.add_column("density_delta_95_over_rho_jam", "1");
  s.add_column("flow_delta_95_over_capacity", "1");
  std::vector<std::string> row{std::to_string(rec.report.days.size())};
  for (std::size_t k = 0; k < 3; ++k) row.push_back(format_number(dsum[k] / days));
  for (std::size_t k = 0; k < 3; ++k) row.push_back(format_number(fsum[k] / days));
  row.push_back(format_number(dsum[2] / days / rho_jam));
  row.push_back(format_number(fsum[2] / days / capacity));
  s.rows.push_back(std::move(row));
  write_csv(o.out / "summary.csv", s);
}

// ---------------------------------------------------------------- place

json solution_document(const TrafficNetwork& net, const PlacementSolution& sol, const SensorModel& model) {
  json cells = json::array();
  for (std::size_t e = 0; e < net.size(); ++e) {
    const double w = sol.omega.size() ? sol.omega[static_cast<Eigen::Index>(e)] : 0.0;
    json entry = {{"cell", net.cell(e).id}, {"omega", w}};
    entry["virtual_variance"] = w > 0.0 ? json(1.0 / w) : json(nullptr);
    cells.push_back(entry);
  }
  json doc;
  doc["selected"] = ids_of(net, sol.selected);
  doc["sensors"] = sol.selected.size();
  doc["vp_trace"] = std::isfinite(sol.vp_trace) ? json(sol.vp_trace) : json(nullptr);
  doc["total_cost"] = std::isfinite(sol.total_cost) ? json(sol.total_cost) : json(nullptr);
  doc["feasible"] = sol.feasible;
  doc["objective"] = sol.objective;
  doc["kkt_residual"] = sol.kkt_residual;
  doc["iterations"] = sol.iterations;
  doc["bimodality"] = std::isfinite(sol.bimodality) ? json(sol.bimodality) : json(nullptr);
  doc["sigma_nom_sq"] = model.sigma_nom_sq;
  doc["cost_per_sensor"] = model.cost_per_sensor;
  doc["cells"] = cells;
  return doc;
}

CsvTable summary_table() {
  CsvTable t;
  t.add_column("scenario", "label");
  t.add_column("gamma", "1");
  t.add_column("sensors", "1");
  t.add_column("vp_trace", "(veh/period)^2");
  t.add_column("total_cost", "1");
  return t;
}

void add_summary_row(CsvTable& t, const std::string& label, double gamma, std::size_t sensors,
                     double vp_trace, double total) {
  t.rows.push_back({label, format_number(gamma), std::to_string(sensors), format_number(vp_trace),
                    format_number(total)});
}

CsvTable cost_curve(const Eigen::MatrixXd& V, const TrafficNetwork& net, const SensorModel& model,
                    int h_lo, int h_hi, const std::optional<GeoConstraints>& constraints,
                    std::map<int, ExhaustiveResult>* results) {
  CsvTable t;
  t.add_column("h", "sensors");
  t.add_column("vp_trace", "(veh/period)^2");
  t.add_column("total_cost", "1");
  t.add_column("evaluated", "subsets");
  t.add_column("selected", "cell ids");
  for (int h = h_lo; h <= h_hi; ++h) {
    const ExhaustiveResult r = exhaustive_search(V, model, h, constraints);
    log_message(LogLevel::Info, "exhaustive h=" + std::to_string(h) + ": " + format_number(r.total_cost));
    std::string sel;
    for (int id : ids_of(net, r.selected)) sel += (sel.empty() ? "" : " ") + std::to_string(id);
    t.rows.push_back({std::to_string(h), format_number(r.vp_trace), format_number(r.total_cost),
                      std::to_string(r.evaluated), sel});
    if (results) (*results)[h] = r;
  }
  return t;
}

void cmd_place(const Scenario& sc, const CommandOptions& o) {
  const TrafficNetwork net = sc.network();
  const Eigen::MatrixXd V = kernel_basis(reduced_laplacian(net)).V;
  const auto& p = sc.placement;
  const int r = static_cast<int>(V.cols());
  CsvTable summary = summary_table();

  if (o.mode == "unconstrained" || o.mode == "geo") {
    std::optional<GeoConstraints> cons;
    if (o.mode == "geo") {
      if (!p.constraints) throw MalformedSpec("geo mode needs placement.available or placement.groups");
      cons = p.constraints;
    }
    const PlacementSolution sol = virtual_variance_solve(V, p.model, p.weights, cons);
    write_json(o.out / "placement.json", solution_document(net, sol, p.model));
    add_summary_row(summary, o.mode, p.weights.gamma, sol.selected.size(), sol.vp_trace, sol.total_cost);
  } else if (o.mode == "budget") {
    const BudgetResult res = budget_constrained_solve(
        V, p.model, p.gamma0, p.weights.discrepancy_kappa, p.weights.discard_threshold, p.n_max,
        p.t_max, p.growth, p.constraints);
    json doc = solution_document(net, res.solution, p.model);
    doc["budget_not_met"] = res.budget_not_met;
    doc["infeasible"] = res.infeasible;
    doc["n_max"] = p.n_max;
    write_json(o.out / "placement.json", doc);
    CsvTable log;
    log.add_column("t", "iteration");
    log.add_column("gamma", "1");
    log.add_column("sensors", "1");
    log.add_column("vp_trace", "(veh/period)^2");
    for (const auto& s : res.log) {
      log.rows.push_back({std::to_string(s.t), format_number(s.gamma), std::to_string(s.sensors),
                          format_number(s.vp_trace)});
    }
    write_csv(o.out / "iteration_log.csv", log);
    const double g = res.log.empty() ? p.gamma0 : res.log.back().gamma;
    add_summary_row(summary, "budget", g, res.solution.selected.size(), res.solution.vp_trace,
                    res.solution.total_cost);
    if (res.infeasible) log_message(LogLevel::Warn, "n_max is below the number of onramps; flagged infeasible");
    if (res.budget_not_met) log_message(LogLevel::Warn, "budget not met within t_max");
  } else if (o.mode == "exhaustive") {
    const int lo = std::max(p.h_lo, r);
    std::map<int, ExhaustiveResult> results;
    write_csv(o.out / "cost_vs_h.csv", cost_curve(V, net, p.model, lo, p.h_hi, p.constraints, &results));
    const ExhaustiveResult* best = nullptr;
    int best_h = 0;
    for (const auto& [h, res] : results) {
      if (!best || res.total_cost < best->total_cost) {
        best = &res;
        best_h = h;
      }
    }
    json doc;
    doc["best_h"] = best_h;
    doc["selected"] = best ? ids_of(net, best->selected) : std::vector<int>{};
    doc["vp_trace"] = best && std::isfinite(best->vp_trace) ? json(best->vp_trace) : json(nullptr);
    doc["total_cost"] = best && std::isfinite(best->total_cost) ? json(best->total_cost) : json(nullptr);
    write_json(o.out / "placement.json", doc);
    if (best) add_summary_row(summary, "exhaustive", 0.0, best->selected.size(), best->vp_trace, best->total_cost);
  } else {
    throw MalformedSpec("unknown --mode '" + o.mode + "' (unconstrained, geo, budget, exhaustive)");
  }
  write_csv(o.out / "summary.csv", summary);
}

// ---------------------------------------------------------------- grid experiment

void cmd_grid_experiment(const CommandOptions& o) {
  const NetworkDescription desc = grid_network();
  const TrafficNetwork net = build_network(desc);
  const Eigen::MatrixXd V = kernel_basis(reduced_laplacian(net)).V;
  const SensorModel model{1.0, 1.0};
  PlacementWeights weights{2.0, 20.0, 100.0};
  if (o.gamma) weights.gamma = *o.gamma;
  if (o.kappa) weights.discrepancy_kappa = *o.kappa;
  if (o.threshold) weights.discard_threshold = *o.threshold;
  const auto [h_lo, h_hi] = o.h_range.value_or(std::make_pair(4, 21));
  if (h_hi > static_cast<int>(net.size())) throw MalformedSpec("--h-range exceeds the 25 grid cells");

  std::map<int, ExhaustiveResult> results;
  write_csv(o.out / "cost_curve.csv", cost_curve(V, net, model, h_lo, h_hi, std::nullopt, &results));
  const PlacementSolution sol = virtual_variance_solve(V, model, weights);
  write_json(o.out / "placement.json", solution_document(net, sol, model));

  CsvTable t;
  t.add_column("sigma_nom_sq", "(veh/period)^2");
  t.add_column("cost_per_sensor", "1");
  t.add_column("gamma", "1");
  t.add_column("kappa", "1");
  t.add_column("discard_threshold", "(veh/period)^2");
  t.add_column("vv_sensors", "1");
  t.add_column("vv_total_cost", "1");
  t.add_column("exhaustive_cost_same_count", "1");
  t.add_column("cost_ratio", "1");
  t.add_column("exhaustive_best_h", "sensors");
  t.add_column("exhaustive_best_cost", "1");
  const int count = static_cast<int>(sol.selected.size());
  const double same = results.count(count) ? results[count].total_cost : std::nan("");
  int best_h = 0;
  double best = kInfiniteCost;
  for (const auto& [h, res] : results) {
    if (res.total_cost < best) {
      best = res.total_cost;
      best_h = h;
    }
  }
  t.rows.push_back({format_number(model.sigma_nom_sq), format_number(model.cost_per_sensor),
                    format_number(weights.gamma), format_number(weights.discrepancy_kappa),
                    format_number(weights.discard_threshold), std::to_string(count),
                    format_number(sol.total_cost), format_number(same),
                    format_number(sol.total_cost / same), std::to_string(best_h),
                    format_number(best)});
  write_csv(o.out / "vv_summary.csv", t);
}

void dispatch(const CommandOptions& o, Scenario* sc) {
  fs::create_directories(o.out);
  if (o.command == "simulate") {
    cmd_simulate(*sc, o.out);
  } else if (o.command == "calibrate") {
    cmd_calibrate(*sc, o);
  } else if (o.command == "reconstruct") {
    cmd_reconstruct(*sc, o);
  } else if (o.command == "place") {
    cmd_place(*sc, o);
  } else if (o.command == "grid-experiment") {
    cmd_grid_experiment(o);
  } else {
    throw MalformedSpec("unknown command '" + o.command + "'");
  }
  write_metadata(o.out, o, sc);
}

bool needs_scenario(const std::string& command) { return command != "grid-experiment"; }

}  // namespace

void run_command(const CommandOptions& opts) {
  if (opts.out.empty()) throw MalformedSpec("--out is required");
  CommandOptions o = opts;
  if (!o.scenario.empty()) o.scenario = fs::absolute(o.scenario).lexically_normal();
  if (!o.traces.empty()) o.traces = fs::absolute(o.traces).lexically_normal();
  if (!o.diagrams.empty()) o.diagrams = fs::absolute(o.diagrams).lexically_normal();
  std::optional<Scenario> sc;
  if (needs_scenario(o.command)) {
    if (o.scenario.empty()) throw MalformedSpec(o.command + " needs --scenario <path>");
    sc = load_scenario(o.scenario);
    apply_overrides(*sc, o);
  }
  dispatch(o, sc ? &*sc : nullptr);
}

void replay_command(const fs::path& metadata, const fs::path& out) {
  const json meta = read_json(metadata);
  if (!meta.contains("options")) throw MalformedSpec(metadata.string() + ": no recorded options");
  CommandOptions o = options_from_document(meta.at("options"));
  o.out = out;
  std::optional<Scenario> sc;
  if (needs_scenario(o.command)) {
    if (!meta.contains("scenario")) throw MalformedSpec(metadata.string() + ": no embedded scenario");
    sc = parse_scenario(meta.at("scenario").dump(2), metadata.filename().string() + "#/scenario");
    apply_overrides(*sc, o);
  }
  dispatch(o, sc ? &*sc : nullptr);
}

}  // namespace roadsense
