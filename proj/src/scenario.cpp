#include "roadsense/scenario.hpp"

#include "roadsense/builtin_networks.hpp"
#include "roadsense/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace roadsense {

using nlohmann::json;

namespace {

class Reader {
 public:
  Reader(const JsonLocator& locator, std::string source)
      : locator_(&locator), source_(std::move(source)) {}

  std::string where(const std::string& ptr) const {
    std::ostringstream os;
    os << source_ << ':' << locator_->line_of(ptr) << ": " << (ptr.empty() ? "/" : ptr) << ": ";
    return os.str();
  }

  [[noreturn]] void fail(const std::string& ptr, const std::string& msg) const {
    throw MalformedSpec(where(ptr) + msg);
  }

  void require_object(const json& v, const std::string& ptr) const {
    if (!v.is_object()) fail(ptr, "expected an object");
  }
  void require_array(const json& v, const std::string& ptr) const {
    if (!v.is_array()) fail(ptr, "expected an array");
  }

  void check_keys(const json& obj, const std::string& ptr,
                  std::initializer_list<const char*> allowed) const {
    for (const auto& item : obj.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || item.key() == a;
      if (!ok) fail(ptr + "/" + pointer_token(item.key()), "unknown field '" + item.key() + "'");
    }
  }

  double number(const json& obj, const char* key, const std::string& ptr,
                std::optional<double> fallback = std::nullopt) const {
    const std::string p = ptr + "/" + key;
    if (!obj.contains(key)) {
      if (fallback) return *fallback;
      fail(p, "missing required field");
    }
    const json& v = obj.at(key);
    if (!v.is_number()) fail(p, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(p, "expected a finite number");
    return d;
  }

  long long integer(const json& obj, const char* key, const std::string& ptr,
                    std::optional<long long> fallback = std::nullopt) const {
    const std::string p = ptr + "/" + key;
    if (!obj.contains(key)) {
      if (fallback) return *fallback;
      fail(p, "missing required field");
    }
    const json& v = obj.at(key);
    if (!v.is_number_integer()) fail(p, "expected an integer");
    return v.get<long long>();
  }

  double positive(const json& obj, const char* key, const std::string& ptr,
                  std::optional<double> fallback = std::nullopt) const {
    const double d = number(obj, key, ptr, fallback);
    if (!(d > 0.0)) fail(ptr + "/" + key, "must be positive");
    return d;
  }

  double nonneg(const json& obj, const char* key, const std::string& ptr,
                std::optional<double> fallback = std::nullopt) const {
    const double d = number(obj, key, ptr, fallback);
    if (!(d >= 0.0)) fail(ptr + "/" + key, "must be non-negative");
    return d;
  }

  std::string string(const json& obj, const char* key, const std::string& ptr,
                     std::optional<std::string> fallback = std::nullopt) const {
    const std::string p = ptr + "/" + key;
    if (!obj.contains(key)) {
      if (fallback) return *fallback;
      fail(p, "missing required field");
    }
    if (!obj.at(key).is_string()) fail(p, "expected a string");
    return obj.at(key).get<std::string>();
  }

  const std::string& source() const { return source_; }

 private:
  const JsonLocator* locator_;
  std::string source_;
};

const json kEmptyObject = json::object();

const json& member(const json& obj, const char* key) {
  return obj.contains(key) ? obj.at(key) : kEmptyObject;
}

std::string strip_prefix(const std::string& what) {
  const auto pos = what.find(": ");
  return pos == std::string::npos ? what : what.substr(pos + 2);
}

std::size_t cell_index(const Reader& rd, const TrafficNetwork& net, const json& v,
                       const std::string& ptr) {
  if (!v.is_number_integer()) rd.fail(ptr, "expected a cell id");
  const int id = v.get<int>();
  if (!net.has_id(id)) rd.fail(ptr, "unknown cell id " + std::to_string(id));
  return net.index_of(id);
}

std::vector<std::size_t> cell_list(const Reader& rd, const TrafficNetwork& net, const json& v,
                                   const std::string& ptr) {
  rd.require_array(v, ptr);
  std::vector<std::size_t> out;
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string p = ptr + "/" + std::to_string(i);
    const auto e = cell_index(rd, net, v[i], p);
    if (!seen.insert(e).second) rd.fail(p, "duplicate cell");
    out.push_back(e);
  }
  return out;
}

json id_list(const TrafficNetwork& net, const std::vector<std::size_t>& cells) {
  json arr = json::array();
  for (auto e : cells) arr.push_back(net.cell(e).id);
  return arr;
}

}  // namespace

NetworkDescription parse_network(const json& doc, const JsonLocator& locator,
                                 const std::string& source, const std::string& ptr,
                                 std::string* builtin) {
  Reader rd(locator, source);
  rd.require_object(doc, ptr);
  NetworkDescription d;
  if (doc.contains("builtin")) {
    rd.check_keys(doc, ptr, {"builtin", "sample_period_s", "fcd_period_steps"});
    const std::string name = rd.string(doc, "builtin", ptr);
    try {
      d = builtin_network(name);
    } catch (const MalformedSpec& e) {
      rd.fail(ptr + "/builtin", strip_prefix(e.what()));
    }
    if (builtin) *builtin = name;
  } else {
    rd.check_keys(doc, ptr,
                  {"cells", "splits", "sample_period_s", "fcd_period_steps", "lane_groups"});
    if (!doc.contains("cells")) rd.fail(ptr + "/cells", "missing required field");
    const json& cells = doc.at("cells");
    rd.require_array(cells, ptr + "/cells");
    std::map<int, std::size_t> row_of;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::string p = ptr + "/cells/" + std::to_string(i);
      const json& c = cells[i];
      rd.require_object(c, p);
      rd.check_keys(c, p, {"id", "length_km", "kind", "segment_id", "speed_limit_km_per_step"});
      Cell cell;
      cell.id = static_cast<int>(rd.integer(c, "id", p));
      cell.length_km = rd.positive(c, "length_km", p);
      cell.speed_limit_km_per_step = rd.positive(c, "speed_limit_km_per_step", p);
      cell.segment_id = static_cast<int>(rd.integer(c, "segment_id", p));
      try {
        cell.kind = cell_kind_from_string(rd.string(c, "kind", p, std::string("internal")));
      } catch (const MalformedSpec& e) {
        rd.fail(p + "/kind", strip_prefix(e.what()));
      }
      if (!row_of.emplace(cell.id, i).second) rd.fail(p + "/id", "duplicate cell id");
      d.cells.push_back(cell);
    }

    std::map<int, double> row_sum;
    if (doc.contains("splits")) {
      const json& splits = doc.at("splits");
      rd.require_array(splits, ptr + "/splits");
      for (std::size_t i = 0; i < splits.size(); ++i) {
        const std::string p = ptr + "/splits/" + std::to_string(i);
        const json& s = splits[i];
        rd.require_object(s, p);
        rd.check_keys(s, p, {"from", "to", "ratio"});
        Split sp;
        sp.from_id = static_cast<int>(rd.integer(s, "from", p));
        sp.to_id = static_cast<int>(rd.integer(s, "to", p));
        sp.ratio = rd.nonneg(s, "ratio", p);
        if (!row_of.count(sp.from_id)) rd.fail(p + "/from", "unknown cell id");
        if (!row_of.count(sp.to_id)) rd.fail(p + "/to", "unknown cell id");
        row_sum[sp.from_id] += sp.ratio;
        d.splits.push_back(sp);
      }
    }
    // Row stochasticity, reported at the offending cell.
    for (std::size_t i = 0; i < d.cells.size(); ++i) {
      const auto& c = d.cells[i];
      const double s = row_sum.count(c.id) ? row_sum[c.id] : 0.0;
      const bool bad = c.kind == CellKind::Offramp ? s > 1.0 + 1e-9 : std::abs(s - 1.0) > 1e-9;
      if (bad) {
        std::ostringstream os;
        os << "outgoing splits of cell " << c.id << " sum to " << s
           << (c.kind == CellKind::Offramp ? " (offramps allow at most 1)" : " (expected 1)");
        throw RowSumViolation(rd.where(ptr + "/cells/" + std::to_string(i)) + os.str());
      }
    }
    if (doc.contains("lane_groups")) {
      const json& groups = doc.at("lane_groups");
      rd.require_array(groups, ptr + "/lane_groups");
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const std::string p = ptr + "/lane_groups/" + std::to_string(g);
        rd.require_array(groups[g], p);
        std::vector<int> ids;
        for (std::size_t k = 0; k < groups[g].size(); ++k) {
          const json& v = groups[g][k];
          if (!v.is_number_integer() || !row_of.count(v.get<int>())) {
            rd.fail(p + "/" + std::to_string(k), "expected a known cell id");
          }
          ids.push_back(v.get<int>());
        }
        d.lane_groups.push_back(ids);
      }
    }
  }
  d.sample_period_s = rd.positive(doc, "sample_period_s", ptr, d.sample_period_s);
  d.fcd_period_steps = static_cast<int>(rd.integer(doc, "fcd_period_steps", ptr, d.fcd_period_steps));
  if (d.fcd_period_steps < 1) rd.fail(ptr + "/fcd_period_steps", "must be >= 1");
  return d;
}

json network_document(const NetworkDescription& d) {
  json doc;
  doc["sample_period_s"] = d.sample_period_s;
  doc["fcd_period_steps"] = d.fcd_period_steps;
  json cells = json::array();
  for (const auto& c : d.cells) {
    cells.push_back({{"id", c.id},
                     {"length_km", c.length_km},
                     {"kind", to_string(c.kind)},
                     {"segment_id", c.segment_id},
                     {"speed_limit_km_per_step", c.speed_limit_km_per_step}});
  }
  doc["cells"] = cells;
  json splits = json::array();
  for (const auto& s : d.splits) splits.push_back({{"from", s.from_id}, {"to", s.to_id}, {"ratio", s.ratio}});
  doc["splits"] = splits;
  if (!d.lane_groups.empty()) doc["lane_groups"] = d.lane_groups;
  return doc;
}

json diagram_document(const FundamentalDiagram& fd) {
  return {{"rho_crit", fd.rho_crit},
          {"capacity", fd.capacity},
          {"rho_jam", fd.rho_jam},
          {"quad_a", fd.quad_a},
          {"quad_b", fd.quad_b},
          {"quad_c", fd.quad_c},
          {"v_ff", fd.v_ff},
          {"wave_speed", fd.wave_speed}};
}

TrafficNetwork Scenario::network() const { return build_network(network_description); }

Scenario parse_scenario(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(text, e.byte == 0 ? 0 : e.byte - 1);
    std::string msg = e.what();
    const auto pos = msg.find("syntax error");
    if (pos != std::string::npos) msg = msg.substr(pos);
    throw MalformedSpec(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
  const JsonLocator locator(text);
  Reader rd(locator, source);
  rd.require_object(doc, "");
  rd.check_keys(doc, "",
                {"network", "diagrams", "demand", "initial_density", "noise", "layout",
                 "inflow_layout", "horizon_steps", "steps_per_day", "transient_steps", "observer",
                 "placement", "calibration"});

  Scenario sc;
  sc.source = source;
  if (!doc.contains("network")) rd.fail("/network", "missing required field");
  sc.network_description = parse_network(doc.at("network"), locator, source, "/network", &sc.builtin);

  std::optional<TrafficNetwork> maybe_net;
  try {
    maybe_net.emplace(build_network(sc.network_description));
  } catch (const RowSumViolation& e) {
    throw RowSumViolation(rd.where("/network") + strip_prefix(e.what()));
  } catch (const ConnectivityViolation& e) {
    throw ConnectivityViolation(rd.where("/network") + strip_prefix(e.what()));
  } catch (const MalformedSpec& e) {
    rd.fail("/network", strip_prefix(e.what()));
  }
  const TrafficNetwork& net = *maybe_net;
  const std::size_t n = net.size();

  // Fundamental diagrams.
  {
    const std::string p = "/diagrams";
    const json& diag = member(doc, "diagrams");
    rd.require_object(diag, p);
    rd.check_keys(diag, p, {"default", "cells"});
    const json& def = member(diag, "default");
    const std::string dp = p + "/default";
    rd.require_object(def, dp);
    rd.check_keys(def, dp, {"rho_crit", "capacity", "rho_jam", "quad_a"});
    const double rc = rd.positive(def, "rho_crit", dp, 20.0);
    const double rj = rd.positive(def, "rho_jam", dp, 250.0);
    const double a = rd.nonneg(def, "quad_a", dp, 0.0);
    std::optional<double> cap;
    if (def.contains("capacity")) cap = rd.positive(def, "capacity", dp);

    auto build = [&](const std::string& at, double rho_crit, double capacity, double rho_jam,
                     double quad_a) {
      try {
        return make_diagram(rho_crit, capacity, rho_jam, quad_a);
      } catch (const OutOfRange& e) {
        rd.fail(at, strip_prefix(e.what()));
      }
    };
    sc.diagrams.resize(n);
    for (std::size_t e = 0; e < n; ++e) {
      const double c = cap ? *cap : net.cell(e).speed_limit_km_per_step * rc;
      sc.diagrams[e] = build(dp, rc, c, rj, a);
    }
    if (diag.contains("cells")) {
      const json& cells = diag.at("cells");
      rd.require_array(cells, p + "/cells");
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const std::string cp = p + "/cells/" + std::to_string(i);
        rd.require_object(cells[i], cp);
        rd.check_keys(cells[i], cp, {"cell", "rho_crit", "capacity", "rho_jam", "quad_a"});
        if (!cells[i].contains("cell")) rd.fail(cp + "/cell", "missing required field");
        const auto e = cell_index(rd, net, cells[i].at("cell"), cp + "/cell");
        const auto& base = sc.diagrams[e];
        const double crc = rd.positive(cells[i], "rho_crit", cp, base.rho_crit);
        const double ccap = rd.positive(cells[i], "capacity", cp,
                                        cap ? *cap : net.cell(e).speed_limit_km_per_step * crc);
        sc.diagrams[e] = build(cp, crc, ccap, rd.positive(cells[i], "rho_jam", cp, base.rho_jam),
                               rd.nonneg(cells[i], "quad_a", cp, base.quad_a));
      }
    }
    try {
      check_cfl(net, sc.diagrams);
    } catch (const OutOfRange& e) {
      rd.fail(p, strip_prefix(e.what()));
    }
  }

  // Exogenous demand.
  if (doc.contains("demand")) {
    const json& dem = doc.at("demand");
    rd.require_array(dem, "/demand");
    for (std::size_t i = 0; i < dem.size(); ++i) {
      const std::string p = "/demand/" + std::to_string(i);
      rd.require_object(dem[i], p);
      rd.check_keys(dem[i], p, {"cell", "profile"});
      if (!dem[i].contains("cell")) rd.fail(p + "/cell", "missing required field");
      DemandProfile prof;
      prof.cell = cell_index(rd, net, dem[i].at("cell"), p + "/cell");
      if (!net.is_onramp(prof.cell)) rd.fail(p + "/cell", "demand can only enter at onramps");
      if (!dem[i].contains("profile")) rd.fail(p + "/profile", "missing required field");
      const json& pts = dem[i].at("profile");
      rd.require_array(pts, p + "/profile");
      int last = -1;
      for (std::size_t k = 0; k < pts.size(); ++k) {
        const std::string kp = p + "/profile/" + std::to_string(k);
        const json& pt = pts[k];
        if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number_integer() || !pt[1].is_number()) {
          rd.fail(kp, "expected [start_step, rate]");
        }
        const int start = pt[0].get<int>();
        const double rate = pt[1].get<double>();
        if (start <= last) rd.fail(kp, "start steps must increase");
        if (start < 0) rd.fail(kp, "start step must be non-negative");
        if (!(rate >= 0.0) || !std::isfinite(rate)) rd.fail(kp, "rate must be non-negative");
        last = start;
        prof.breakpoints.emplace_back(start, rate);
      }
      sc.demand.push_back(std::move(prof));
    }
  }

  // Initial density.
  sc.initial_density = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (doc.contains("initial_density")) {
    const json& v = doc.at("initial_density");
    if (v.is_number()) {
      sc.initial_density.setConstant(v.get<double>());
    } else if (v.is_array() && v.size() == n) {
      for (std::size_t e = 0; e < n; ++e) {
        if (!v[e].is_number()) rd.fail("/initial_density/" + std::to_string(e), "expected a number");
        sc.initial_density[static_cast<Eigen::Index>(e)] = v[e].get<double>();
      }
    } else {
      rd.fail("/initial_density", "expected a number or one value per cell");
    }
    for (std::size_t e = 0; e < n; ++e) {
      const double r = sc.initial_density[static_cast<Eigen::Index>(e)];
      if (!(r >= 0.0) || r > sc.diagrams[e].rho_jam) {
        rd.fail("/initial_density", "density outside [0, rho_jam] for cell " +
                                         std::to_string(net.cell(e).id));
      }
    }
  }

  // Noise.
  {
    const std::string p = "/noise";
    const json& nz = member(doc, "noise");
    rd.require_object(nz, p);
    rd.check_keys(nz, p, {"sigma_flow", "sigma_density", "sigma_fcd", "seed"});
    sc.noise.sigma_flow = rd.nonneg(nz, "sigma_flow", p, 0.0);
    sc.noise.sigma_density = rd.nonneg(nz, "sigma_density", p, 0.0);
    sc.noise.sigma_fcd = rd.nonneg(nz, "sigma_fcd", p, 0.0);
    const long long seed = rd.integer(nz, "seed", p, 0);
    if (seed < 0) rd.fail(p + "/seed", "must be non-negative");
    sc.noise.seed = static_cast<std::uint64_t>(seed);
  }

  // Sensors.
  if (!doc.contains("layout") || (doc.at("layout").is_string() && doc.at("layout") == "all")) {
    for (std::size_t e = 0; e < n; ++e) sc.layout.push_back(e);
  } else {
    sc.layout = cell_list(rd, net, doc.at("layout"), "/layout");
  }
  if (doc.contains("inflow_layout")) {
    sc.inflow_layout = cell_list(rd, net, doc.at("inflow_layout"), "/inflow_layout");
    for (std::size_t i = 0; i < sc.inflow_layout.size(); ++i) {
      if (!net.is_onramp(sc.inflow_layout[i])) {
        rd.fail("/inflow_layout/" + std::to_string(i), "inflow sensors sit on onramps only");
      }
    }
  }

  // Horizon.
  sc.horizon_steps = static_cast<int>(rd.integer(doc, "horizon_steps", "", 100));
  if (sc.horizon_steps < 1) rd.fail("/horizon_steps", "must be >= 1");
  sc.steps_per_day = static_cast<int>(rd.integer(doc, "steps_per_day", "", sc.horizon_steps));
  if (sc.steps_per_day < 1) rd.fail("/steps_per_day", "must be >= 1");
  sc.transient_steps = static_cast<int>(rd.integer(doc, "transient_steps", "", 0));
  if (sc.transient_steps < 0) rd.fail("/transient_steps", "must be >= 0");

  // Observer.
  {
    const std::string p = "/observer";
    const json& ob = member(doc, "observer");
    rd.require_object(ob, p);
    rd.check_keys(ob, p, {"gain_kappa", "flow_weight_gamma", "qp_ridge", "qp_tol", "initial_estimate"});
    sc.observer.gain_kappa = rd.nonneg(ob, "gain_kappa", p, 0.2);
    if (sc.observer.gain_kappa > 1.0) rd.fail(p + "/gain_kappa", "must lie in [0, 1]");
    sc.observer.flow_weight_gamma = rd.positive(ob, "flow_weight_gamma", p, 10.0);
    sc.observer.qp_ridge = rd.nonneg(ob, "qp_ridge", p, 1e-9);
    sc.observer.qp_tol = rd.positive(ob, "qp_tol", p, 1e-8);
    sc.observer_initial = rd.string(ob, "initial_estimate", p, std::string("zero"));
    if (sc.observer_initial != "zero" && sc.observer_initial != "truth") {
      rd.fail(p + "/initial_estimate", "expected \"zero\" or \"truth\"");
    }
  }

  // Placement.
  {
    const std::string p = "/placement";
    const json& pl = member(doc, "placement");
    rd.require_object(pl, p);
    rd.check_keys(pl, p,
                  {"sigma_nom_sq", "cost_per_sensor", "gamma", "discrepancy_kappa",
                   "discard_threshold", "available", "groups", "n_max", "t_max", "growth",
                   "gamma0", "h_range"});
    auto& cfg = sc.placement;
    cfg.model.sigma_nom_sq = rd.positive(pl, "sigma_nom_sq", p, 1.0);
    cfg.model.cost_per_sensor = rd.positive(pl, "cost_per_sensor", p, 1.0);
    cfg.weights.gamma =
        rd.nonneg(pl, "gamma", p, cfg.model.cost_per_sensor * cfg.model.sigma_nom_sq);
    cfg.weights.discrepancy_kappa = rd.nonneg(pl, "discrepancy_kappa", p, 20.0);
    cfg.weights.discard_threshold = rd.positive(pl, "discard_threshold", p, 100.0);
    if (!(cfg.weights.discard_threshold > cfg.model.sigma_nom_sq)) {
      rd.fail(p + "/discard_threshold", "must exceed sigma_nom_sq");
    }
    GeoConstraints geo;
    bool constrained = false;
    if (pl.contains("available")) {
      geo.available = cell_list(rd, net, pl.at("available"), p + "/available");
      constrained = true;
    }
    if (pl.contains("groups")) {
      const json& g = pl.at("groups");
      if (g.is_string() && g == "lane_groups") {
        for (const auto& ids : sc.network_description.lane_groups) {
          std::vector<std::size_t> cells;
          for (int id : ids) cells.push_back(net.index_of(id));
          geo.groups.push_back(cells);
        }
      } else {
        rd.require_array(g, p + "/groups");
        for (std::size_t i = 0; i < g.size(); ++i) {
          geo.groups.push_back(cell_list(rd, net, g[i], p + "/groups/" + std::to_string(i)));
        }
      }
      constrained = true;
    }
    if (constrained) {
      std::set<std::size_t> avail(geo.available.begin(), geo.available.end());
      std::set<std::size_t> used;
      for (std::size_t i = 0; i < geo.groups.size(); ++i) {
        for (auto e : geo.groups[i]) {
          if (!avail.empty() && !avail.count(e)) {
            rd.fail(p + "/groups/" + std::to_string(i), "group cell " +
                                                            std::to_string(net.cell(e).id) +
                                                            " is not available");
          }
          if (!used.insert(e).second) rd.fail(p + "/groups/" + std::to_string(i), "groups overlap");
        }
      }
      cfg.constraints = geo;
    }
    const auto r = static_cast<long long>(net.onramps().size());
    cfg.n_max = static_cast<int>(rd.integer(pl, "n_max", p, static_cast<long long>(n)));
    cfg.t_max = static_cast<int>(rd.integer(pl, "t_max", p, 20));
    if (cfg.t_max < 0) rd.fail(p + "/t_max", "must be >= 0");
    cfg.growth = rd.positive(pl, "growth", p, 1.6);
    if (!(cfg.growth > 1.0)) rd.fail(p + "/growth", "must exceed 1");
    cfg.gamma0 = rd.positive(pl, "gamma0", p, 0.2);
    cfg.h_lo = static_cast<int>(r);
    cfg.h_hi = static_cast<int>(n);
    if (pl.contains("h_range")) {
      const json& h = pl.at("h_range");
      if (!h.is_array() || h.size() != 2 || !h[0].is_number_integer() || !h[1].is_number_integer()) {
        rd.fail(p + "/h_range", "expected [low, high]");
      }
      cfg.h_lo = h[0].get<int>();
      cfg.h_hi = h[1].get<int>();
      if (cfg.h_lo < 1 || cfg.h_hi < cfg.h_lo || cfg.h_hi > static_cast<int>(n)) {
        rd.fail(p + "/h_range", "need 1 <= low <= high <= cell count");
      }
    }
  }

  // Calibration.
  {
    const std::string p = "/calibration";
    const json& cal = member(doc, "calibration");
    rd.require_object(cal, p);
    rd.check_keys(cal, p, {"rho_jam", "delta", "eps", "max_iter", "rho_crit0", "rho_min", "capacity_min"});
    auto& c = sc.calibration;
    c.fit.rho_jam = rd.positive(cal, "rho_jam", p, 250.0);
    c.fit.delta = rd.positive(cal, "delta", p, 0.5);
    c.fit.eps = rd.positive(cal, "eps", p, 1e-4);
    c.fit.max_iter = static_cast<int>(rd.integer(cal, "max_iter", p, 5000));
    if (c.fit.max_iter < 1) rd.fail(p + "/max_iter", "must be >= 1");
    c.fit.rho_min = rd.positive(cal, "rho_min", p, 1.0);
    c.fit.capacity_min = rd.positive(cal, "capacity_min", p, 0.1);
    c.rho_crit0 = rd.positive(cal, "rho_crit0", p, 20.0);
    if (!(c.rho_crit0 < c.fit.rho_jam)) rd.fail(p + "/rho_crit0", "must be below rho_jam");
  }
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedSpec("cannot read scenario file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_scenario(os.str(), path.filename().string());
}

json resolved_document(const Scenario& sc) {
  const TrafficNetwork net = sc.network();
  json doc;
  if (!sc.builtin.empty()) {
    doc["network"] = {{"builtin", sc.builtin},
                      {"sample_period_s", sc.network_description.sample_period_s},
                      {"fcd_period_steps", sc.network_description.fcd_period_steps}};
  } else {
    doc["network"] = network_document(sc.network_description);
  }

  json cells = json::array();
  for (std::size_t e = 0; e < net.size(); ++e) {
    const auto& fd = sc.diagrams[e];
    cells.push_back({{"cell", net.cell(e).id},
                     {"rho_crit", fd.rho_crit},
                     {"capacity", fd.capacity},
                     {"rho_jam", fd.rho_jam},
                     {"quad_a", fd.quad_a}});
  }
  doc["diagrams"] = {{"cells", cells}};

  json demand = json::array();
  for (const auto& d : sc.demand) {
    json pts = json::array();
    for (const auto& [start, rate] : d.breakpoints) pts.push_back({start, rate});
    demand.push_back({{"cell", net.cell(d.cell).id}, {"profile", pts}});
  }
  doc["demand"] = demand;
  doc["initial_density"] = std::vector<double>(sc.initial_density.data(),
                                               sc.initial_density.data() + sc.initial_density.size());
  doc["noise"] = {{"sigma_flow", sc.noise.sigma_flow},
                  {"sigma_density", sc.noise.sigma_density},
                  {"sigma_fcd", sc.noise.sigma_fcd},
                  {"seed", sc.noise.seed}};
  doc["layout"] = id_list(net, sc.layout);
  doc["inflow_layout"] = id_list(net, sc.inflow_layout);
  doc["horizon_steps"] = sc.horizon_steps;
  doc["steps_per_day"] = sc.steps_per_day;
  doc["transient_steps"] = sc.transient_steps;
  doc["observer"] = {{"gain_kappa", sc.observer.gain_kappa},
                     {"flow_weight_gamma", sc.observer.flow_weight_gamma},
                     {"qp_ridge", sc.observer.qp_ridge},
                     {"qp_tol", sc.observer.qp_tol},
                     {"initial_estimate", sc.observer_initial}};

  const auto& pc = sc.placement;
  json pl = {{"sigma_nom_sq", pc.model.sigma_nom_sq},
             {"cost_per_sensor", pc.model.cost_per_sensor},
             {"gamma", pc.weights.gamma},
             {"discrepancy_kappa", pc.weights.discrepancy_kappa},
             {"discard_threshold", pc.weights.discard_threshold},
             {"n_max", pc.n_max},
             {"t_max", pc.t_max},
             {"growth", pc.growth},
             {"gamma0", pc.gamma0},
             {"h_range", {pc.h_lo, pc.h_hi}}};
  if (pc.constraints) {
    if (!pc.constraints->available.empty()) pl["available"] = id_list(net, pc.constraints->available);
    json groups = json::array();
    for (const auto& g : pc.constraints->groups) groups.push_back(id_list(net, g));
    pl["groups"] = groups;
  }
  doc["placement"] = pl;

  const auto& cc = sc.calibration;
  doc["calibration"] = {{"rho_jam", cc.fit.rho_jam},       {"delta", cc.fit.delta},
                        {"eps", cc.fit.eps},               {"max_iter", cc.fit.max_iter},
                        {"rho_min", cc.fit.rho_min},       {"capacity_min", cc.fit.capacity_min},
                        {"rho_crit0", cc.rho_crit0}};
  return doc;
}

}  // namespace roadsense
