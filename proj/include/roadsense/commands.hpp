#pragma once

#include "roadsense/errors.hpp"
#include "roadsense/scenario.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace roadsense {

inline constexpr const char* kToolName = "roadsense";
inline constexpr const char* kToolVersion = "0.1.0";

/// Everything a command needs besides the scenario itself. Input paths are
/// stored absolute so that metadata can re-run a command from anywhere; the
/// output directory is deliberately not part of the recorded options.
struct CommandOptions {
  std::string command;  // simulate | calibrate | reconstruct | place | grid-experiment
  std::filesystem::path scenario;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::string mode = "unconstrained";  // place: unconstrained | geo | budget | exhaustive
  std::optional<double> gamma;
  std::optional<double> kappa;
  std::optional<double> threshold;
  std::optional<double> growth;
  std::optional<int> n_max;
  std::optional<int> t_max;
  std::optional<std::pair<int, int>> h_range;
  std::filesystem::path traces;    // directory written by simulate
  std::filesystem::path diagrams;  // diagrams.json written by calibrate
  std::optional<std::vector<int>> cells;  // calibrate; unset = every measured cell
};

int exit_code(ErrorCategory category);

/// "a..b" -> (a, b); throws MalformedSpec.
std::pair<int, int> parse_h_range(const std::string& text);
/// "all" -> unset, "" -> empty list, "1,2,5" -> ids; throws MalformedSpec.
std::optional<std::vector<int>> parse_cell_list(const std::string& text);

nlohmann::json options_document(const CommandOptions& opts);
CommandOptions options_from_document(const nlohmann::json& doc);

/// Runs one command and writes its result bundle (including metadata.json)
/// into opts.out. Failures are reported by throwing roadsense::Error.
void run_command(const CommandOptions& opts);

/// Re-runs the command recorded in a metadata.json into `out`, using the
/// embedded resolved scenario rather than the original scenario file.
void replay_command(const std::filesystem::path& metadata, const std::filesystem::path& out);

/// Logging threshold from ROADSENSE_LOG (error, warn, info, debug; default warn).
enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };
LogLevel log_level();
void log_message(LogLevel level, const std::string& text);

}  // namespace roadsense
