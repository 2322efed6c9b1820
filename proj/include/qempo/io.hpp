#pragma once

// File formats: scenarios, trainer configs and policy files are JSON; time
// series are CSV. Everything written here is deterministic so identical
// inputs give byte-identical files.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "qempo/closed_form.hpp"
#include "qempo/instance.hpp"
#include "qempo/offline.hpp"
#include "qempo/online.hpp"
#include "qempo/solver.hpp"

namespace qempo {

using Json = nlohmann::ordered_json;

// Parses scenario text. Syntax errors report line and column; schema and
// invariant violations report the instance id and field path of the first
// problem found. Throws ParseError.
ScenarioSuite parse_scenario(const std::string& text, const std::string& source = "<scenario>");
ScenarioSuite load_scenario(const std::filesystem::path& path);

Json scenario_to_json(const ScenarioSuite& suite);
std::string dump_json(const Json& value);

OfflineConfig parse_offline_config(const Json& value);
OnlineConfig parse_online_config(const Json& value);
Json offline_config_to_json(const OfflineConfig& config);
Json online_config_to_json(const OnlineConfig& config);
Json load_json_file(const std::filesystem::path& path);

Json policy_to_json(const LogitPolicy& policy, std::uint64_t seed, const Json& metadata);
LogitPolicy policy_from_json(const Json& value);

Json closed_form_to_json(const ClosedFormResult& result);
Json solve_report_to_json(const SolveReport& report);
Json kkt_report_to_json(const KktReport& report);
Json method_params_to_json(const MethodParams& params);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Records one CLI run. Result files are listed relative to the output dir.
struct RunManifest {
  std::string command;
  Json config = Json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
  double wall_clock_seconds = 0.0;
};

Json manifest_to_json(const RunManifest& manifest);

// Library version recorded in manifests.
inline constexpr const char* kVersion = "1.0.0";

}  // namespace qempo
