#include "qempo/io.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "qempo/errors.hpp"

namespace qempo {

namespace {

[[noreturn]] void schema_error(const std::string& source, const std::string& instance_id,
                               const std::string& path, const std::string& what) {
  std::string msg = source + ": ";
  if (!instance_id.empty()) msg += "instance '" + instance_id + "' ";
  msg += "at " + path + ": " + what;
  throw ParseError(msg);
}

std::string line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

Json parse_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source + ": syntax error at " + line_column(text, e.byte) + ": " + e.what());
  }
}

double require_number(const Json& obj, const char* key, const std::string& source,
                      const std::string& id, const std::string& path) {
  if (!obj.contains(key)) schema_error(source, id, path + "." + key, "missing field");
  const Json& v = obj.at(key);
  if (!v.is_number()) schema_error(source, id, path + "." + key, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) schema_error(source, id, path + "." + key, "must be finite");
  return d;
}

}  // namespace

ScenarioSuite parse_scenario(const std::string& text, const std::string& source) {
  const Json root = parse_text(text, source);
  if (!root.is_object()) schema_error(source, "", "$", "expected an object");
  std::uint64_t seed = 0;
  if (root.contains("seed")) {
    const Json& s = root.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
      schema_error(source, "", "seed", "expected an unsigned integer");
    }
    seed = s.get<std::uint64_t>();
  }
  if (!root.contains("instances") || !root.at("instances").is_array()) {
    schema_error(source, "", "instances", "expected an array");
  }
  std::vector<AlignmentInstance> instances;
  std::set<std::string> seen;
  const Json& list = root.at("instances");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string path = "instances[" + std::to_string(i) + "]";
    const Json& obj = list[i];
    if (!obj.is_object()) schema_error(source, "", path, "expected an object");
    if (!obj.contains("id") || !obj.at("id").is_string()) {
      schema_error(source, "", path + ".id", "expected a string");
    }
    const std::string id = obj.at("id").get<std::string>();
    if (!seen.insert(id).second) schema_error(source, id, path + ".id", "duplicate instance id");
    if (!obj.contains("candidates") || !obj.at("candidates").is_array()) {
      schema_error(source, id, path + ".candidates", "expected an array");
    }
    const Json& cands = obj.at("candidates");
    if (cands.size() < 2) schema_error(source, id, path + ".candidates", "needs at least 2");
    std::vector<CandidateOutcome> candidates;
    double total = 0.0;
    for (std::size_t j = 0; j < cands.size(); ++j) {
      const std::string cpath = path + ".candidates[" + std::to_string(j) + "]";
      const Json& c = cands[j];
      if (!c.is_object()) schema_error(source, id, cpath, "expected an object");
      CandidateOutcome out;
      out.index = j;
      if (c.contains("label")) {
        if (!c.at("label").is_string()) schema_error(source, id, cpath + ".label", "expected a string");
        out.label = c.at("label").get<std::string>();
      }
      out.reward = require_number(c, "reward", source, id, cpath);
      out.ref_prob = require_number(c, "ref_prob", source, id, cpath);
      if (out.ref_prob < 0.0) schema_error(source, id, cpath + ".ref_prob", "must be >= 0");
      if (!c.contains("quality") || !c.at("quality").is_string()) {
        schema_error(source, id, cpath + ".quality", "expected \"positive\" or \"negative\"");
      }
      const std::string q = c.at("quality").get<std::string>();
      if (q == "positive") {
        out.quality = Quality::positive;
      } else if (q == "negative") {
        out.quality = Quality::negative;
      } else {
        schema_error(source, id, cpath + ".quality", "expected \"positive\" or \"negative\"");
      }
      total += out.ref_prob;
      candidates.push_back(std::move(out));
    }
    if (std::abs(total - 1.0) > kDistributionTolerance) {
      schema_error(source, id, path + ".candidates[*].ref_prob",
                   "sums to " + std::to_string(total) + ", expected 1");
    }
    instances.emplace_back(id, std::move(candidates));
  }
  return ScenarioSuite(std::move(instances), seed);
}

ScenarioSuite load_scenario(const std::filesystem::path& path) {
  return parse_scenario(read_text_file(path), path.string());
}

Json scenario_to_json(const ScenarioSuite& suite) {
  Json root = Json::object();
  root["seed"] = suite.seed();
  Json list = Json::array();
  for (const auto& inst : suite.instances()) {
    Json obj = Json::object();
    obj["id"] = inst.id();
    Json cands = Json::array();
    for (const auto& c : inst.candidates()) {
      Json cj = Json::object();
      if (!c.label.empty()) cj["label"] = c.label;
      cj["reward"] = c.reward;
      cj["quality"] = c.quality == Quality::positive ? "positive" : "negative";
      cj["ref_prob"] = c.ref_prob;
      cands.push_back(std::move(cj));
    }
    obj["candidates"] = std::move(cands);
    list.push_back(std::move(obj));
  }
  root["instances"] = std::move(list);
  return root;
}

std::string dump_json(const Json& value) { return value.dump(2) + "\n"; }

namespace {

template <typename T>
void read_if(const Json& obj, const char* key, T& into) {
  if (!obj.contains(key)) return;
  try {
    into = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config field '") + key + "': " + e.what());
  }
}

const std::set<std::string> kOfflineKeys = {"method",        "beta",       "inv_lambda",
                                            "inv_lambda1",   "ratio21",    "learning_rate",
                                            "steps",         "batch_size", "seed",
                                            "eval_interval"};
const std::set<std::string> kOnlineKeys = {
    "method", "group_size", "inv_lambda", "inv_lambda1",   "ratio21",       "beta",
    "learning_rate", "steps", "seed",     "gate",          "std_normalize", "form",
    "eval_interval", "eval_samples",      "pass_k"};

void reject_unknown(const Json& obj, const std::set<std::string>& keys) {
  if (!obj.is_object()) throw ParseError("config must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!keys.count(key)) throw ParseError("unknown config field '" + key + "'");
  }
}

}  // namespace

OfflineConfig parse_offline_config(const Json& value) {
  reject_unknown(value, kOfflineKeys);
  OfflineConfig config;
  std::string method = to_string(config.method);
  read_if(value, "method", method);
  try {
    config.method = offline_method_from_string(method);
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
  read_if(value, "beta", config.beta);
  read_if(value, "inv_lambda", config.inv_lambda);
  read_if(value, "inv_lambda1", config.inv_lambda1);
  read_if(value, "ratio21", config.ratio21);
  read_if(value, "learning_rate", config.learning_rate);
  read_if(value, "steps", config.steps);
  read_if(value, "batch_size", config.batch_size);
  read_if(value, "seed", config.seed);
  read_if(value, "eval_interval", config.eval_interval);
  return config;
}

OnlineConfig parse_online_config(const Json& value) {
  reject_unknown(value, kOnlineKeys);
  OnlineConfig config;
  std::string method = to_string(config.method);
  std::string gate = to_string(config.gate);
  std::string form = to_string(config.form);
  read_if(value, "method", method);
  read_if(value, "gate", gate);
  read_if(value, "form", form);
  try {
    config.method = online_method_from_string(method);
    config.gate = variance_gate_from_string(gate);
    config.form = online_loss_form_from_string(form);
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
  read_if(value, "group_size", config.group_size);
  read_if(value, "inv_lambda", config.inv_lambda);
  read_if(value, "inv_lambda1", config.inv_lambda1);
  read_if(value, "ratio21", config.ratio21);
  read_if(value, "beta", config.beta);
  read_if(value, "learning_rate", config.learning_rate);
  read_if(value, "steps", config.steps);
  read_if(value, "seed", config.seed);
  read_if(value, "std_normalize", config.std_normalize);
  read_if(value, "eval_interval", config.eval_interval);
  read_if(value, "eval_samples", config.eval_samples);
  read_if(value, "pass_k", config.pass_k);
  return config;
}

Json offline_config_to_json(const OfflineConfig& config) {
  Json j = Json::object();
  j["method"] = to_string(config.method);
  j["beta"] = config.beta;
  j["inv_lambda"] = config.inv_lambda;
  j["inv_lambda1"] = config.inv_lambda1;
  j["ratio21"] = config.ratio21;
  j["learning_rate"] = config.learning_rate;
  j["steps"] = config.steps;
  j["batch_size"] = config.batch_size;
  j["seed"] = config.seed;
  j["eval_interval"] = config.eval_interval;
  return j;
}

Json online_config_to_json(const OnlineConfig& config) {
  Json j = Json::object();
  j["method"] = to_string(config.method);
  j["group_size"] = config.group_size;
  j["inv_lambda"] = config.inv_lambda;
  j["inv_lambda1"] = config.inv_lambda1;
  j["ratio21"] = config.ratio21;
  j["beta"] = config.beta;
  j["learning_rate"] = config.learning_rate;
  j["steps"] = config.steps;
  j["seed"] = config.seed;
  j["gate"] = to_string(config.gate);
  j["std_normalize"] = config.std_normalize;
  j["form"] = to_string(config.form);
  j["eval_interval"] = config.eval_interval;
  j["eval_samples"] = config.eval_samples;
  j["pass_k"] = config.pass_k;
  return j;
}

Json load_json_file(const std::filesystem::path& path) {
  return parse_text(read_text_file(path), path.string());
}

Json policy_to_json(const LogitPolicy& policy, std::uint64_t seed, const Json& metadata) {
  Json root = Json::object();
  root["seed"] = seed;
  Json list = Json::array();
  for (std::size_t i = 0; i < policy.size(); ++i) {
    Json obj = Json::object();
    obj["id"] = policy.instance_ids()[i];
    obj["logits"] = policy.logits(i);
    list.push_back(std::move(obj));
  }
  root["instances"] = std::move(list);
  root["metadata"] = metadata;
  return root;
}

LogitPolicy policy_from_json(const Json& value) {
  try {
    std::vector<std::string> ids;
    std::vector<std::vector<double>> logits;
    for (const auto& obj : value.at("instances")) {
      ids.push_back(obj.at("id").get<std::string>());
      logits.push_back(obj.at("logits").get<std::vector<double>>());
    }
    return LogitPolicy(std::move(ids), std::move(logits));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("policy file: ") + e.what());
  }
}

namespace {

// JSON has no infinities or NaN; those are written as strings.
Json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

}  // namespace

Json closed_form_to_json(const ClosedFormResult& result) {
  Json j = Json::object();
  Json probs = Json::array();
  for (double p : result.dist.probs()) probs.push_back(number(p));
  j["probs"] = std::move(probs);
  j["log_partition"] = number(result.log_partition);
  j["entropy"] = number(result.entropy);
  j["expected_reward"] = number(result.expected_reward);
  j["kl_to_ref"] = number(result.kl_to_ref);
  j["excluded"] = result.excluded;
  return j;
}

Json solve_report_to_json(const SolveReport& report) {
  Json j = Json::object();
  Json mult = Json::array();
  for (double m : report.multipliers) mult.push_back(number(m));
  j["multipliers"] = std::move(mult);
  j["reward_residual"] = number(report.reward_residual);
  j["kl_residual"] = report.kl_residual ? number(*report.kl_residual) : Json(nullptr);
  j["iterations"] = report.iterations;
  j["status"] = to_string(report.status);
  j["reward_status"] = to_string(report.reward_status);
  j["kl_status"] = report.kl_status ? Json(to_string(*report.kl_status)) : Json(nullptr);
  return j;
}

Json kkt_report_to_json(const KktReport& report) {
  Json j = Json::object();
  j["stationarity"] = report.stationarity;
  j["primal_feasibility"] = report.primal_feasibility;
  j["dual_feasibility"] = report.dual_feasibility;
  j["complementary_slackness"] = report.complementary_slackness;
  j["stationarity_residual"] = number(report.stationarity_residual);
  j["passed"] = report.passed();
  if (!report.detail.empty()) j["detail"] = report.detail;
  return j;
}

Json method_params_to_json(const MethodParams& params) {
  Json j = Json::object();
  j["method"] = to_string(params.method);
  switch (params.method) {
    case Method::rlhf: j["beta"] = params.beta; break;
    case Method::qempo: j["lambda"] = params.lambda; break;
    case Method::qempo_kl:
      j["lambda1"] = params.lambda1;
      j["lambda2"] = params.lambda2;
      break;
  }
  return j;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write '" + path.string() + "'");
  out << text;
}

Json manifest_to_json(const RunManifest& manifest) {
  Json j = Json::object();
  j["command"] = manifest.command;
  j["config"] = manifest.config;
  j["seed"] = manifest.seed;
  j["version"] = kVersion;
  j["outputs"] = manifest.outputs;
  j["wall_clock_seconds"] = manifest.wall_clock_seconds;
  return j;
}

}  // namespace qempo
