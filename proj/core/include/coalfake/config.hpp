#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "coalfake/annotator.hpp"
#include "coalfake/corpus.hpp"
#include "coalfake/model.hpp"
#include "coalfake/verifier.hpp"

namespace coalfake::config {

/// Every recognised key with its default value. Loaded configs are merged onto this and
/// may not introduce keys it lacks.
nlohmann::json defaults();

/// Recursive merge of `overlay` onto `base`. Throws InvalidArgument naming the dotted path
/// of any key that `base` does not have (open objects such as encoder options excepted).
nlohmann::json merge(const nlohmann::json& base, const nlohmann::json& overlay);

/// Sets a dotted key, e.g. ("sampling.strategy", "random"). The value is parsed as JSON
/// when possible, otherwise taken as a string. Unknown keys are rejected.
void apply_override(nlohmann::json& cfg, const std::string& dotted_key, const std::string& value);

/// Reads a JSON file and merges it onto defaults(). Relative corpus paths resolve against
/// the file's directory.
nlohmann::json load_file(const std::filesystem::path& path);

struct SourceFile {
  std::string name;
  std::filesystem::path path;
};

enum class HumanMode { kOracle, kInteractive };

struct SamplingConfig {
  std::string strategy = "domain_aware";  // or a baseline strategy name
  std::size_t M_per_round = 120;
  double epsilon = 1e-6;
};

struct DomainSpaceConfig {
  int k_min = 2;
  int k_max = 10;
  double stable_tol = 0.01;
};

struct AnnotatorConfig {
  annotator::PromptMode mode = annotator::PromptMode::kKnn;
  std::size_t k = 5;
  double rho = 0.2;
  std::size_t parallelism = 1;
  HumanMode human = HumanMode::kOracle;
  std::optional<double> human_timeout_s;  // interactive mode only; none waits forever
  double demo_confidence = 0.95;
  double demo_cap_factor = 5.0;
  std::string backend = "mock";  // "mock" | "chat"
  double mock_accuracy = 0.85;
  std::optional<double> mock_same_source_accuracy;
};

struct LlmConfig {
  std::string base_url;
  std::string model;
  int max_retries = 2;
  int timeout_s = 60;
};

struct StopConfig {
  int max_rounds = 10;
  int patience = 2;
  double min_delta = 1e-3;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string token;  // empty: no auth
  std::string cors_origin = "*";
};

/// Parsed, validated run configuration.
struct RunConfig {
  std::uint64_t seed = 0;
  std::vector<SourceFile> sources;
  std::optional<corpus::SynthSpec> synth;
  corpus::SplitSpec split;
  nlohmann::json encoder;
  DomainSpaceConfig domainspace;
  SamplingConfig sampling;
  AnnotatorConfig annotator;
  LlmConfig llm;
  verifier::ProbeParams probe;
  model::ModelConfig model;
  StopConfig stop;
  ServiceConfig service;

  nlohmann::json raw;  // the merged document this was parsed from
};

/// Validates and converts a merged document. Throws IoError for a missing corpus file and
/// InvalidArgument for out-of-range values.
RunConfig parse(const nlohmann::json& merged);

}  // namespace coalfake::config
