#include "coalfake/config.hpp"

#include <fstream>

#include "coalfake/sampler.hpp"
#include "coalfake/util.hpp"

namespace coalfake::config {

using nlohmann::json;

json defaults() {
  const model::ModelConfig m;
  const verifier::ProbeParams p;
  return {
      {"seed", 0},
      {"corpus",
       {{"sources", json::array()},
        {"demo_per_source", 100},
        {"pool_frac", 0.75},
        {"synth",
         {{"enabled", false},
          {"n_domains", 3},
          {"per_domain", 100},
          {"domain_sizes", json::array()},
          {"noise", 0.0},
          {"anchor_words", 3},
          {"anchor_repeat", 4},
          {"vocab_per_domain", 12},
          {"words_per_record", 6},
          {"margin", 0.02}}}}},
      {"encoder", {{"backend", "mock"}, {"dim", 16}, {"seed", 0}}},
      {"domainspace", {{"k_min", 2}, {"k_max", 10}, {"stable_tol", 0.01}}},
      {"sampling", {{"strategy", "domain_aware"}, {"M_per_round", 120}, {"epsilon", 1e-6}}},
      {"annotator",
       {{"mode", "knn"},
        {"k", 5},
        {"rho", 0.2},
        {"parallelism", 1},
        {"human", "oracle"},
        {"human_timeout_s", nullptr},
        {"demo_confidence", 0.95},
        {"demo_cap_factor", 5.0},
        {"backend", "mock"},
        {"mock_accuracy", 0.85},
        {"mock_same_source_accuracy", nullptr}}},
      {"llm",
       {{"base_url", "https://api.openai.com/v1"}, {"model", "gpt-3.5-turbo"}, {"max_retries", 2}, {"timeout_s", 60}}},
      {"verifier",
       {{"lr", p.lr}, {"dim", p.dim}, {"ngram", p.ngram}, {"folds", p.folds}, {"epochs", p.epochs}}},
      {"model", [&] {
         json j = model::to_json(m);
         j.erase("seed");  // derived from the run seed per round
         return j;
       }()},
      {"stop", {{"max_rounds", 10}, {"patience", 2}, {"min_delta", 1e-3}}},
      {"service", {{"host", "127.0.0.1"}, {"port", 8080}, {"token", ""}, {"cors_origin", "*"}}},
  };
}

namespace {

// Objects whose keys are backend-specific and therefore not checked.
bool is_open(const std::string& path) { return path == "encoder"; }

void merge_into(json& base, const json& overlay, const std::string& path) {
  for (const auto& [key, value] : overlay.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) {
      if (!is_open(path)) throw InvalidArgument("unknown config key '" + here + "'");
      base[key] = value;
      continue;
    }
    if (base[key].is_object() && value.is_object())
      merge_into(base[key], value, here);
    else if (base[key].is_object() && !is_open(here))
      throw InvalidArgument("config key '" + here + "' must be an object");
    else
      base[key] = value;
  }
}

}  // namespace

json merge(const json& base, const json& overlay) {
  if (!overlay.is_object()) throw InvalidArgument("config must be a JSON object");
  json out = base;
  merge_into(out, overlay, "");
  return out;
}

void apply_override(json& cfg, const std::string& dotted_key, const std::string& value) {
  if (dotted_key.empty()) throw InvalidArgument("empty override key");
  // model.lambda1..model.lambda5 address the entries of model.lambdas.
  if (dotted_key.size() == 13 && dotted_key.rfind("model.lambda", 0) == 0 && dotted_key[12] >= '1' &&
      dotted_key[12] <= '5') {
    try {
      cfg["model"]["lambdas"][static_cast<std::size_t>(dotted_key[12] - '1')] = std::stod(value);
    } catch (const std::exception&) {
      throw InvalidArgument("override " + dotted_key + " needs a number, got '" + value + "'");
    }
    return;
  }
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;
  }
  json* node = &cfg;
  std::string path;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const std::string key = dotted_key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    const bool open = is_open(path);
    path = path.empty() ? key : path + "." + key;
    if (key.empty()) throw InvalidArgument("malformed override key '" + dotted_key + "'");
    if (!node->is_object() || (!node->contains(key) && !open))
      throw InvalidArgument("unknown config key '" + dotted_key + "'");
    if (dot == std::string::npos) {
      if ((*node)[key].is_object() && !parsed.is_object())
        throw InvalidArgument("config key '" + dotted_key + "' is a section, not a value");
      (*node)[key] = parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

json load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open config file: " + path.string());
  json user;
  try {
    user = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
  json merged = merge(defaults(), user);
  for (auto& s : merged["corpus"]["sources"]) {
    if (!s.is_object() || !s.contains("path")) continue;
    std::filesystem::path p = s["path"].get<std::string>();
    if (p.is_relative()) s["path"] = (path.parent_path() / p).lexically_normal().string();
  }
  return merged;
}

namespace {

template <class T>
std::optional<T> opt(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<T>();
}

}  // namespace

RunConfig parse(const json& merged) {
  RunConfig c;
  c.raw = merged;
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();

    const auto& corp = merged.at("corpus");
    for (const auto& s : corp.at("sources")) {
      SourceFile f{s.at("name").get<std::string>(), s.at("path").get<std::string>()};
      if (!std::filesystem::exists(f.path)) throw IoError(f.path.string(), "corpus file not found: " + f.path.string());
      c.sources.push_back(std::move(f));
    }
    c.split.demo_per_source = corp.at("demo_per_source").get<std::size_t>();
    c.split.pool_frac = corp.at("pool_frac").get<double>();
    c.split.seed = derive_seed(c.seed, "split");
    const auto& sj = corp.at("synth");
    if (sj.at("enabled").get<bool>()) {
      corpus::SynthSpec s;
      s.n_domains = sj.at("n_domains").get<std::size_t>();
      s.per_domain = sj.at("per_domain").get<std::size_t>();
      s.domain_sizes = sj.at("domain_sizes").get<std::vector<std::size_t>>();
      s.noise = sj.at("noise").get<double>();
      s.anchor_words = sj.at("anchor_words").get<std::size_t>();
      s.anchor_repeat = sj.at("anchor_repeat").get<std::size_t>();
      s.vocab_per_domain = sj.at("vocab_per_domain").get<std::size_t>();
      s.words_per_record = sj.at("words_per_record").get<std::size_t>();
      s.margin = sj.at("margin").get<double>();
      s.seed = derive_seed(c.seed, "synth");
      s.encoder_dim = merged.at("encoder").value("dim", 16);
      s.encoder_seed = merged.at("encoder").value("seed", std::uint64_t{0});
      c.synth = s;
    }
    if (c.sources.empty() && !c.synth) throw InvalidArgument("no corpus: set corpus.sources or corpus.synth.enabled");
    if (!(c.split.pool_frac > 0.0 && c.split.pool_frac < 1.0)) throw InvalidArgument("corpus.pool_frac must lie in (0, 1)");

    c.encoder = merged.at("encoder");

    const auto& dj = merged.at("domainspace");
    c.domainspace = {dj.at("k_min").get<int>(), dj.at("k_max").get<int>(), dj.at("stable_tol").get<double>()};
    if (c.domainspace.k_min < 2 || c.domainspace.k_max < c.domainspace.k_min)
      throw InvalidArgument("domainspace needs 2 <= k_min <= k_max");

    const auto& sa = merged.at("sampling");
    c.sampling.strategy = sa.at("strategy").get<std::string>();
    if (c.sampling.strategy != "domain_aware") {
      const auto s = sampler::strategy_from_name(c.sampling.strategy);
      if (s == sampler::Strategy::kDomainAwareCold || s == sampler::Strategy::kDomainAwareEntropy)
        throw InvalidArgument("use sampling.strategy = \"domain_aware\" for the domain-aware strategy");
    }
    c.sampling.M_per_round = sa.at("M_per_round").get<std::size_t>();
    c.sampling.epsilon = sa.at("epsilon").get<double>();
    if (c.sampling.M_per_round == 0) throw InvalidArgument("sampling.M_per_round must be positive");
    if (!(c.sampling.epsilon > 0.0)) throw InvalidArgument("sampling.epsilon must be positive");

    const auto& an = merged.at("annotator");
    c.annotator.mode = annotator::prompt_mode_from_name(an.at("mode").get<std::string>());
    c.annotator.k = an.at("k").get<std::size_t>();
    c.annotator.rho = an.at("rho").get<double>();
    if (!(c.annotator.rho >= 0.0 && c.annotator.rho <= 1.0)) throw InvalidArgument("annotator.rho must lie in [0, 1]");
    c.annotator.parallelism = std::max<std::size_t>(1, an.at("parallelism").get<std::size_t>());
    const auto human = an.at("human").get<std::string>();
    if (human == "oracle")
      c.annotator.human = HumanMode::kOracle;
    else if (human == "interactive")
      c.annotator.human = HumanMode::kInteractive;
    else
      throw InvalidArgument("annotator.human must be \"oracle\" or \"interactive\"");
    c.annotator.human_timeout_s = opt<double>(an, "human_timeout_s");
    c.annotator.demo_confidence = an.at("demo_confidence").get<double>();
    c.annotator.demo_cap_factor = an.at("demo_cap_factor").get<double>();
    c.annotator.backend = an.at("backend").get<std::string>();
    if (c.annotator.backend != "mock" && c.annotator.backend != "chat")
      throw InvalidArgument("annotator.backend must be \"mock\" or \"chat\"");
    c.annotator.mock_accuracy = an.at("mock_accuracy").get<double>();
    c.annotator.mock_same_source_accuracy = opt<double>(an, "mock_same_source_accuracy");

    const auto& lj = merged.at("llm");
    c.llm = {lj.at("base_url").get<std::string>(), lj.at("model").get<std::string>(), lj.at("max_retries").get<int>(),
             lj.at("timeout_s").get<int>()};

    const auto& vj = merged.at("verifier");
    c.probe.lr = vj.at("lr").get<double>();
    c.probe.dim = vj.at("dim").get<int>();
    c.probe.ngram = vj.at("ngram").get<int>();
    c.probe.folds = vj.at("folds").get<int>();
    c.probe.epochs = vj.at("epochs").get<int>();
    c.probe.seed = derive_seed(c.seed, "probe");

    c.model = model::model_config_from_json(merged.at("model"));
    c.model.seed = derive_seed(c.seed, "model");
    c.model.validate();

    const auto& st = merged.at("stop");
    c.stop = {st.at("max_rounds").get<int>(), st.at("patience").get<int>(), st.at("min_delta").get<double>()};
    if (c.stop.max_rounds < 1 || c.stop.patience < 1) throw InvalidArgument("stop.max_rounds and stop.patience must be >= 1");

    const auto& sv = merged.at("service");
    c.service = {sv.at("host").get<std::string>(), sv.at("port").get<int>(),
                 sv.at("token").is_null() ? std::string() : sv.at("token").get<std::string>(),
                 sv.at("cors_origin").get<std::string>()};
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("invalid config: ") + e.what());
  }
  return c;
}

}  // namespace coalfake::config
