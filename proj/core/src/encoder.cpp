#include "coalfake/encoder.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>

#include "coalfake/util.hpp"

namespace coalfake::encoder {

std::vector<Embedding> Encoder::embed_batch(std::span<const std::string> texts) const {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    try {
      out.push_back(embed(texts[i]));
    } catch (const Error& e) {
      throw InvalidArgument("embed_batch: element " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

MockEncoder::MockEncoder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim <= 0) throw InvalidArgument("encoder dim must be positive");
}

Eigen::VectorXd MockEncoder::token_vector(std::string_view token) const {
  Rng rng(derive_seed(seed_, token));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(dim_);
  for (int i = 0; i < dim_; ++i) v[i] = gauss(rng);
  return v;
}

Eigen::VectorXd MockEncoder::raw(std::string_view text) const {
  if (trim(text).empty()) throw InvalidArgument("cannot embed empty text");
  auto tokens = tokenize(text);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim_);
  if (tokens.empty()) return token_vector(text);
  for (const auto& t : tokens) sum += token_vector(t);
  return sum;
}

Embedding MockEncoder::embed(std::string_view text) const {
  Eigen::VectorXd v = raw(text);
  const double n = v.norm();
  // A sum of Gaussian vectors is zero with probability 0; fall back to the text hash anyway.
  if (n == 0.0) return token_vector(text).normalized();
  return v / n;
}

struct PretrainedEncoder::Impl {
  std::mutex mu;
};

PretrainedEncoder::PretrainedEncoder(std::string command, int dim)
    : command_(std::move(command)), dim_(dim), impl_(std::make_unique<Impl>()) {}

PretrainedEncoder::~PretrainedEncoder() = default;

Embedding PretrainedEncoder::embed(std::string_view text) const {
  std::string t(text);
  return embed_batch(std::span<const std::string>(&t, 1)).front();
}

std::vector<Embedding> PretrainedEncoder::embed_batch(std::span<const std::string> texts) const {
  if (texts.empty()) return {};
  for (std::size_t i = 0; i < texts.size(); ++i)
    if (trim(texts[i]).empty())
      throw InvalidArgument("embed_batch: element " + std::to_string(i) + ": cannot embed empty text");

  std::lock_guard lock(impl_->mu);
  namespace fs = std::filesystem;
  const fs::path input = fs::temp_directory_path() /
                         ("coalfake-embed-" + std::to_string(fnv1a(texts.front())) + ".json");
  {
    std::ofstream out(input);
    out << nlohmann::json(std::vector<std::string>(texts.begin(), texts.end())).dump();
  }
  const std::string cmd = command_ + " '" + input.string() + "' 2>/dev/null";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw Error("pretrained encoder unavailable: cannot start '" + command_ + "'");
  std::string output;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) output.append(buf, n);
  const int status = ::pclose(pipe);
  fs::remove(input);
  if (status != 0) throw Error("pretrained encoder unavailable: '" + command_ + "' exited with status " +
                               std::to_string(status));

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(output);
  } catch (const nlohmann::json::parse_error&) {
    throw Error("pretrained encoder returned malformed output");
  }
  if (!j.is_array() || j.size() != texts.size())
    throw Error("pretrained encoder returned " + std::to_string(j.size()) + " vectors for " +
                std::to_string(texts.size()) + " texts");
  std::vector<Embedding> out;
  for (const auto& row : j) {
    auto vals = row.get<std::vector<double>>();
    if (static_cast<int>(vals.size()) != dim_)
      throw Error("pretrained encoder dimension " + std::to_string(vals.size()) + " != configured " +
                  std::to_string(dim_));
    Embedding e = Eigen::Map<Eigen::VectorXd>(vals.data(), dim_);
    const double n = e.norm();
    if (!(n > 0.0) || !e.allFinite()) throw Error("pretrained encoder produced a degenerate vector");
    out.push_back(e / n);
  }
  return out;
}

std::shared_ptr<const Encoder> make_encoder(const nlohmann::json& cfg) {
  const std::string backend = cfg.value("backend", "mock");
  if (backend == "mock")
    return std::make_shared<MockEncoder>(cfg.value("dim", 16), cfg.value("seed", std::uint64_t{0}));
  if (backend == "pretrained")
    return std::make_shared<PretrainedEncoder>(
        cfg.value("command", std::string("python3 tools/sbert_embed.py")), cfg.value("dim", 384));
  throw InvalidArgument("unknown encoder backend '" + backend + "'");
}

}  // namespace coalfake::encoder
