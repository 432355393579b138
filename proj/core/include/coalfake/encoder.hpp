#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace coalfake {

/// L2-normalized sentence embedding.
using Embedding = Eigen::VectorXd;

namespace encoder {

class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual int dim() const = 0;

  /// Deterministic, unit-norm. Throws InvalidArgument on empty text.
  virtual Embedding embed(std::string_view text) const = 0;

  /// Elementwise equal to embed. Errors name the failing index.
  virtual std::vector<Embedding> embed_batch(std::span<const std::string> texts) const;
};

/// Offline encoder: every token hashes to a seeded Gaussian vector and a text embeds to
/// the normalized sum of its token vectors. Reentrant; holds no mutable state.
class MockEncoder final : public Encoder {
 public:
  MockEncoder(int dim, std::uint64_t seed);

  int dim() const override { return dim_; }
  Embedding embed(std::string_view text) const override;

  /// Unnormalized sum of token vectors.
  Eigen::VectorXd raw(std::string_view text) const;
  Eigen::VectorXd token_vector(std::string_view token) const;

 private:
  int dim_;
  std::uint64_t seed_;
};

/// Runs a local sentence-embedding model through an external command. The command reads a
/// JSON array of strings from the file given as its last argument and prints a JSON array
/// of vectors on stdout. Calls are serialized internally.
class PretrainedEncoder final : public Encoder {
 public:
  PretrainedEncoder(std::string command, int dim);
  ~PretrainedEncoder() override;

  int dim() const override { return dim_; }
  Embedding embed(std::string_view text) const override;
  std::vector<Embedding> embed_batch(std::span<const std::string> texts) const override;

 private:
  struct Impl;
  std::string command_;
  int dim_;
  std::unique_ptr<Impl> impl_;
};

/// {"backend": "mock"|"pretrained", "dim": int, "seed": int, "command": str}
std::shared_ptr<const Encoder> make_encoder(const nlohmann::json& cfg);

}  // namespace encoder
}  // namespace coalfake
