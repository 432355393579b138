#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace coalfake {

// Error hierarchy. The service maps these onto HTTP status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class Conflict : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(std::string path, const std::string& what)
      : Error(what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Binary veracity label. Fake is the positive class.
enum class Label : int { kReal = 0, kFake = 1 };

inline int to_int(Label l) { return static_cast<int>(l); }
inline Label label_from_int(int v) { return v != 0 ? Label::kFake : Label::kReal; }
const char* label_name(Label l);

/// Accepts "fake"/"real" (any case) and 0/1. Returns nullopt otherwise.
std::optional<Label> parse_label(std::string_view s);

/// 64-bit FNV-1a. Stable across platforms and runs.
std::uint64_t fnv1a(std::string_view s, std::uint64_t basis = 1469598103934665603ULL);

/// Derives an independent stream seed from a parent seed and a tag.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Uniform [0,1) value that depends only on (seed, key).
double hashed_uniform(std::uint64_t seed, std::string_view key);

using Rng = std::mt19937_64;

/// Lowercased alphanumeric word tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Approximate token count used for cost accounting: ceil(bytes / 4), at least 1.
std::int64_t approx_tokens(std::string_view text);

std::string trim(std::string_view s);

/// Hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

}  // namespace coalfake
