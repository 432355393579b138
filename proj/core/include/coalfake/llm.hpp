#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "coalfake/util.hpp"

namespace coalfake::llm {

struct Completion {
  std::string text;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

/// Thrown when the endpoint cannot be reached or keeps failing after retries.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// A text-completion backend. Implementations must be safe to call concurrently.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual Completion complete(const std::string& prompt) = 0;
};

struct ChatOptions {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-3.5-turbo";
  std::string api_key;  // taken from COALFAKE_LLM_KEY when empty
  int max_retries = 2;
  std::chrono::milliseconds backoff{500};
  std::chrono::seconds timeout{60};
};

/// Request body for a single-user-message chat completion at temperature 0.
nlohmann::json chat_request_body(const std::string& model, const std::string& prompt);

/// Extracts the first choice's content and token usage. Throws TransportError on a
/// malformed response.
Completion parse_chat_response(const std::string& body);

/// Chat-completions client over HTTP(S).
class ChatCompletionsClient final : public Backend {
 public:
  explicit ChatCompletionsClient(ChatOptions opts);
  Completion complete(const std::string& prompt) override;

 private:
  ChatOptions opts_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

/// Offline stand-in: answers with the gold label of the target article, flipped with a
/// per-article seeded probability of 1 - accuracy. When `same_source_accuracy` is set and
/// a demonstration from the target's source appears in the prompt, that accuracy applies
/// instead. Token usage is synthetic: prompt bytes / 4 in, 4 out.
class MockLlm final : public Backend {
 public:
  struct Truth {
    Label label;
    std::string source;
  };

  MockLlm(std::map<std::string, Truth> by_text, double accuracy, std::uint64_t seed,
          std::optional<double> same_source_accuracy = std::nullopt);

  Completion complete(const std::string& prompt) override;

 private:
  std::map<std::string, Truth> by_text_;
  double accuracy_;
  std::uint64_t seed_;
  std::optional<double> same_source_accuracy_;
};

}  // namespace coalfake::llm
