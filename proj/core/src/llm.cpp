#include "coalfake/llm.hpp"

#include <cstdlib>
#include <thread>
#include <vector>

#include "httplib.h"

namespace coalfake::llm {

nlohmann::json chat_request_body(const std::string& model, const std::string& prompt) {
  return {{"model", model},
          {"temperature", 0},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
}

Completion parse_chat_response(const std::string& body) {
  try {
    const auto j = nlohmann::json::parse(body);
    Completion c;
    c.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    if (j.contains("usage")) {
      c.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
      c.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("malformed chat-completions response: ") + e.what());
  }
}

ChatCompletionsClient::ChatCompletionsClient(ChatOptions opts) : opts_(std::move(opts)) {
  if (opts_.api_key.empty())
    if (const char* k = std::getenv("COALFAKE_LLM_KEY")) opts_.api_key = k;

  // Split "scheme://host[:port]/prefix" so the client gets the origin and requests get the path.
  const std::string& url = opts_.base_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InvalidArgument("llm.base_url must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

Completion ChatCompletionsClient::complete(const std::string& prompt) {
  const std::string body = chat_request_body(opts_.model, prompt).dump();
  httplib::Headers headers;
  if (!opts_.api_key.empty()) headers.emplace("Authorization", "Bearer " + opts_.api_key);

  std::string last_error;
  for (int attempt = 0; attempt <= opts_.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(opts_.backoff * (1 << (attempt - 1)));
    httplib::Client cli(scheme_host_port_);
    cli.set_connection_timeout(opts_.timeout);
    cli.set_read_timeout(opts_.timeout);
    auto res = cli.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw TransportError("chat-completions request failed with HTTP " + std::to_string(res->status) +
                           ": " + res->body);
    return parse_chat_response(res->body);
  }
  throw TransportError("chat-completions request failed after " + std::to_string(opts_.max_retries + 1) +
                       " attempts: " + last_error);
}

MockLlm::MockLlm(std::map<std::string, Truth> by_text, double accuracy, std::uint64_t seed,
                 std::optional<double> same_source_accuracy)
    : by_text_(std::move(by_text)),
      accuracy_(accuracy),
      seed_(seed),
      same_source_accuracy_(same_source_accuracy) {}

namespace {

constexpr std::string_view kTextOpen = "[input news]: [news text: ";
constexpr std::string_view kTargetHeader = "[target news]: \n";
constexpr std::string_view kTargetClose = "]\n[output]";
constexpr std::string_view kDemoClose = "] \n[output]: ";

}  // namespace

Completion MockLlm::complete(const std::string& prompt) {
  Completion c;
  c.prompt_tokens = approx_tokens(prompt);
  c.completion_tokens = 4;

  const auto target_at = prompt.rfind(kTargetHeader);
  std::string target;
  if (target_at != std::string::npos) {
    const auto open = prompt.find(kTextOpen, target_at);
    const auto close = prompt.rfind(kTargetClose);
    if (open != std::string::npos && close != std::string::npos && close >= open + kTextOpen.size())
      target = prompt.substr(open + kTextOpen.size(), close - open - kTextOpen.size());
  }
  auto it = by_text_.find(target);
  if (it == by_text_.end()) {
    c.text = "I am unable to assess this article.";
    return c;
  }

  double acc = accuracy_;
  if (same_source_accuracy_) {
    std::size_t pos = 0;
    while ((pos = prompt.find(kTextOpen, pos)) != std::string::npos && pos < target_at) {
      const auto start = pos + kTextOpen.size();
      const auto end = prompt.find(kDemoClose, start);
      if (end == std::string::npos || end > target_at) break;
      auto demo = by_text_.find(prompt.substr(start, end - start));
      if (demo != by_text_.end() && demo->second.source == it->second.source) {
        acc = *same_source_accuracy_;
        break;
      }
      pos = end;
    }
  }

  const Label truth = it->second.label;
  const bool correct = hashed_uniform(seed_, target) < acc;
  const Label answer = correct ? truth : (truth == Label::kFake ? Label::kReal : Label::kFake);
  c.text = answer == Label::kFake ? "This is Fake news" : "This is Real news";
  return c;
}

}  // namespace coalfake::llm
