#include "coalfake/annotator.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <thread>

namespace coalfake {

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kLlm: return "llm";
    case Provenance::kHuman: return "human";
    case Provenance::kGold: return "gold";
  }
  return "unknown";
}

Provenance provenance_from_name(const std::string& s) {
  if (s == "llm") return Provenance::kLlm;
  if (s == "human") return Provenance::kHuman;
  if (s == "gold") return Provenance::kGold;
  throw InvalidArgument("unknown provenance '" + s + "'");
}

namespace annotator {

const char* prompt_mode_name(PromptMode m) { return m == PromptMode::kKnn ? "knn" : "plain"; }

PromptMode prompt_mode_from_name(const std::string& s) {
  if (s == "knn") return PromptMode::kKnn;
  if (s == "plain") return PromptMode::kPlain;
  throw InvalidArgument("unknown prompt mode '" + s + "'");
}

std::vector<Demonstration> retrieve_demos(const Embedding& query, const std::vector<Demonstration>& demos,
                                          std::size_t k) {
  if (demos.empty()) throw InvalidArgument("retrieve_demos: empty demonstration set");
  std::vector<std::pair<double, const Demonstration*>> ranked;
  ranked.reserve(demos.size());
  const double qn = query.norm();
  for (const auto& d : demos) {
    const double den = qn * d.embedding.norm();
    ranked.emplace_back(den > 0.0 ? query.dot(d.embedding) / den : 0.0, &d);
  }
  const std::size_t n = std::min(k, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n), ranked.end(),
                    [](const auto& a, const auto& b) {
                      return a.first != b.first ? a.first > b.first : a.second->record_id < b.second->record_id;
                    });
  std::vector<Demonstration> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(*ranked[i].second);
  return out;
}

std::string build_prompt(const std::vector<Demonstration>& demos, const std::string& query_text,
                         PromptMode mode) {
  if (mode == PromptMode::kKnn && demos.empty())
    throw InvalidArgument("build_prompt: knn mode needs at least one demonstration");

  std::string p =
      "I need your assistance in evaluating the authenticity of a news article. \n"
      "I will provide you the news article. You have to answer only with Fake or Real. \n";
  if (mode == PromptMode::kKnn) {
    p += "I will give you some examples of news. Your answer after [output] should be consistent with "
         "the following examples:\n\n";
    for (std::size_t i = 0; i < demos.size(); ++i) {
      p += "[example " + std::to_string(i + 1) + "]: \n";
      p += "[input news]: [news text: " + demos[i].text + "] \n";
      p += std::string("[output]: [This is ") + (demos[i].label == Label::kFake ? "Fake" : "Real") +
           " news]\n\n";
    }
  } else {
    p += "\n";
  }
  p += "[target news]: \n";
  p += "[input news]: [news text: " + query_text + "]\n";
  p += "[output]";
  return p;
}

std::optional<Label> parse_completion(const std::string& completion) {
  std::string lower(completion.size(), '\0');
  std::transform(completion.begin(), completion.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto f = lower.find("fake");
  const auto r = lower.find("real");
  if (f == std::string::npos && r == std::string::npos) return std::nullopt;
  return f < r ? Label::kFake : Label::kReal;
}

Annotator::Annotator(llm::Backend& backend, const encoder::Encoder& encoder, CostLedger& ledger, std::size_t k)
    : backend_(backend), encoder_(encoder), ledger_(ledger), k_(k) {}

Annotation Annotator::annotate(const NewsRecord& record, const std::vector<Demonstration>& demos,
                               PromptMode mode) {
  std::vector<Demonstration> shots;
  if (mode == PromptMode::kKnn) shots = retrieve_demos(encoder_.embed(record.text), demos, k_);
  const std::string prompt = build_prompt(shots, record.text, mode);

  Annotation a;
  a.record_id = record.id;
  a.provenance = Provenance::kLlm;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::string& sent = attempt == 0 ? prompt : prompt + "\nAnswer only with Fake or Real.";
    llm::Completion c = backend_.complete(sent);
    // Providers sometimes omit usage; fall back to the byte estimate so the ledger never
    // records a free call.
    if (c.prompt_tokens <= 0) c.prompt_tokens = approx_tokens(sent);
    if (c.completion_tokens <= 0) c.completion_tokens = approx_tokens(c.text);
    ledger_.charge_llm(record.id, c.prompt_tokens, c.completion_tokens);
    a.prompt_tokens += c.prompt_tokens;
    a.completion_tokens += c.completion_tokens;
    a.raw_response = c.text;
    a.label = parse_completion(c.text);
    if (a.label) break;
  }
  return a;
}

std::vector<Annotation> Annotator::annotate_batch(const std::vector<NewsRecord>& records,
                                                  const std::vector<Demonstration>& demos, PromptMode mode,
                                                  std::size_t parallelism) {
  std::vector<Annotation> out(records.size());
  parallelism = std::clamp<std::size_t>(parallelism, 1, std::max<std::size_t>(1, records.size()));
  if (parallelism == 1) {
    for (std::size_t i = 0; i < records.size(); ++i) out[i] = annotate(records[i], demos, mode);
    return out;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::jthread> workers;
  for (std::size_t w = 0; w < parallelism; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < records.size(); i = next++) {
        try {
          out[i] = annotate(records[i], demos, mode);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  workers.clear();
  if (failure) std::rethrow_exception(failure);
  return out;
}

Label Annotator::detect(const NewsRecord& record, const std::vector<Demonstration>& demos, PromptMode mode) {
  return annotate(record, demos, mode).label.value_or(Label::kReal);
}

}  // namespace annotator
}  // namespace coalfake
