#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coalfake/corpus.hpp"
#include "coalfake/cost.hpp"
#include "coalfake/encoder.hpp"
#include "coalfake/llm.hpp"

namespace coalfake {

enum class Provenance { kLlm, kHuman, kGold };
const char* provenance_name(Provenance p);
Provenance provenance_from_name(const std::string& s);

namespace annotator {

/// A labelled exemplar available for in-context prompts.
struct Demonstration {
  std::string record_id;
  std::string text;
  Label label = Label::kReal;
  Embedding embedding;
};

enum class PromptMode { kKnn, kPlain };
const char* prompt_mode_name(PromptMode m);
PromptMode prompt_mode_from_name(const std::string& s);

struct Annotation {
  std::string record_id;
  std::optional<Label> label;  // nullopt: abstained after one reprompt
  Provenance provenance = Provenance::kLlm;
  std::string raw_response;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

/// The min(k, |demos|) demonstrations most cosine-similar to the query, most similar first.
/// Ties break by record id.
std::vector<Demonstration> retrieve_demos(const Embedding& query, const std::vector<Demonstration>& demos,
                                          std::size_t k = 5);

/// Fills the annotation prompt template. Plain mode drops the examples block.
std::string build_prompt(const std::vector<Demonstration>& demos, const std::string& query_text,
                         PromptMode mode);

/// First case-insensitive "fake" or "real" in the completion.
std::optional<Label> parse_completion(const std::string& completion);

/// LLM annotator: k-NN demonstration retrieval, prompting, parsing and cost tracking.
class Annotator {
 public:
  Annotator(llm::Backend& backend, const encoder::Encoder& encoder, CostLedger& ledger, std::size_t k = 5);

  Annotation annotate(const NewsRecord& record, const std::vector<Demonstration>& demos, PromptMode mode);

  /// Order-preserving; runs up to `parallelism` calls at once.
  std::vector<Annotation> annotate_batch(const std::vector<NewsRecord>& records,
                                         const std::vector<Demonstration>& demos, PromptMode mode,
                                         std::size_t parallelism = 1);

  /// Same code path as annotate, used as a stand-alone detector on test articles.
  /// Abstentions are reported as Real.
  Label detect(const NewsRecord& record, const std::vector<Demonstration>& demos, PromptMode mode);

 private:
  llm::Backend& backend_;
  const encoder::Encoder& encoder_;
  CostLedger& ledger_;
  std::size_t k_;
};

}  // namespace annotator
}  // namespace coalfake
