#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "coalfake/annotator.hpp"
#include "coalfake/config.hpp"
#include "coalfake/cost.hpp"
#include "coalfake/domainspace.hpp"
#include "coalfake/metrics.hpp"
#include "coalfake/model.hpp"
#include "coalfake/sampler.hpp"
#include "coalfake/verifier.hpp"

namespace coalfake::pipeline {

enum class Status { kSampling, kAnnotating, kAwaitingHuman, kTraining, kDone };
const char* status_name(Status s);
Status status_from_name(const std::string& s);

struct LabeledExample {
  std::string record_id;
  Label label = Label::kReal;
  Provenance provenance = Provenance::kLlm;
  int round = 0;
  std::optional<double> probe_self_prob;  // out-of-sample probe probability of `label`
  std::string annotator;                  // human annotator id, when provenance is human
};

struct Neighbor {
  std::string text;
  Label label = Label::kReal;
};

/// One record waiting for a human label.
struct HumanTask {
  std::string record_id;
  std::string text;
  std::optional<Label> llm_label;  // nullopt when the LLM abstained
  std::optional<double> probe_self_prob;
  std::vector<Neighbor> neighbors;  // top-3 similar demonstrations
  std::size_t flagged_rank = 0;
};

/// Everything recorded about a completed round.
struct RoundRecord {
  int round = 0;
  std::string strategy;
  std::vector<std::string> selected;
  nlohmann::json metrics;  // the per-round metrics document
  model::LossBreakdown final_loss;
  double val_f1 = 0.0;
  std::size_t flagged = 0;
  std::size_t human_labeled = 0;
  std::size_t human_shortfall = 0;  // queue items left unanswered at a timeout
  std::string checkpoint;           // file name within the round directory
};

/// Work in progress between begin_round and finish_round.
struct PendingRound {
  std::string strategy;
  std::vector<std::string> selected;
  std::optional<verifier::NoiseReport> report;
  std::vector<std::string> abstained;
  std::size_t human_labeled = 0;
  std::size_t human_shortfall = 0;
  std::map<std::string, Label> submissions;  // human labels accepted this round
};

struct RunState {
  int round = 0;  // completed rounds
  Status status = Status::kSampling;
  std::vector<LabeledExample> labelled;
  std::set<std::string> pool_remaining;
  std::vector<std::pair<std::string, Label>> demo;  // initial demonstrations first
  std::size_t initial_demo_size = 0;
  std::vector<RoundRecord> rounds;
  std::vector<HumanTask> human_queue;  // ordered by flagged_rank
  std::optional<PendingRound> pending;
  CostLedger ledger;
  std::map<std::string, double> pool_probs;  // last classifier's p(fake) on the pool
  std::optional<DomainSpace> space;
  std::string stop_reason;
};

nlohmann::json to_json(const RunState& s);
RunState run_state_from_json(const nlohmann::json& j);

struct StopDecision {
  bool stop = false;
  std::string reason;  // "max_rounds" | "pool_exhausted" | "plateau" | ""
};

/// Stop once `completed_rounds` reaches max_rounds, the pool is empty, or the validation
/// score improved by at most min_delta for `patience` consecutive rounds.
StopDecision should_stop(const std::vector<double>& val_history, int completed_rounds, std::size_t pool_size,
                         const config::StopConfig& stop);

/// Orchestrates the sample -> annotate -> verify -> human -> train loop. Not thread-safe;
/// callers that share a Pipeline must serialize access (the service does).
class Pipeline {
 public:
  /// Loads or generates the corpus, splits it, embeds everything and fits the initial
  /// domain space on the pool. `out_dir` receives state and per-round artifacts.
  Pipeline(config::RunConfig cfg, std::filesystem::path out_dir);

  /// Restores a run saved with save_state. The corpus is rebuilt from the saved config.
  static std::unique_ptr<Pipeline> resume(const std::filesystem::path& state_file, std::filesystem::path out_dir);

  /// Selection, LLM annotation and verification. Ends in kTraining when nothing needs a
  /// human (or the oracle answered), else kAwaitingHuman.
  void begin_round();

  /// Human labels for a queued record. Resubmitting the same label is a no-op; a different
  /// label for an already answered record throws Conflict. Unknown or unqueued ids throw
  /// NotFound. Returns the remaining queue size. An empty queue moves the run to kTraining.
  std::size_t apply_human_label(const std::string& record_id, Label label, const std::string& annotator);

  /// Gives up on the outstanding human queue: LLM labels stand and the shortfall is recorded.
  void expire_human_queue();

  /// Refit, train, evaluate, grow the demo set and close the round.
  void finish_round();

  /// Advances by one phase if possible; false while waiting for humans or when done.
  bool step();

  /// begin_round + (oracle) finish_round.
  void run_round();

  /// Runs rounds until should_stop (oracle mode).
  void run();

  StopDecision stop_decision() const;

  const RunState& state() const { return state_; }
  const config::RunConfig& config() const { return cfg_; }
  const std::filesystem::path& out_dir() const { return out_dir_; }

  /// {"round", "status", "metrics": [...], "cost": {...}}
  nlohmann::json status_json() const;
  nlohmann::json tasks_json() const;

  void save_state(const std::filesystem::path& path) const;
  std::filesystem::path state_path() const { return out_dir_ / "state.json"; }

  /// Access to corpus data for tools and tests.
  const NewsRecord& record(const std::string& id) const;
  const Embedding& embedding(const std::string& id) const;
  const std::vector<NewsRecord>& test_set() const { return split_.test; }
  const std::vector<NewsRecord>& demo_records() const { return split_.demo; }
  const std::vector<NewsRecord>& pool_records() const { return split_.pool; }
  std::vector<std::string> sources() const { return sources_; }

  std::vector<annotator::Demonstration> demonstrations() const;

 private:
  Pipeline(config::RunConfig cfg, std::filesystem::path out_dir, RunState state);
  void load_corpus();

  sampler::AcquisitionResult select(std::size_t M) const;
  model::Batch training_batch(const DomainSpace& space) const;
  Eigen::MatrixXd features(const std::vector<std::string>& ids) const;
  LabeledExample* find_labelled(const std::string& id);
  void write_round_artifacts(const RoundRecord& rec, const nlohmann::json& ledger_items,
                             const verifier::NoiseReport* report, const model::Classifier& clf) const;

  config::RunConfig cfg_;
  std::filesystem::path out_dir_;
  std::shared_ptr<const encoder::Encoder> encoder_;
  std::unique_ptr<llm::Backend> backend_;
  corpus::CorpusSplit split_;
  std::vector<std::string> sources_;
  std::unordered_map<std::string, NewsRecord> records_;
  std::unordered_map<std::string, Embedding> embeddings_;
  RunState state_;
};

/// Writes `payload` wrapped with a version and SHA-256 checksum.
void save_checked_json(const std::filesystem::path& path, const nlohmann::json& payload);
/// Reads and verifies a file written by save_checked_json.
nlohmann::json load_checked_json(const std::filesystem::path& path);

RunState load_state(const std::filesystem::path& path);

/// Builds the language-model backend a config asks for. The mock needs every record that
/// may be queried so it can look up gold labels by text.
std::unique_ptr<llm::Backend> make_backend(const config::RunConfig& cfg, const std::vector<NewsRecord>& records);

struct DetectorResult {
  metrics::SourceReport report;
  CostLedger ledger;
};

/// The LLM used directly as a classifier on the test split, with demonstrations drawn from
/// the initial demonstration set. Abstentions count as Real.
DetectorResult evaluate_detector(const config::RunConfig& cfg, annotator::PromptMode mode);

/// Loads or generates every record named by the config.
std::vector<NewsRecord> load_records(const config::RunConfig& cfg);

}  // namespace coalfake::pipeline
