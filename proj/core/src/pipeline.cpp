#include "coalfake/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <tuple>

#include "coalfake/util.hpp"

namespace coalfake::pipeline {

using nlohmann::json;

namespace {

constexpr int kStateVersion = 1;
constexpr char kStateFormat[] = "coalfake-state";

}  // namespace

const char* status_name(Status s) {
  switch (s) {
    case Status::kSampling: return "sampling";
    case Status::kAnnotating: return "annotating";
    case Status::kAwaitingHuman: return "awaiting_human";
    case Status::kTraining: return "training";
    case Status::kDone: return "done";
  }
  return "?";
}

Status status_from_name(const std::string& s) {
  for (auto st : {Status::kSampling, Status::kAnnotating, Status::kAwaitingHuman, Status::kTraining, Status::kDone})
    if (s == status_name(st)) return st;
  throw InvalidArgument("unknown run status '" + s + "'");
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json opt_label(const std::optional<Label>& l) { return l ? json(label_name(*l)) : json(nullptr); }
std::optional<Label> label_opt(const json& j) {
  if (j.is_null()) return std::nullopt;
  return parse_label(j.get<std::string>());
}
Label label_of(const json& j) {
  auto l = parse_label(j.get<std::string>());
  if (!l) throw InvalidArgument("bad label in state: " + j.dump());
  return *l;
}
json opt_num(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> num_opt(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json task_json(const HumanTask& t) {
  json nb = json::array();
  for (const auto& n : t.neighbors) nb.push_back({{"text", n.text}, {"label", label_name(n.label)}});
  return {{"record_id", t.record_id},
          {"text", t.text},
          {"llm_label", opt_label(t.llm_label)},
          {"probe_self_probability", opt_num(t.probe_self_prob)},
          {"neighbors", nb},
          {"flagged_rank", t.flagged_rank}};
}

HumanTask task_from_json(const json& j) {
  HumanTask t;
  t.record_id = j.at("record_id").get<std::string>();
  t.text = j.at("text").get<std::string>();
  t.llm_label = label_opt(j.at("llm_label"));
  t.probe_self_prob = num_opt(j.at("probe_self_probability"));
  for (const auto& n : j.at("neighbors")) t.neighbors.push_back({n.at("text").get<std::string>(), label_of(n.at("label"))});
  t.flagged_rank = j.at("flagged_rank").get<std::size_t>();
  return t;
}

}  // namespace

json to_json(const RunState& s) {
  json labelled = json::array();
  for (const auto& e : s.labelled)
    labelled.push_back({{"id", e.record_id},
                        {"label", label_name(e.label)},
                        {"provenance", provenance_name(e.provenance)},
                        {"round", e.round},
                        {"probe_self_prob", opt_num(e.probe_self_prob)},
                        {"annotator", e.annotator}});
  json demo = json::array();
  for (const auto& [id, l] : s.demo) demo.push_back({id, label_name(l)});
  json rounds = json::array();
  for (const auto& r : s.rounds)
    rounds.push_back({{"round", r.round},
                      {"strategy", r.strategy},
                      {"selected", r.selected},
                      {"metrics", r.metrics},
                      {"final_loss", model::to_json(r.final_loss)},
                      {"val_f1", r.val_f1},
                      {"flagged", r.flagged},
                      {"human_labeled", r.human_labeled},
                      {"human_shortfall", r.human_shortfall},
                      {"checkpoint", r.checkpoint}});
  json queue = json::array();
  for (const auto& t : s.human_queue) queue.push_back(task_json(t));
  json pending = nullptr;
  if (s.pending) {
    const auto& p = *s.pending;
    json subs = json::object();
    for (const auto& [id, l] : p.submissions) subs[id] = label_name(l);
    pending = {{"strategy", p.strategy},
               {"selected", p.selected},
               {"report", p.report ? verifier::to_json(*p.report) : json(nullptr)},
               {"abstained", p.abstained},
               {"human_labeled", p.human_labeled},
               {"human_shortfall", p.human_shortfall},
               {"submissions", subs}};
  }
  return {{"round", s.round},
          {"status", status_name(s.status)},
          {"labelled", labelled},
          {"pool_remaining", s.pool_remaining},
          {"demo", demo},
          {"initial_demo_size", s.initial_demo_size},
          {"rounds", rounds},
          {"human_queue", queue},
          {"pending", pending},
          {"ledger", s.ledger.to_json()},
          {"pool_probs", s.pool_probs},
          {"space", s.space ? domainspace::to_json(*s.space) : json(nullptr)},
          {"stop_reason", s.stop_reason}};
}

RunState run_state_from_json(const json& j) {
  RunState s;
  s.round = j.at("round").get<int>();
  s.status = status_from_name(j.at("status").get<std::string>());
  for (const auto& e : j.at("labelled"))
    s.labelled.push_back({e.at("id").get<std::string>(), label_of(e.at("label")),
                          provenance_from_name(e.at("provenance").get<std::string>()), e.at("round").get<int>(),
                          num_opt(e.at("probe_self_prob")), e.at("annotator").get<std::string>()});
  s.pool_remaining = j.at("pool_remaining").get<std::set<std::string>>();
  for (const auto& d : j.at("demo")) s.demo.emplace_back(d.at(0).get<std::string>(), label_of(d.at(1)));
  s.initial_demo_size = j.at("initial_demo_size").get<std::size_t>();
  for (const auto& r : j.at("rounds")) {
    RoundRecord rec;
    rec.round = r.at("round").get<int>();
    rec.strategy = r.at("strategy").get<std::string>();
    rec.selected = r.at("selected").get<std::vector<std::string>>();
    rec.metrics = r.at("metrics");
    rec.final_loss = model::loss_breakdown_from_json(r.at("final_loss"));
    rec.val_f1 = r.at("val_f1").get<double>();
    rec.flagged = r.at("flagged").get<std::size_t>();
    rec.human_labeled = r.at("human_labeled").get<std::size_t>();
    rec.human_shortfall = r.at("human_shortfall").get<std::size_t>();
    rec.checkpoint = r.at("checkpoint").get<std::string>();
    s.rounds.push_back(std::move(rec));
  }
  for (const auto& t : j.at("human_queue")) s.human_queue.push_back(task_from_json(t));
  if (const auto& p = j.at("pending"); !p.is_null()) {
    PendingRound pr;
    pr.strategy = p.at("strategy").get<std::string>();
    pr.selected = p.at("selected").get<std::vector<std::string>>();
    if (!p.at("report").is_null()) pr.report = verifier::noise_report_from_json(p.at("report"));
    pr.abstained = p.at("abstained").get<std::vector<std::string>>();
    pr.human_labeled = p.at("human_labeled").get<std::size_t>();
    pr.human_shortfall = p.at("human_shortfall").get<std::size_t>();
    for (const auto& [id, l] : p.at("submissions").items()) pr.submissions[id] = label_of(l);
    s.pending = std::move(pr);
  }
  s.ledger = CostLedger::from_json(j.at("ledger"));
  s.pool_probs = j.at("pool_probs").get<std::map<std::string, double>>();
  if (!j.at("space").is_null()) s.space = domainspace::domain_space_from_json(j.at("space"));
  s.stop_reason = j.at("stop_reason").get<std::string>();
  return s;
}

void save_checked_json(const std::filesystem::path& path, const json& payload) {
  const json doc = {{"format", kStateFormat},
                    {"version", kStateVersion},
                    {"sha256", sha256_hex(payload.dump())},
                    {"payload", payload}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write-then-rename so a crash never leaves a half-written state file.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError(tmp, "cannot write " + tmp);
    out << doc.dump(1) << '\n';
    if (!out) throw IoError(tmp, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

json load_checked_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open state file: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("corrupt state file " + path.string() + ": " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kStateFormat) throw Error("not a state file: " + path.string());
  if (doc.value("version", -1) != kStateVersion)
    throw Error("state file version mismatch in " + path.string() + ": expected " + std::to_string(kStateVersion));
  const json& payload = doc.at("payload");
  if (sha256_hex(payload.dump()) != doc.value("sha256", ""))
    throw Error("state file checksum mismatch: " + path.string());
  return payload;
}

RunState load_state(const std::filesystem::path& path) {
  return run_state_from_json(load_checked_json(path).at("state"));
}

// ---------------------------------------------------------------------------
// Stopping rule

StopDecision should_stop(const std::vector<double>& val_history, int completed_rounds, std::size_t pool_size,
                         const config::StopConfig& stop) {
  if (completed_rounds >= stop.max_rounds) return {true, "max_rounds"};
  if (pool_size == 0) return {true, "pool_exhausted"};
  if (static_cast<int>(val_history.size()) > stop.patience) {
    int flat = 0;
    for (std::size_t i = val_history.size() - static_cast<std::size_t>(stop.patience); i < val_history.size(); ++i)
      // An improvement of exactly min_delta counts as flat; the slack absorbs representation
      // error (0.801 - 0.80 is slightly above 1e-3 in binary floating point).
      if (val_history[i] - val_history[i - 1] <= stop.min_delta + 1e-12) ++flat;
    if (flat == stop.patience) return {true, "plateau"};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Construction

std::vector<NewsRecord> load_records(const config::RunConfig& cfg) {
  std::vector<NewsRecord> all;
  if (cfg.synth) all = corpus::synth_corpus(*cfg.synth).records;
  for (const auto& src : cfg.sources) {
    auto recs = corpus::load_jsonl(src.path, src.name);
    all.insert(all.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  return all;
}

std::unique_ptr<llm::Backend> make_backend(const config::RunConfig& cfg, const std::vector<NewsRecord>& records) {
  if (cfg.annotator.backend == "chat") {
    llm::ChatOptions o;
    o.base_url = cfg.llm.base_url;
    o.model = cfg.llm.model;
    o.max_retries = cfg.llm.max_retries;
    o.timeout = std::chrono::seconds(cfg.llm.timeout_s);
    return std::make_unique<llm::ChatCompletionsClient>(o);
  }
  std::map<std::string, llm::MockLlm::Truth> truth;
  for (const auto& r : records)
    if (r.gold_label) truth.emplace(r.text, llm::MockLlm::Truth{*r.gold_label, r.source});
  return std::make_unique<llm::MockLlm>(std::move(truth), cfg.annotator.mock_accuracy, derive_seed(cfg.seed, "mock-llm"),
                                        cfg.annotator.mock_same_source_accuracy);
}

DetectorResult evaluate_detector(const config::RunConfig& cfg, annotator::PromptMode mode) {
  const auto all = load_records(cfg);
  const auto parts = corpus::split(all, cfg.split);
  const auto enc = encoder::make_encoder(cfg.encoder);
  auto backend = make_backend(cfg, all);

  std::vector<annotator::Demonstration> demos;
  for (const auto& r : parts.demo) {
    if (!r.gold_label) throw InvalidArgument("demonstration record " + r.id + " has no gold label");
    demos.push_back({r.id, r.text, *r.gold_label, enc->embed(r.text)});
  }
  DetectorResult res;
  annotator::Annotator ann(*backend, *enc, res.ledger, cfg.annotator.k);
  const auto labels = ann.annotate_batch(parts.test, demos, mode, cfg.annotator.parallelism);
  std::map<std::string, double> probs;
  for (std::size_t i = 0; i < labels.size(); ++i)
    probs[parts.test[i].id] = labels[i].label.value_or(Label::kReal) == Label::kFake ? 1.0 : 0.0;
  res.report = metrics::evaluate(parts.test, probs);
  return res;
}

void Pipeline::load_corpus() {
  auto all = load_records(cfg_);
  sources_ = corpus::sources_of(all);
  split_ = corpus::split(all, cfg_.split);
  encoder_ = encoder::make_encoder(cfg_.encoder);
  backend_ = make_backend(cfg_, all);

  std::vector<std::string> texts;
  texts.reserve(all.size());
  for (const auto& r : all) texts.push_back(r.text);
  auto embs = encoder_->embed_batch(texts);
  for (std::size_t i = 0; i < all.size(); ++i) {
    embeddings_.emplace(all[i].id, std::move(embs[i]));
    records_.emplace(all[i].id, std::move(all[i]));
  }
}

Pipeline::Pipeline(config::RunConfig cfg, std::filesystem::path out_dir)
    : cfg_(std::move(cfg)), out_dir_(std::move(out_dir)) {
  load_corpus();
  for (const auto& r : split_.pool) state_.pool_remaining.insert(r.id);
  for (const auto& r : split_.demo) {
    if (!r.gold_label) throw InvalidArgument("demonstration record " + r.id + " has no gold label");
    state_.demo.emplace_back(r.id, *r.gold_label);
  }
  state_.initial_demo_size = state_.demo.size();

  std::vector<std::string> ids(state_.pool_remaining.begin(), state_.pool_remaining.end());
  std::vector<Embedding> embs;
  for (const auto& id : ids) embs.push_back(embeddings_.at(id));
  state_.space = domainspace::fit(embs, ids,
                                  {cfg_.domainspace.k_min, cfg_.domainspace.k_max, derive_seed(cfg_.seed, "domainspace")});
}

Pipeline::Pipeline(config::RunConfig cfg, std::filesystem::path out_dir, RunState state)
    : cfg_(std::move(cfg)), out_dir_(std::move(out_dir)), state_(std::move(state)) {
  load_corpus();
}

std::unique_ptr<Pipeline> Pipeline::resume(const std::filesystem::path& state_file, std::filesystem::path out_dir) {
  const json payload = load_checked_json(state_file);
  auto cfg = config::parse(payload.at("config"));
  auto state = run_state_from_json(payload.at("state"));
  return std::unique_ptr<Pipeline>(new Pipeline(std::move(cfg), std::move(out_dir), std::move(state)));
}

const NewsRecord& Pipeline::record(const std::string& id) const {
  const auto it = records_.find(id);
  if (it == records_.end()) throw NotFound("unknown record '" + id + "'");
  return it->second;
}

const Embedding& Pipeline::embedding(const std::string& id) const {
  const auto it = embeddings_.find(id);
  if (it == embeddings_.end()) throw NotFound("unknown record '" + id + "'");
  return it->second;
}

std::vector<annotator::Demonstration> Pipeline::demonstrations() const {
  std::vector<annotator::Demonstration> out;
  out.reserve(state_.demo.size());
  for (const auto& [id, label] : state_.demo) out.push_back({id, record(id).text, label, embedding(id)});
  return out;
}

LabeledExample* Pipeline::find_labelled(const std::string& id) {
  for (auto& e : state_.labelled)
    if (e.record_id == id) return &e;
  return nullptr;
}

Eigen::MatrixXd Pipeline::features(const std::vector<std::string>& ids) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(ids.size()), encoder_->dim());
  for (std::size_t i = 0; i < ids.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = embedding(ids[i]).transpose();
  return x;
}

// ---------------------------------------------------------------------------
// Round phases

sampler::AcquisitionResult Pipeline::select(std::size_t M) const {
  std::vector<sampler::PoolItem> pool;
  pool.reserve(state_.pool_remaining.size());
  for (const auto& id : state_.pool_remaining) pool.push_back({id, embedding(id)});
  const int r = state_.round + 1;

  if (cfg_.sampling.strategy == "domain_aware") {
    const auto& space = *state_.space;
    const auto sizes = sampler::cluster_sizes(space, pool);
    const auto alloc = sampler::allocate(M, sampler::cluster_weights(sizes, cfg_.sampling.epsilon), sizes);
    if (state_.pool_probs.empty()) return sampler::cold_start_select(space, pool, alloc);
    return sampler::entropy_select(space, pool, alloc, state_.pool_probs);
  }
  auto strategy = sampler::strategy_from_name(cfg_.sampling.strategy);
  const bool needs_probs =
      strategy == sampler::Strategy::kMaxEntropy || strategy == sampler::Strategy::kLeastConfidence;
  // No classifier exists before the first round; uncertainty strategies start randomly.
  if (needs_probs && state_.pool_probs.empty()) strategy = sampler::Strategy::kRandom;
  return sampler::baseline_select(strategy, pool, M, needs_probs ? &state_.pool_probs : nullptr,
                                  derive_seed(derive_seed(cfg_.seed, "sampling"), static_cast<std::uint64_t>(r)));
}

void Pipeline::begin_round() {
  if (state_.status != Status::kSampling)
    throw Conflict(std::string("cannot begin a round while status is ") + status_name(state_.status));
  if (state_.pool_remaining.empty()) throw Error("pool exhausted");
  const int r = state_.round + 1;
  state_.status = Status::kAnnotating;

  const std::size_t M = std::min(cfg_.sampling.M_per_round, state_.pool_remaining.size());
  const auto sel = select(M);
  PendingRound pending;
  pending.strategy = sampler::strategy_name(sel.strategy);
  pending.selected = sel.selected_ids;
  for (const auto& id : sel.selected_ids) state_.pool_remaining.erase(id);

  // LLM annotation with k-NN demonstrations.
  std::vector<NewsRecord> batch;
  batch.reserve(sel.selected_ids.size());
  for (const auto& id : sel.selected_ids) batch.push_back(record(id));
  const auto demos = demonstrations();
  annotator::Annotator ann(*backend_, *encoder_, state_.ledger, cfg_.annotator.k);
  const auto annotations = ann.annotate_batch(batch, demos, cfg_.annotator.mode, cfg_.annotator.parallelism);
  for (const auto& a : annotations) {
    if (a.label)
      state_.labelled.push_back({a.record_id, *a.label, Provenance::kLlm, r, std::nullopt, {}});
    else
      pending.abstained.push_back(a.record_id);
  }

  // Confident learning over everything labelled so far; only this round's LLM labels are
  // eligible for re-annotation.
  std::vector<std::string> ids, texts;
  std::vector<int> labels;
  std::vector<std::int64_t> counts(2, 0);
  for (const auto& e : state_.labelled) {
    ids.push_back(e.record_id);
    texts.push_back(record(e.record_id).text);
    labels.push_back(to_int(e.label));
    ++counts[static_cast<std::size_t>(to_int(e.label))];
  }
  std::vector<std::string> queue_ids;
  if (std::min(counts[0], counts[1]) >= cfg_.probe.folds) {
    auto probe = cfg_.probe;
    probe.seed = derive_seed(cfg_.probe.seed, static_cast<std::uint64_t>(r));
    const auto probs = verifier::probe_oos_probs(ids, texts, labels, 2, probe);
    auto report = verifier::verify(probs, labels, ids, 1.0);
    for (std::size_t i = 0; i < state_.labelled.size(); ++i) {
      auto& e = state_.labelled[i];
      if (e.round == r) e.probe_self_prob = probs(static_cast<Eigen::Index>(i), labels[i]);
    }
    std::vector<std::string> eligible;
    std::map<std::string, double> eligible_prob;
    for (const auto& id : report.flagged) {
      const auto* e = find_labelled(id);
      if (e && e->round == r && e->provenance == Provenance::kLlm) {
        eligible.push_back(id);
        eligible_prob[id] = report.self_prob.at(id);
      }
    }
    const auto n_queue = static_cast<std::size_t>(
        std::ceil(cfg_.annotator.rho * static_cast<double>(eligible.size()) - 1e-9));
    report.flagged = eligible;
    report.self_prob = eligible_prob;
    report.human_queue.assign(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(n_queue));
    queue_ids = report.human_queue;
    pending.report = std::move(report);
  }
  queue_ids.insert(queue_ids.end(), pending.abstained.begin(), pending.abstained.end());

  state_.human_queue.clear();
  for (std::size_t rank = 0; rank < queue_ids.size(); ++rank) {
    const auto& id = queue_ids[rank];
    HumanTask t;
    t.record_id = id;
    t.text = record(id).text;
    if (const auto* e = find_labelled(id)) {
      t.llm_label = e->label;
      t.probe_self_prob = e->probe_self_prob;
    }
    for (const auto& d : annotator::retrieve_demos(embedding(id), demos, 3)) t.neighbors.push_back({d.text, d.label});
    t.flagged_rank = rank;
    state_.human_queue.push_back(std::move(t));
  }
  state_.pending = std::move(pending);

  if (state_.human_queue.empty()) {
    state_.status = Status::kTraining;
  } else {
    state_.status = Status::kAwaitingHuman;
    if (cfg_.annotator.human == config::HumanMode::kOracle) {
      const auto queued = state_.human_queue;
      for (const auto& t : queued) {
        const auto& gold = record(t.record_id).gold_label;
        if (!gold) throw InvalidArgument("oracle mode needs a gold label for " + t.record_id);
        apply_human_label(t.record_id, *gold, "oracle");
      }
    }
  }
  if (!out_dir_.empty()) save_state(state_path());
}

std::size_t Pipeline::apply_human_label(const std::string& record_id, Label label, const std::string& annotator) {
  if (state_.pending) {
    const auto& subs = state_.pending->submissions;
    if (const auto it = subs.find(record_id); it != subs.end()) {
      if (it->second == label) return state_.human_queue.size();
      throw Conflict("record " + record_id + " was already labelled " + label_name(it->second));
    }
  }
  const auto task = std::find_if(state_.human_queue.begin(), state_.human_queue.end(),
                                 [&](const HumanTask& t) { return t.record_id == record_id; });
  if (state_.status != Status::kAwaitingHuman || task == state_.human_queue.end()) {
    if (!records_.count(record_id)) throw NotFound("unknown record '" + record_id + "'");
    throw NotFound("record '" + record_id + "' is not in the human queue");
  }

  if (auto* e = find_labelled(record_id)) {
    e->label = label;
    e->provenance = Provenance::kHuman;
    e->annotator = annotator;
  } else {
    state_.labelled.push_back({record_id, label, Provenance::kHuman, state_.round + 1, std::nullopt, annotator});
  }
  state_.ledger.charge_human(record_id, approx_tokens(task->text));
  state_.human_queue.erase(task);
  state_.pending->submissions[record_id] = label;
  ++state_.pending->human_labeled;
  if (state_.human_queue.empty()) state_.status = Status::kTraining;
  if (!out_dir_.empty() && annotator != "oracle") save_state(state_path());
  return state_.human_queue.size();
}

void Pipeline::expire_human_queue() {
  if (state_.status != Status::kAwaitingHuman) throw Conflict("no human queue is open");
  state_.pending->human_shortfall = state_.human_queue.size();
  state_.human_queue.clear();
  state_.status = Status::kTraining;
  if (!out_dir_.empty()) save_state(state_path());
}

model::Batch Pipeline::training_batch(const DomainSpace& space) const {
  std::vector<std::string> ids;
  for (const auto& e : state_.labelled) ids.push_back(e.record_id);
  model::Batch b;
  b.x = features(ids);
  b.y.resize(static_cast<Eigen::Index>(ids.size()));
  b.domain.resize(static_cast<Eigen::Index>(ids.size()), space.k);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    b.y[row] = to_int(state_.labelled[i].label);
    b.domain.row(row) = domainspace::membership(embedding(ids[i]), space).transpose();
  }
  return b;
}

void Pipeline::finish_round() {
  if (state_.status != Status::kTraining)
    throw Conflict(std::string("cannot train while status is ") + status_name(state_.status));
  const int r = state_.round + 1;
  const PendingRound pending = state_.pending.value_or(PendingRound{});

  // Refit the domain space on pool ∪ labelled.
  std::set<std::string> fit_ids = state_.pool_remaining;
  for (const auto& e : state_.labelled) fit_ids.insert(e.record_id);
  std::vector<std::string> ids(fit_ids.begin(), fit_ids.end());
  std::vector<Embedding> embs;
  embs.reserve(ids.size());
  for (const auto& id : ids) embs.push_back(embedding(id));
  DomainSpace space = domainspace::refit(
      embs, ids, {cfg_.domainspace.k_min, cfg_.domainspace.k_max, derive_seed(cfg_.seed, "domainspace")}, state_.space,
      cfg_.domainspace.stable_tol);

  // Fresh classifier on everything labelled so far.
  auto mc = cfg_.model;
  mc.seed = derive_seed(cfg_.model.seed, static_cast<std::uint64_t>(r));
  auto fitted = model::fit(mc, training_batch(space));
  const auto& clf = fitted.classifier;

  std::vector<std::string> pool_ids(state_.pool_remaining.begin(), state_.pool_remaining.end());
  std::map<std::string, double> pool_probs;
  if (!pool_ids.empty()) {
    const auto p = clf.predict(features(pool_ids));
    for (std::size_t i = 0; i < pool_ids.size(); ++i) pool_probs[pool_ids[i]] = p[static_cast<Eigen::Index>(i)];
  }

  std::vector<std::string> test_ids;
  std::vector<std::string> test_sources;
  for (const auto& t : split_.test) {
    test_ids.push_back(t.id);
    if (std::find(test_sources.begin(), test_sources.end(), t.source) == test_sources.end())
      test_sources.push_back(t.source);
  }
  std::map<std::string, double> test_probs;
  const auto tp = clf.predict(features(test_ids));
  for (std::size_t i = 0; i < test_ids.size(); ++i) test_probs[test_ids[i]] = tp[static_cast<Eigen::Index>(i)];
  const auto report = metrics::evaluate(split_.test, test_probs, test_sources);

  // Grow the demonstration set with confident, probe-consistent labels from this round.
  const auto cap = static_cast<std::size_t>(std::floor(cfg_.annotator.demo_cap_factor *
                                                       static_cast<double>(state_.initial_demo_size) + 1e-9));
  std::vector<std::pair<double, std::string>> candidates;
  std::vector<std::string> round_ids;
  std::vector<const LabeledExample*> round_examples;
  for (const auto& e : state_.labelled)
    if (e.round == r) {
      round_ids.push_back(e.record_id);
      round_examples.push_back(&e);
    }
  if (!round_ids.empty()) {
    const auto p = clf.predict(features(round_ids));
    for (std::size_t i = 0; i < round_ids.size(); ++i) {
      const auto& e = *round_examples[i];
      const double pf = p[static_cast<Eigen::Index>(i)];
      const double conf = e.label == Label::kFake ? pf : 1.0 - pf;
      const bool probe_agrees = e.probe_self_prob && *e.probe_self_prob > 0.5;
      if (conf >= cfg_.annotator.demo_confidence && probe_agrees) candidates.emplace_back(conf, e.record_id);
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  for (const auto& [conf, id] : candidates) {
    if (state_.demo.size() >= cap) break;
    state_.demo.emplace_back(id, find_labelled(id)->label);
  }

  // Costs: cumulative from the ledger, per round from the items charged since last round.
  auto items = state_.ledger.take_items();
  std::sort(items.begin(), items.end(), [](const LedgerItem& a, const LedgerItem& b) {
    return std::tie(a.kind, a.record_id) < std::tie(b.kind, b.record_id);
  });
  CostLedger round_ledger(state_.ledger.rates());
  json items_json = json::array();
  for (const auto& it : items) {
    if (it.kind == "human")
      round_ledger.charge_human(it.record_id, it.human_tokens);
    else
      round_ledger.charge_llm(it.record_id, it.prompt_tokens, it.completion_tokens);
    items_json.push_back(to_json(it));
  }
  const json ledger_json = {{"round", r},
                            {"llm_usd", round_ledger.llm_usd()},
                            {"human_usd", round_ledger.human_usd()},
                            {"items", items_json}};

  RoundRecord rec;
  rec.round = r;
  rec.strategy = pending.strategy;
  rec.selected = pending.selected;
  rec.val_f1 = fitted.best_val_f1;
  if (!fitted.epoch_losses.empty())
    rec.final_loss = fitted.epoch_losses[static_cast<std::size_t>(std::max(0, fitted.best_epoch))];
  rec.flagged = pending.report ? pending.report->flagged.size() : 0;
  rec.human_labeled = pending.human_labeled;
  rec.human_shortfall = pending.human_shortfall;
  rec.checkpoint = "classifier.ckpt";
  json m = metrics::to_json(report);
  m["round"] = r;
  m["cost"] = {{"llm_usd", state_.ledger.llm_usd()},
               {"human_usd", state_.ledger.human_usd()},
               {"total_usd", state_.ledger.total_usd()}};
  m["flagged"] = rec.flagged;
  m["human_labeled"] = rec.human_labeled;
  m["strategy"] = rec.strategy;
  m["labelled"] = state_.labelled.size();
  m["val_f1"] = rec.val_f1;
  rec.metrics = m;

  if (!out_dir_.empty()) write_round_artifacts(rec, ledger_json, pending.report ? &*pending.report : nullptr, clf);

  state_.rounds.push_back(std::move(rec));
  state_.round = r;
  state_.space = std::move(space);
  state_.pool_probs = std::move(pool_probs);
  state_.pending.reset();
  const auto stop = stop_decision();
  if (stop.stop) {
    state_.status = Status::kDone;
    state_.stop_reason = stop.reason;
  } else {
    state_.status = Status::kSampling;
  }
  if (!out_dir_.empty()) save_state(state_path());
}

void Pipeline::write_round_artifacts(const RoundRecord& rec, const json& ledger_json,
                                     const verifier::NoiseReport* report, const model::Classifier& clf) const {
  char name[32];
  std::snprintf(name, sizeof name, "round_%03d", rec.round);
  const auto dir = out_dir_ / name;
  std::filesystem::create_directories(dir);
  auto write = [&](const char* file, const json& j) {
    std::ofstream out(dir / file);
    if (!out) throw IoError((dir / file).string(), "cannot write " + (dir / file).string());
    out << j.dump(2) << '\n';
  };
  write("metrics.json", rec.metrics);
  write("ledger.json", ledger_json);
  write("noise_report.json", report ? verifier::to_json(*report) : json(nullptr));
  clf.save(dir / rec.checkpoint);
}

StopDecision Pipeline::stop_decision() const {
  if (state_.rounds.empty()) return {};
  std::vector<double> history;
  for (const auto& r : state_.rounds) history.push_back(r.val_f1);
  return should_stop(history, state_.round, state_.pool_remaining.size(), cfg_.stop);
}

bool Pipeline::step() {
  switch (state_.status) {
    case Status::kSampling:
      begin_round();
      return true;
    case Status::kTraining:
      finish_round();
      return true;
    default:
      return false;
  }
}

void Pipeline::run_round() {
  begin_round();
  if (state_.status == Status::kTraining) finish_round();
}

void Pipeline::run() {
  while (state_.status != Status::kDone) {
    if (!step()) throw Conflict("run is waiting for human labels; use the service or oracle mode");
  }
}

json Pipeline::status_json() const {
  json m = json::array();
  for (const auto& r : state_.rounds) m.push_back(r.metrics);
  return {{"round", state_.round},
          {"status", status_name(state_.status)},
          {"metrics", m},
          {"cost",
           {{"llm_usd", state_.ledger.llm_usd()},
            {"human_usd", state_.ledger.human_usd()},
            {"total_usd", state_.ledger.total_usd()}}},
          {"queue_size", state_.human_queue.size()},
          {"stop_reason", state_.stop_reason}};
}

json Pipeline::tasks_json() const {
  json out = json::array();
  if (state_.status != Status::kAwaitingHuman) return out;
  for (const auto& t : state_.human_queue) out.push_back(task_json(t));
  return out;
}

void Pipeline::save_state(const std::filesystem::path& path) const {
  save_checked_json(path, {{"config", cfg_.raw}, {"state", to_json(state_)}});
}

}  // namespace coalfake::pipeline
