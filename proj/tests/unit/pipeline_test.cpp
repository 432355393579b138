#include <gtest/gtest.h>

#include <cmath>

#include "coalfake/pipeline.hpp"
#include "coalfake/util.hpp"
#include "helpers.hpp"
#include "pipeline_helpers.hpp"

using namespace coalfake;
using pipeline::Pipeline;
using pipeline::Status;
using testing_helpers::tiny_config;

namespace {

config::RunConfig tiny(std::initializer_list<std::pair<const char*, const char*>> sets = {}, std::uint64_t seed = 0) {
  auto j = tiny_config(seed);
  for (auto [k, v] : sets) config::apply_override(j, k, v);
  return config::parse(j);
}

double human_cost_oracle(const Pipeline& p, const std::vector<std::string>& ids) {
  double units = 0;
  for (const auto& id : ids) units += std::ceil(static_cast<double>(approx_tokens(p.record(id).text)) / 50.0);
  return units * 0.11;
}

}  // namespace

TEST(StopRule, Examples) {
  const config::StopConfig s{10, 2, 1e-3};
  EXPECT_EQ(pipeline::should_stop({0.80, 0.801, 0.8015}, 3, 100, s).reason, "plateau");
  EXPECT_FALSE(pipeline::should_stop({0.80, 0.81, 0.8105}, 3, 100, s).stop);
  EXPECT_FALSE(pipeline::should_stop({0.80, 0.801}, 2, 100, s).stop);  // not enough history
  EXPECT_EQ(pipeline::should_stop({0.5}, 10, 100, s).reason, "max_rounds");
  EXPECT_EQ(pipeline::should_stop({0.5}, 1, 0, s).reason, "pool_exhausted");
  EXPECT_EQ(pipeline::should_stop({0.9, 0.7, 0.6}, 3, 100, s).reason, "plateau");  // decline is flat too
}

TEST(Pipeline, SplitSizes) {
  Pipeline p(tiny(), "");
  EXPECT_EQ(p.demo_records().size(), 30u);
  EXPECT_EQ(p.pool_records().size(), 3 * 105u);  // floor(0.75 * 140)
  EXPECT_EQ(p.test_set().size(), 450u - 30u - 315u);
  EXPECT_EQ(p.state().initial_demo_size, 30u);
  EXPECT_EQ(p.sources().size(), 3u);
}

TEST(Pipeline, FirstRoundIsColdStartThenEntropy) {
  Pipeline p(tiny(), "");
  p.run_round();
  EXPECT_EQ(p.state().rounds[0].strategy, "domain_aware_cold");
  EXPECT_EQ(p.state().rounds[0].selected.size(), 60u);
  p.run_round();
  EXPECT_EQ(p.state().rounds[1].strategy, "domain_aware_entropy");
  EXPECT_EQ(p.state().labelled.size(), 120u);
  EXPECT_EQ(p.state().pool_remaining.size(), 315u - 120u);
}

TEST(Pipeline, LabelledGrowsByMPerRound) {
  Pipeline p(tiny({{"stop.max_rounds", "5"}, {"sampling.M_per_round", "50"}}), "");
  p.run();
  EXPECT_EQ(p.state().round, 5);
  EXPECT_EQ(p.state().stop_reason, "max_rounds");
  EXPECT_EQ(p.state().labelled.size(), 250u);
  for (std::size_t r = 0; r < 5; ++r) EXPECT_EQ(p.state().rounds[r].metrics["labelled"], 50 * (r + 1));
}

TEST(Pipeline, PoolExhaustionStops) {
  Pipeline p(tiny({{"stop.max_rounds", "10"}, {"sampling.M_per_round", "200"}}), "");
  p.run();
  EXPECT_EQ(p.state().round, 2);
  EXPECT_EQ(p.state().stop_reason, "pool_exhausted");
  EXPECT_EQ(p.state().labelled.size(), 315u);
}

TEST(Pipeline, RhoZeroNeverAsksHumans) {
  Pipeline p(tiny({{"annotator.rho", "0"}, {"annotator.human", "\"interactive\""}}), "");
  p.run();
  for (const auto& r : p.state().rounds) EXPECT_EQ(r.human_labeled, 0u);
  EXPECT_EQ(p.state().ledger.human_usd(), 0.0);
}

TEST(Pipeline, InteractiveHumanQueue) {
  Pipeline p(tiny({{"annotator.rho", "1.0"}, {"annotator.human", "\"interactive\""}}), "");
  p.begin_round();
  while (p.state().status == Status::kTraining) {  // nothing flagged: try another round
    p.finish_round();
    ASSERT_NE(p.state().status, Status::kDone);
    p.begin_round();
  }
  ASSERT_EQ(p.state().status, Status::kAwaitingHuman);
  const auto queue = p.state().human_queue;
  ASSERT_FALSE(queue.empty());
  EXPECT_EQ(p.tasks_json().size(), queue.size());
  for (std::size_t i = 0; i < queue.size(); ++i) EXPECT_EQ(queue[i].flagged_rank, i);
  EXPECT_FALSE(p.step());
  EXPECT_THROW(p.finish_round(), Conflict);

  const double before = p.state().ledger.human_usd();
  const auto& first = queue[0].record_id;
  const Label gold = *p.record(first).gold_label;
  EXPECT_EQ(p.apply_human_label(first, gold, "ann"), queue.size() - 1);
  EXPECT_EQ(p.apply_human_label(first, gold, "ann"), queue.size() - 1);  // idempotent
  const Label other = gold == Label::kFake ? Label::kReal : Label::kFake;
  EXPECT_THROW(p.apply_human_label(first, other, "ann"), Conflict);
  EXPECT_THROW(p.apply_human_label("no-such-id", gold, "ann"), NotFound);
  EXPECT_NEAR(p.state().ledger.human_usd() - before, human_cost_oracle(p, {first}), 1e-12);

  std::vector<std::string> answered{first};
  for (std::size_t i = 1; i < queue.size(); ++i) {
    p.apply_human_label(queue[i].record_id, *p.record(queue[i].record_id).gold_label, "ann");
    answered.push_back(queue[i].record_id);
  }
  EXPECT_EQ(p.state().status, Status::kTraining);
  EXPECT_NEAR(p.state().ledger.human_usd() - before, human_cost_oracle(p, answered), 1e-9);
  for (const auto& id : answered) {
    const auto it = std::find_if(p.state().labelled.begin(), p.state().labelled.end(),
                                 [&](const auto& e) { return e.record_id == id; });
    ASSERT_NE(it, p.state().labelled.end());
    EXPECT_EQ(it->provenance, Provenance::kHuman);
    EXPECT_EQ(it->label, *p.record(id).gold_label);
  }
  p.finish_round();
  EXPECT_EQ(p.state().rounds.back().human_labeled, queue.size());
}

TEST(Pipeline, ThreeShortTextsCostThirtyThreeCents) {
  CostLedger l;
  for (const char* id : {"a", "b", "c"}) l.charge_human(id, approx_tokens("A short news item of about forty characters."));
  EXPECT_NEAR(l.human_usd(), 0.33, 1e-12);
}

TEST(Pipeline, ExpiredQueueKeepsLlmLabels) {
  Pipeline p(tiny({{"annotator.rho", "1.0"}, {"annotator.human", "\"interactive\""}}), "");
  EXPECT_THROW(p.expire_human_queue(), Conflict);
  p.begin_round();
  while (p.state().status == Status::kTraining) {
    p.finish_round();
    p.begin_round();
  }
  const auto n = p.state().human_queue.size();
  p.expire_human_queue();
  EXPECT_EQ(p.state().status, Status::kTraining);
  p.finish_round();
  EXPECT_EQ(p.state().rounds.back().human_shortfall, n);
  EXPECT_EQ(p.state().rounds.back().human_labeled, 0u);
}

TEST(Pipeline, ArtifactsAndStateFile) {
  testing_helpers::TempDir dir;
  Pipeline p(tiny({{"stop.max_rounds", "2"}}), dir.path());
  p.run();
  for (const char* f : {"metrics.json", "ledger.json", "noise_report.json", "classifier.ckpt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / (std::string("round_001/") + f))) << f;
    EXPECT_TRUE(std::filesystem::exists(dir / (std::string("round_002/") + f))) << f;
  }
  const auto payload = pipeline::load_checked_json(p.state_path());
  const auto s = pipeline::run_state_from_json(payload["state"]);
  EXPECT_EQ(s.round, 2);
  EXPECT_EQ(s.labelled.size(), p.state().labelled.size());
  EXPECT_EQ(s.ledger.total_usd(), p.state().ledger.total_usd());

  const auto m = nlohmann::json::parse(testing_helpers::read_file(dir / "round_002/metrics.json"));
  EXPECT_EQ(m, p.state().rounds[1].metrics);
  EXPECT_TRUE(m.contains("macro_f1"));
  EXPECT_EQ(m["per_source"].size(), 3u);
  const auto ledger = nlohmann::json::parse(testing_helpers::read_file(dir / "round_001/ledger.json"));
  std::size_t llm_items = 0;
  for (const auto& it : ledger["items"]) llm_items += it["kind"] == "llm";
  EXPECT_EQ(llm_items, 60u);  // one call per selected record; the mock always answers
}

TEST(Pipeline, TamperedStateIsRejected) {
  testing_helpers::TempDir dir;
  Pipeline p(tiny({{"stop.max_rounds", "1"}}), dir.path());
  p.run();
  auto doc = nlohmann::json::parse(testing_helpers::read_file(p.state_path()));
  doc["payload"]["state"]["round"] = 99;
  testing_helpers::write_file(dir / "bad.json", doc.dump());
  try {
    pipeline::load_checked_json(dir / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
  testing_helpers::write_file(dir / "cut.json", testing_helpers::read_file(p.state_path()).substr(0, 100));
  EXPECT_THROW(pipeline::load_checked_json(dir / "cut.json"), Error);
  EXPECT_THROW(pipeline::load_checked_json(dir / "none.json"), IoError);
}

TEST(Pipeline, ResumeContinuesIdentically) {
  testing_helpers::TempDir a, b;
  const auto cfg = tiny({{"stop.max_rounds", "3"}}, 7);
  Pipeline full(cfg, a.path());
  full.run();

  {
    Pipeline part(cfg, b.path());
    part.run_round();
  }
  auto resumed = Pipeline::resume(b / "state.json", b.path());
  EXPECT_EQ(resumed->state().round, 1);
  resumed->run();
  ASSERT_EQ(resumed->state().rounds.size(), 3u);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(resumed->state().rounds[r].metrics, full.state().rounds[r].metrics) << r;
}

TEST(Pipeline, StatusJsonShape) {
  Pipeline p(tiny({{"stop.max_rounds", "1"}}), "");
  EXPECT_EQ(p.status_json()["status"], "sampling");
  p.run();
  const auto s = p.status_json();
  EXPECT_EQ(s["status"], "done");
  EXPECT_EQ(s["round"], 1);
  EXPECT_EQ(s["metrics"].size(), 1u);
  EXPECT_NEAR(s["cost"]["total_usd"].get<double>(), p.state().ledger.total_usd(), 1e-12);
  EXPECT_TRUE(p.tasks_json().empty());
}

TEST(Pipeline, DetectorUsesTestSplit) {
  auto cfg = tiny({{"annotator.mock_accuracy", "1.0"}});
  const auto res = pipeline::evaluate_detector(cfg, annotator::PromptMode::kPlain);
  EXPECT_EQ(res.report.macro_f1, 1.0);
  std::size_t n = 0;
  for (const auto& [src, m] : res.report.per_source) n += m.tp + m.fp + m.tn + m.fn;
  EXPECT_EQ(n, 105u);
  EXPECT_GT(res.ledger.llm_usd(), 0.0);
}
