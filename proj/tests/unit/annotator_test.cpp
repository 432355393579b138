#include <gtest/gtest.h>
#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <deque>
#include <mutex>
#include <thread>

#include "coalfake/annotator.hpp"
#include "coalfake/corpus.hpp"
#include "coalfake/cost.hpp"
#include "coalfake/encoder.hpp"
#include "coalfake/llm.hpp"
#include "coalfake/util.hpp"

#include <httplib.h>

using namespace coalfake;
using annotator::Demonstration;
using annotator::PromptMode;

namespace {

const encoder::MockEncoder kEnc(16, 1);

Demonstration demo(const std::string& id, const std::string& text, Label l) {
  return {id, text, l, kEnc.embed(text)};
}

// Replays canned completions and records the prompts it saw.
class ScriptedBackend : public llm::Backend {
 public:
  explicit ScriptedBackend(std::deque<std::string> replies) : replies_(std::move(replies)) {}
  llm::Completion complete(const std::string& prompt) override {
    std::lock_guard lock(mu_);
    prompts.push_back(prompt);
    std::string r = replies_.empty() ? "Fake" : replies_.front();
    if (!replies_.empty()) replies_.pop_front();
    return {r, 100, 3};
  }
  std::vector<std::string> prompts;

 private:
  std::mutex mu_;
  std::deque<std::string> replies_;
};

}  // namespace

TEST(Retrieve, ClampsToAvailableDemos) {
  const std::vector<Demonstration> demos{demo("a", "alpha beta", Label::kFake), demo("b", "gamma delta", Label::kReal)};
  EXPECT_EQ(annotator::retrieve_demos(kEnc.embed("alpha"), demos, 5).size(), 2u);
  EXPECT_THROW(annotator::retrieve_demos(kEnc.embed("alpha"), {}, 5), InvalidArgument);
}

TEST(Retrieve, IdenticalTextRankedFirst) {
  std::vector<Demonstration> demos;
  for (int i = 0; i < 10; ++i) demos.push_back(demo("d" + std::to_string(i), "w" + std::to_string(i) + " shared", Label::kReal));
  const auto got = annotator::retrieve_demos(kEnc.embed("w7 shared"), demos, 3);
  EXPECT_EQ(got.front().record_id, "d7");
}

TEST(Retrieve, MatchesBruteForceSort) {
  const auto c = corpus::synth_corpus(3, 20, 0.0, 2);
  std::vector<Demonstration> demos;
  for (std::size_t i = 0; i < 50; ++i) demos.push_back(demo(c.records[i].id, c.records[i].text, *c.records[i].gold_label));
  const Embedding q = kEnc.embed(c.records[55].text);
  std::vector<std::pair<double, std::string>> oracle;
  for (const auto& d : demos) oracle.push_back({-q.dot(d.embedding) / (q.norm() * d.embedding.norm()), d.record_id});
  std::sort(oracle.begin(), oracle.end());
  const auto got = annotator::retrieve_demos(q, demos, 50);
  ASSERT_EQ(got.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(got[i].record_id, oracle[i].second) << i;
}

TEST(Prompt, KnnStructure) {
  const std::vector<Demonstration> demos{demo("a", "first story", Label::kFake), demo("b", "second story", Label::kReal)};
  const auto p = annotator::build_prompt(demos, "target story", PromptMode::kKnn);
  const auto e1 = p.find("[example 1]"), e2 = p.find("[example 2]"), t = p.find("[target news]");
  ASSERT_NE(e1, std::string::npos);
  ASSERT_NE(e2, std::string::npos);
  ASSERT_NE(t, std::string::npos);
  EXPECT_LT(e1, e2);
  EXPECT_LT(e2, t);
  EXPECT_NE(p.find("[news text: first story] \n[output]: [This is Fake news]"), std::string::npos);
  EXPECT_NE(p.find("[news text: second story] \n[output]: [This is Real news]"), std::string::npos);
  EXPECT_TRUE(p.ends_with("[input news]: [news text: target story]\n[output]"));
  EXPECT_EQ(p, annotator::build_prompt(demos, "target story", PromptMode::kKnn));
}

TEST(Prompt, PlainHasNoExamples) {
  const std::vector<Demonstration> demos{demo("a", "first story", Label::kFake)};
  const auto p = annotator::build_prompt(demos, "target", PromptMode::kPlain);
  EXPECT_EQ(p.find("[example"), std::string::npos);
  EXPECT_NE(p.find("[target news]"), std::string::npos);
}

TEST(Parse, Grammar) {
  EXPECT_EQ(annotator::parse_completion("This is Fake news"), Label::kFake);
  EXPECT_EQ(annotator::parse_completion("real"), Label::kReal);
  EXPECT_EQ(annotator::parse_completion("[This is REAL news]"), Label::kReal);
  EXPECT_EQ(annotator::parse_completion("fake, not real"), Label::kFake);
  EXPECT_EQ(annotator::parse_completion("Real. It is not fake."), Label::kReal);
  EXPECT_FALSE(annotator::parse_completion("I cannot tell").has_value());
}

TEST(Annotator, ReprompsOnceThenAbstains) {
  CostLedger ledger;
  ScriptedBackend unsure({"hmm", "no idea"});
  annotator::Annotator a(unsure, kEnc, ledger, 5);
  const NewsRecord r{"r1", "some story", "s", Label::kFake};
  const auto out = a.annotate(r, {demo("d", "other", Label::kReal)}, PromptMode::kKnn);
  EXPECT_FALSE(out.label.has_value());
  EXPECT_EQ(unsure.prompts.size(), 2u);
  EXPECT_EQ(ledger.llm_prompt_tokens(), 200);
  EXPECT_EQ(ledger.llm_completion_tokens(), 6);
  EXPECT_EQ(a.detect(r, {demo("d", "other", Label::kReal)}, PromptMode::kKnn), Label::kFake);  // replies ran out -> "Fake"

  ScriptedBackend second({"hmm", "Real"});
  annotator::Annotator b(second, kEnc, ledger, 5);
  EXPECT_EQ(b.annotate(r, {}, PromptMode::kPlain).label, Label::kReal);
  EXPECT_TRUE(second.prompts[1].starts_with(second.prompts[0]));
}

TEST(Annotator, DetectEqualsAnnotate) {
  const auto c = corpus::synth_corpus(3, 20, 0.0, 3);
  std::map<std::string, llm::MockLlm::Truth> truth;
  for (const auto& r : c.records) truth[r.text] = {*r.gold_label, r.source};
  std::vector<Demonstration> demos;
  for (std::size_t i = 0; i < 10; ++i) demos.push_back(demo(c.records[i].id, c.records[i].text, *c.records[i].gold_label));
  CostLedger ledger;
  llm::MockLlm mock(truth, 0.7, 5);
  annotator::Annotator a(mock, kEnc, ledger);
  for (std::size_t i = 10; i < 60; ++i) {
    const auto label = a.annotate(c.records[i], demos, PromptMode::kKnn).label;
    EXPECT_EQ(a.detect(c.records[i], demos, PromptMode::kKnn), label.value_or(Label::kReal));
    EXPECT_EQ(a.detect(c.records[i], demos, PromptMode::kKnn), a.detect(c.records[i], demos, PromptMode::kKnn));
  }
}

TEST(Annotator, ParallelBatchEqualsSerial) {
  const auto c = corpus::synth_corpus(3, 30, 0.0, 4);
  std::map<std::string, llm::MockLlm::Truth> truth;
  for (const auto& r : c.records) truth[r.text] = {*r.gold_label, r.source};
  std::vector<Demonstration> demos;
  for (std::size_t i = 0; i < 9; ++i) demos.push_back(demo(c.records[i].id, c.records[i].text, *c.records[i].gold_label));
  const std::vector<NewsRecord> batch(c.records.begin() + 9, c.records.end());
  llm::MockLlm mock(truth, 0.8, 1);
  CostLedger l1, l4;
  const auto serial = annotator::Annotator(mock, kEnc, l1).annotate_batch(batch, demos, PromptMode::kKnn, 1);
  const auto par = annotator::Annotator(mock, kEnc, l4).annotate_batch(batch, demos, PromptMode::kKnn, 4);
  ASSERT_EQ(serial.size(), par.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].record_id, par[i].record_id);
    EXPECT_EQ(serial[i].label, par[i].label);
  }
  EXPECT_EQ(l1.total_usd(), l4.total_usd());
}

TEST(MockLlm, AgreementNearConfiguredAccuracy) {
  const auto c = corpus::synth_corpus(4, 50, 0.0, 6);
  std::map<std::string, llm::MockLlm::Truth> truth;
  for (const auto& r : c.records) truth[r.text] = {*r.gold_label, r.source};
  llm::MockLlm mock(truth, 0.85, 42);
  int agree = 0;
  for (const auto& r : c.records) {
    const auto p = annotator::build_prompt({}, r.text, PromptMode::kPlain);
    agree += annotator::parse_completion(mock.complete(p).text) == r.gold_label;
  }
  const double rate = agree / 200.0;
  EXPECT_GE(rate, 0.80);
  EXPECT_LE(rate, 0.90);
}

TEST(MockLlm, TokenRule) {
  const auto c = corpus::synth_corpus(2, 3, 0.0, 6);
  std::map<std::string, llm::MockLlm::Truth> truth;
  for (const auto& r : c.records) truth[r.text] = {*r.gold_label, r.source};
  llm::MockLlm mock(truth, 1.0, 1);
  const auto p = annotator::build_prompt({}, c.records[0].text, PromptMode::kPlain);
  const auto out = mock.complete(p);
  EXPECT_EQ(out.prompt_tokens, static_cast<std::int64_t>((p.size() + 3) / 4));  // ceil(bytes / 4)
  EXPECT_EQ(out.completion_tokens, 4);
  EXPECT_EQ(annotator::parse_completion(out.text), c.records[0].gold_label);
}

TEST(MockLlm, SameSourceDemoBoostsAccuracy) {
  const auto c = corpus::synth_corpus(3, 100, 0.0, 8);
  std::map<std::string, llm::MockLlm::Truth> truth;
  for (const auto& r : c.records) truth[r.text] = {*r.gold_label, r.source};
  llm::MockLlm mock(truth, 0.6, 3, 1.0);
  std::vector<Demonstration> same{demo(c.records[0].id, c.records[0].text, *c.records[0].gold_label)};
  int plain = 0, boosted = 0, n = 0;
  for (std::size_t i = 1; i < 100; ++i) {  // all from domain 0
    plain += annotator::parse_completion(mock.complete(annotator::build_prompt({}, c.records[i].text, PromptMode::kPlain)).text) ==
             c.records[i].gold_label;
    boosted += annotator::parse_completion(mock.complete(annotator::build_prompt(same, c.records[i].text, PromptMode::kKnn)).text) ==
               c.records[i].gold_label;
    ++n;
  }
  EXPECT_EQ(boosted, n);
  EXPECT_LT(plain, n);
}

TEST(Cost, PublishedRates) {
  CostLedger a;
  a.charge_llm("x", 1'000'000, 0);
  EXPECT_EQ(a.total_usd(), 3.00);
  CostLedger b;
  b.charge_llm("x", 1'000'000, 1'000'000);
  EXPECT_EQ(b.total_usd(), 9.00);
  CostLedger h;
  h.charge_human("x", 120);
  EXPECT_EQ(h.human_units(), 3);
  EXPECT_NEAR(h.human_usd(), 0.33, 1e-12);
}

TEST(Cost, UnitBoundariesAndJson) {
  CostLedger l;
  l.charge_human("a", 50);  // 1 unit
  l.charge_human("b", 51);  // 2 units
  l.charge_llm("c", 10, 4);
  EXPECT_EQ(l.human_units(), 3);
  const auto back = CostLedger::from_json(l.to_json());
  EXPECT_EQ(back.total_usd(), l.total_usd());
  EXPECT_EQ(back.human_units(), 3);
  auto items = l.take_items();
  EXPECT_EQ(items.size(), 3u);
  EXPECT_TRUE(l.take_items().empty());
}

TEST(Cost, ConcurrentChargesAreExact) {
  CostLedger l;
  std::vector<std::jthread> ts;
  for (int t = 0; t < 4; ++t)
    ts.emplace_back([&] {
      for (int i = 0; i < 1000; ++i) l.charge_llm("x", 1000, 0);
    });
  ts.clear();
  EXPECT_EQ(l.llm_prompt_tokens(), 4'000'000);
  EXPECT_EQ(l.llm_usd(), 12.0);
}

TEST(Chat, RequestAndResponseShapes) {
  const auto body = llm::chat_request_body("gpt-3.5-turbo", "hello");
  EXPECT_EQ(body["model"], "gpt-3.5-turbo");
  EXPECT_EQ(body["temperature"], 0);
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], "hello");
  const auto c = llm::parse_chat_response(
      R"({"choices":[{"message":{"content":"Fake"}}],"usage":{"prompt_tokens":12,"completion_tokens":2}})");
  EXPECT_EQ(c.text, "Fake");
  EXPECT_EQ(c.prompt_tokens, 12);
  EXPECT_THROW(llm::parse_chat_response("{}"), llm::TransportError);
  EXPECT_THROW(llm::parse_chat_response("not json"), llm::TransportError);
}

TEST(Chat, LocalServerWithRetryAndKeyFromEnvironment) {
  httplib::Server server;
  std::atomic<int> calls{0};
  std::string auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (calls++ == 0) {
      res.status = 503;  // first attempt fails transiently
      return;
    }
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"content":"Real"}}],"usage":{"prompt_tokens":5,"completion_tokens":1}})",
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("COALFAKE_LLM_KEY", "test-key", 1);
  llm::ChatOptions o;
  o.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  o.backoff = std::chrono::milliseconds(1);
  llm::ChatCompletionsClient client(o);
  const auto c = client.complete("prompt");
  ::unsetenv("COALFAKE_LLM_KEY");
  server.stop();
  t.join();

  EXPECT_EQ(c.text, "Real");
  EXPECT_EQ(calls.load(), 2);
  EXPECT_EQ(auth, "Bearer test-key");
}

TEST(Chat, UnreachableEndpointIsTransportError) {
  llm::ChatOptions o;
  o.base_url = "http://127.0.0.1:1/v1";
  o.max_retries = 1;
  o.backoff = std::chrono::milliseconds(1);
  o.timeout = std::chrono::seconds(1);
  llm::ChatCompletionsClient client(o);
  EXPECT_THROW(client.complete("x"), llm::TransportError);
}
