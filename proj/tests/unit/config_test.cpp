#include <gtest/gtest.h>

#include "coalfake/config.hpp"
#include "coalfake/util.hpp"
#include "helpers.hpp"

using namespace coalfake;
using nlohmann::json;

TEST(Config, DefaultsParse) {
  json d = config::defaults();
  d["corpus"]["synth"]["enabled"] = true;
  const auto c = config::parse(d);
  EXPECT_EQ(c.sampling.strategy, "domain_aware");
  EXPECT_EQ(c.sampling.M_per_round, 120u);
  EXPECT_EQ(c.annotator.k, 5u);
  EXPECT_DOUBLE_EQ(c.annotator.rho, 0.2);
  EXPECT_EQ(c.model.d, 512);
  EXPECT_EQ(c.model.epochs, 300);
  EXPECT_DOUBLE_EQ(c.model.lr_generator, 1e-4);
  EXPECT_DOUBLE_EQ(c.model.lr_domain_classifier, 1e-5);
  EXPECT_EQ(c.annotator.backend, "mock");
}

TEST(Config, NoCorpusIsRejected) {
  EXPECT_THROW(config::parse(config::defaults()), InvalidArgument);
}

TEST(Config, MergeRejectsUnknownKeysByPath) {
  try {
    config::merge(config::defaults(), json{{"sampling", {{"strateg", "random"}}}});
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("sampling.strateg"), std::string::npos);
  }
  // encoder options are backend-specific and pass through
  const auto m = config::merge(config::defaults(), json{{"encoder", {{"model", "x"}}}});
  EXPECT_EQ(m["encoder"]["model"], "x");
}

TEST(Config, Overrides) {
  json c = config::defaults();
  config::apply_override(c, "sampling.strategy", "random");
  config::apply_override(c, "annotator.rho", "0.5");
  config::apply_override(c, "model.lambda4", "0.25");
  config::apply_override(c, "corpus.synth.enabled", "true");
  EXPECT_EQ(c["sampling"]["strategy"], "random");
  EXPECT_EQ(c["annotator"]["rho"], 0.5);
  EXPECT_EQ(c["model"]["lambdas"][3], 0.25);
  EXPECT_EQ(config::parse(c).model.lambdas[3], 0.25);
  EXPECT_THROW(config::apply_override(c, "sampling.nope", "1"), InvalidArgument);
  EXPECT_THROW(config::apply_override(c, "model.lambda4", "abc"), InvalidArgument);
  EXPECT_THROW(config::apply_override(c, "sampling", "1"), InvalidArgument);
}

TEST(Config, RangeChecks) {
  json c = config::defaults();
  c["corpus"]["synth"]["enabled"] = true;
  auto bad = [&](const std::string& key, const std::string& v) {
    json x = c;
    config::apply_override(x, key, v);
    EXPECT_THROW(config::parse(x), InvalidArgument) << key << "=" << v;
  };
  bad("annotator.rho", "1.5");
  bad("sampling.M_per_round", "0");
  bad("annotator.human", "\"robot\"");
  bad("sampling.strategy", "\"nope\"");
  bad("stop.max_rounds", "0");
  bad("annotator.backend", "\"other\"");
}

TEST(Config, LoadFileResolvesRelativeCorpusPaths) {
  testing_helpers::TempDir dir;
  std::filesystem::create_directories(dir / "data");
  testing_helpers::write_file(dir / "data/a.jsonl", "{\"id\":\"1\",\"text\":\"x\",\"label\":\"fake\"}\n");
  testing_helpers::write_file(dir / "run.json",
                              R"({"corpus":{"sources":[{"name":"a","path":"data/a.jsonl"}]},"seed":4})");
  const auto merged = config::load_file(dir / "run.json");
  const auto c = config::parse(merged);
  ASSERT_EQ(c.sources.size(), 1u);
  EXPECT_EQ(std::filesystem::canonical(c.sources[0].path), std::filesystem::canonical(dir / "data/a.jsonl"));
  EXPECT_EQ(c.seed, 4u);
}

TEST(Config, FileErrors) {
  testing_helpers::TempDir dir;
  EXPECT_THROW(config::load_file(dir / "missing.json"), IoError);
  testing_helpers::write_file(dir / "bad.json", "{not json");
  EXPECT_THROW(config::load_file(dir / "bad.json"), InvalidArgument);
  testing_helpers::write_file(dir / "gone.json", R"({"corpus":{"sources":[{"name":"a","path":"nowhere.jsonl"}]}})");
  try {
    config::parse(config::load_file(dir / "gone.json"));
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(e.path().find("nowhere.jsonl"), std::string::npos);
  }
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"synth_benchmark.json"}) {
    const auto c = config::parse(config::load_file(std::filesystem::path(COALFAKE_SOURCE_DIR) / "configs" / name));
    EXPECT_TRUE(c.synth.has_value()) << name;
  }
}
