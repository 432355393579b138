#include <gtest/gtest.h>

#include "coalfake/corpus.hpp"
#include "coalfake/encoder.hpp"
#include "coalfake/util.hpp"
#include "helpers.hpp"

using namespace coalfake;

namespace {
double cosine(const Embedding& a, const Embedding& b) { return a.dot(b) / (a.norm() * b.norm()); }
}  // namespace

TEST(MockEncoder, Deterministic) {
  const encoder::MockEncoder enc(16, 3);
  EXPECT_EQ(enc.embed("the senate passed the bill"), enc.embed("the senate passed the bill"));
  const encoder::MockEncoder other(16, 3);
  EXPECT_EQ(enc.embed("x y z"), other.embed("x y z"));
}

TEST(MockEncoder, UnitNorm) {
  const encoder::MockEncoder enc(32, 1);
  for (const char* t : {"a", "breaking news about vaccines", "Z", "one two three four five six"})
    EXPECT_NEAR(enc.embed(t).norm(), 1.0, 1e-6);
}

TEST(MockEncoder, NormalizedSumOfTokenVectors) {
  const encoder::MockEncoder enc(8, 2);
  const Eigen::VectorXd sum = enc.token_vector("alpha") + enc.token_vector("beta") + enc.token_vector("alpha");
  EXPECT_LT((enc.embed("alpha beta alpha") - sum.normalized()).norm(), 1e-12);
}

TEST(MockEncoder, EmptyTextRejected) {
  const encoder::MockEncoder enc(8, 2);
  EXPECT_THROW(enc.embed(""), InvalidArgument);
  EXPECT_THROW(enc.embed("   "), InvalidArgument);
}

TEST(MockEncoder, SameBlobMoreSimilarThanCrossBlob) {
  const auto c = corpus::synth_corpus(3, 40, 0.0, 4);
  const encoder::MockEncoder enc(16, 4);
  double min_within = 2, max_across = -2;
  for (std::size_t i = 0; i < c.records.size(); i += 7)
    for (std::size_t j = i + 1; j < c.records.size(); j += 5) {
      const double s = cosine(enc.embed(c.records[i].text), enc.embed(c.records[j].text));
      if (c.domain_of[i] == c.domain_of[j])
        min_within = std::min(min_within, s);
      else
        max_across = std::max(max_across, s);
    }
  EXPECT_GT(min_within, max_across);
}

TEST(EmbedBatch, EmptyAndElementwise) {
  const encoder::MockEncoder enc(16, 5);
  EXPECT_TRUE(enc.embed_batch({}).empty());
  const std::vector<std::string> two{"first text", "second text"};
  const auto out = enc.embed_batch(two);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0], enc.embed("first text"));
  EXPECT_EQ(out[1], enc.embed("second text"));
}

TEST(EmbedBatch, OneHundredTwentyEightMatchesLoop) {
  const encoder::MockEncoder enc(16, 6);
  std::vector<std::string> texts;
  for (int i = 0; i < 128; ++i) texts.push_back("item " + std::to_string(i) + " words " + std::to_string(i * 7));
  const auto batch = enc.embed_batch(texts);
  for (int i = 0; i < 128; ++i) EXPECT_LT((batch[i] - enc.embed(texts[i])).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(EmbedBatch, ErrorNamesIndex) {
  const encoder::MockEncoder enc(16, 6);
  const std::vector<std::string> texts{"fine", "also fine", ""};
  try {
    enc.embed_batch(texts);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(MakeEncoder, MockFromConfig) {
  const auto enc = encoder::make_encoder({{"backend", "mock"}, {"dim", 12}, {"seed", 3}});
  EXPECT_EQ(enc->dim(), 12);
  EXPECT_EQ(enc->embed("abc"), encoder::MockEncoder(12, 3).embed("abc"));
  EXPECT_THROW(encoder::make_encoder({{"backend", "nope"}}), InvalidArgument);
}

TEST(PretrainedEncoder, ExternalCommandContract) {
  // A stand-in model: vector = (len, vowels, 1), which the encoder normalizes.
  testing_helpers::TempDir dir;
  testing_helpers::write_file(dir / "fake_model.py",
                              "import json,sys\n"
                              "t=json.load(open(sys.argv[-1]))\n"
                              "print(json.dumps([[len(s), sum(c in 'aeiou' for c in s), 1] for s in t]))\n");
  const encoder::PretrainedEncoder enc("python3 " + (dir / "fake_model.py").string(), 3);
  const std::vector<std::string> texts{"hello", "sky", "banana bread"};
  const auto out = enc.embed_batch(texts);
  ASSERT_EQ(out.size(), 3u);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    EXPECT_NEAR(out[i].norm(), 1.0, 1e-9);
    EXPECT_LT((out[i] - enc.embed(texts[i])).norm(), 1e-6);
  }
  Eigen::Vector3d hello(5, 2, 1);
  EXPECT_LT((out[0] - hello.normalized()).norm(), 1e-12);
}

TEST(PretrainedEncoder, UnavailableCommandFails) {
  const encoder::PretrainedEncoder enc("/nonexistent/embedder", 3);
  EXPECT_THROW(enc.embed("text"), Error);
}
