#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "coalfake/corpus.hpp"
#include "coalfake/util.hpp"
#include "coalfake/verifier.hpp"

using namespace coalfake;

namespace {

Eigen::MatrixXd rows(std::initializer_list<std::pair<double, double>> ps) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(ps.size()), 2);
  Eigen::Index i = 0;
  for (auto [a, b] : ps) {
    m(i, 0) = a;
    m(i, 1) = b;
    ++i;
  }
  return m;
}

std::vector<std::string> ids_for(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("r" + std::to_string(1000 + i));
  return ids;
}

// Flagging rule written out directly: per class, the round-half-up(n * off-diagonal row mass)
// least self-confident samples of that class, then globally sorted.
std::vector<std::string> oracle_flagged(const Eigen::MatrixXd& q, const Eigen::MatrixXd& probs,
                                        const std::vector<int>& labels, const std::vector<std::string>& ids) {
  std::vector<std::pair<double, std::string>> out;
  const double n = static_cast<double>(labels.size());
  for (int i = 0; i < q.rows(); ++i) {
    const auto count = static_cast<std::size_t>(std::floor(n * (q.row(i).sum() - q(i, i)) + 0.5));
    std::vector<std::pair<double, std::string>> cls;
    for (std::size_t s = 0; s < labels.size(); ++s)
      if (labels[s] == i) cls.push_back({probs(static_cast<Eigen::Index>(s), i), ids[s]});
    std::sort(cls.begin(), cls.end());
    for (std::size_t k = 0; k < std::min(count, cls.size()); ++k) out.push_back(cls[k]);
  }
  std::sort(out.begin(), out.end());
  std::vector<std::string> res;
  for (auto& p : out) res.push_back(p.second);
  return res;
}

}  // namespace

TEST(Verifier, ThresholdIsMeanSelfProbability) {
  const auto p = rows({{0.6, 0.4}, {0.8, 0.2}, {0.3, 0.7}, {0.1, 0.9}});
  const auto t = verifier::class_thresholds(p, {0, 0, 1, 1});
  EXPECT_NEAR(t[0], 0.7, 1e-12);
  EXPECT_NEAR(t[1], 0.8, 1e-12);
}

TEST(Verifier, ConfidentJointBruteForce) {
  const auto p = rows({{0.9, 0.1}, {0.55, 0.45}, {0.2, 0.8}, {0.35, 0.65}});
  const std::vector<int> y{0, 1, 1, 0};
  const auto t = verifier::class_thresholds(p, y);
  // t0 = (0.9 + 0.35) / 2, t1 = (0.45 + 0.8) / 2
  EXPECT_NEAR(t[0], 0.625, 1e-12);
  EXPECT_NEAR(t[1], 0.625, 1e-12);
  Eigen::MatrixXi expect = Eigen::MatrixXi::Zero(2, 2);
  for (int s = 0; s < 4; ++s) {
    int best = -1;
    for (int j = 0; j < 2; ++j)
      if (p(s, j) >= t[j] && (best < 0 || p(s, j) > p(s, best))) best = j;
    if (best >= 0) ++expect(y[s], best);
  }
  EXPECT_EQ(verifier::confident_joint(p, y, t), expect);
  EXPECT_EQ(expect(0, 0), 1);
  EXPECT_EQ(expect(0, 1), 1);
  EXPECT_EQ(expect(1, 1), 1);
}

TEST(Verifier, CalibratedJointExamples) {
  Eigen::MatrixXi c(2, 2);
  c << 3, 0, 0, 3;
  const auto q = verifier::estimate_q(c, {5, 5});
  Eigen::MatrixXd want(2, 2);
  want << 0.5, 0, 0, 0.5;
  EXPECT_TRUE(q.isApprox(want, 1e-12));

  Eigen::MatrixXi c2(2, 2);
  c2 << 6, 2, 1, 3;
  const auto q2 = verifier::estimate_q(c2, {8, 12});
  const auto q3 = verifier::estimate_q(c2 * 7, {8, 12});  // scale invariant
  EXPECT_TRUE(q2.isApprox(q3, 1e-12));
  EXPECT_NEAR(q2.sum(), 1.0, 1e-12);
  EXPECT_NEAR(q2.row(0).sum(), 8.0 / 20.0, 1e-12);
  EXPECT_NEAR(q2(1, 0), 12.0 * 0.25 / 20.0, 1e-12);

  Eigen::MatrixXi empty_row(2, 2);
  empty_row << 0, 0, 1, 3;
  EXPECT_NEAR(verifier::estimate_q(empty_row, {4, 4})(0, 0), 0.5, 1e-12);
}

TEST(Verifier, FlaggedMatchesOracleOnRandomInputs) {
  Rng rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 30 + trial;
    Eigen::MatrixXd p(static_cast<Eigen::Index>(n), 2);
    std::vector<int> y(n);
    for (std::size_t s = 0; s < n; ++s) {
      p(s, 0) = u(rng);
      p(s, 1) = 1.0 - p(s, 0);
      y[s] = u(rng) < 0.5;
    }
    const auto ids = ids_for(n);
    const auto rep = verifier::verify(p, y, ids, 0.3);
    EXPECT_EQ(rep.flagged, oracle_flagged(rep.q_hat, p, y, ids));
    const auto q = static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(rep.flagged.size()) - 1e-12));
    ASSERT_EQ(rep.human_queue.size(), q);
    EXPECT_TRUE(std::equal(rep.human_queue.begin(), rep.human_queue.end(), rep.flagged.begin()));
    for (const auto& id : rep.flagged) EXPECT_TRUE(rep.self_prob.count(id));
  }
}

TEST(Verifier, RhoBounds) {
  const auto p = rows({{0.9, 0.1}, {0.8, 0.2}, {0.1, 0.9}, {0.2, 0.8}, {0.95, 0.05}, {0.05, 0.95}});
  const std::vector<int> y{0, 1, 1, 0, 1, 0};  // half the labels disagree with the probe
  const auto ids = ids_for(6);
  const auto none = verifier::verify(p, y, ids, 0.0);
  const auto all = verifier::verify(p, y, ids, 1.0);
  ASSERT_FALSE(all.flagged.empty());
  EXPECT_TRUE(none.human_queue.empty());
  EXPECT_EQ(all.human_queue, all.flagged);
  EXPECT_THROW(verifier::verify(p, y, ids, 1.5), InvalidArgument);
}

TEST(Verifier, CleanDataFlagsNothing) {
  const auto p = rows({{0.9, 0.1}, {0.8, 0.2}, {0.1, 0.9}, {0.3, 0.7}});
  const auto rep = verifier::verify(p, {0, 0, 1, 1}, ids_for(4), 1.0);
  EXPECT_TRUE(rep.flagged.empty());
  EXPECT_TRUE(rep.human_queue.empty());
}

TEST(Verifier, ReportJsonRoundTrip) {
  const auto p = rows({{0.9, 0.1}, {0.8, 0.2}, {0.1, 0.9}, {0.2, 0.8}, {0.4, 0.6}});
  const auto rep = verifier::verify(p, {0, 1, 1, 0, 0}, ids_for(5), 0.5);
  const auto back = verifier::noise_report_from_json(verifier::to_json(rep));
  EXPECT_EQ(back.flagged, rep.flagged);
  EXPECT_EQ(back.human_queue, rep.human_queue);
  EXPECT_EQ(back.confident_joint, rep.confident_joint);
  EXPECT_TRUE(back.q_hat.isApprox(rep.q_hat));
}

TEST(Probe, NgramOrders) {
  const auto g = verifier::word_ngrams("a b c", 2);
  EXPECT_EQ(g, (std::vector<std::string>{"a", "b", "c", "a b", "b c"}));
  EXPECT_EQ(verifier::word_ngrams("a b", 1).size(), 2u);
}

TEST(Probe, OutOfSampleProbabilitiesOnSeparableText) {
  std::vector<std::string> ids, texts;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    ids.push_back("t" + std::to_string(i));
    y.push_back(i % 2);
    texts.push_back((i % 2 ? "scandal hoax shocking " : "minister report council ") + std::to_string(i % 7) + " news");
  }
  verifier::ProbeParams pp;
  pp.epochs = 10;
  const auto p = verifier::probe_oos_probs(ids, texts, y, 2, pp);
  int correct = 0;
  for (int i = 0; i < 200; ++i) {
    EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9);
    correct += (p(i, 1) > p(i, 0)) == (y[i] == 1);
  }
  EXPECT_GE(correct, 190);

  // Fold assignment follows ids, not input order.
  std::vector<std::size_t> perm(200);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::vector<std::string> ids2, texts2;
  std::vector<int> y2;
  for (auto k : perm) {
    ids2.push_back(ids[k]);
    texts2.push_back(texts[k]);
    y2.push_back(y[k]);
  }
  const auto p2 = verifier::probe_oos_probs(ids2, texts2, y2, 2, pp);
  for (int i = 0; i < 200; ++i) EXPECT_NEAR(p2(199 - i, 1), p(i, 1), 0.05);
}

TEST(Probe, FindsInjectedNoise) {
  const auto c = corpus::synth_corpus(3, 150, 0.0, 4);
  std::vector<std::string> ids, texts;
  std::vector<int> y;
  std::vector<std::string> flipped;
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    ids.push_back(c.records[i].id);
    texts.push_back(c.records[i].text);
    int lab = c.clean_labels[i] == Label::kFake;
    if (i % 10 == 3) {
      lab = 1 - lab;
      flipped.push_back(ids.back());
    }
    y.push_back(lab);
  }
  verifier::ProbeParams pp;
  pp.ngram = 1;
  pp.epochs = 30;
  const auto p = verifier::probe_oos_probs(ids, texts, y, 2, pp);
  const auto rep = verifier::verify(p, y, ids, 0.2);
  std::size_t hit = 0;
  for (const auto& id : rep.flagged) hit += std::count(flipped.begin(), flipped.end(), id);
  EXPECT_GE(static_cast<double>(hit) / static_cast<double>(rep.flagged.size()), 0.7);
}
