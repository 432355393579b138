#include <benchmark/benchmark.h>

#include "coalfake/corpus.hpp"
#include "coalfake/domainspace.hpp"
#include "coalfake/encoder.hpp"
#include "coalfake/model.hpp"
#include "coalfake/sampler.hpp"
#include "coalfake/verifier.hpp"

using namespace coalfake;

namespace {

struct Pool {
  std::vector<Embedding> emb;
  std::vector<std::string> ids;
  std::vector<std::string> texts;
  std::vector<int> labels;
};

Pool make_pool(std::size_t per_domain) {
  const auto c = corpus::synth_corpus(4, per_domain, 0.1, 3);
  const encoder::MockEncoder enc(16, 3);
  Pool p;
  for (const auto& r : c.records) {
    p.emb.push_back(enc.embed(r.text));
    p.ids.push_back(r.id);
    p.texts.push_back(r.text);
    p.labels.push_back(to_int(*r.gold_label));
  }
  return p;
}

}  // namespace

static void BM_DomainSpaceFit(benchmark::State& state) {
  const auto p = make_pool(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(domainspace::fit(p.emb, p.ids, {2, 6, 0}));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(p.ids.size()));
}
BENCHMARK(BM_DomainSpaceFit)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

static void BM_Silhouette(benchmark::State& state) {
  const auto p = make_pool(static_cast<std::size_t>(state.range(0)));
  Eigen::MatrixXd X(static_cast<Eigen::Index>(p.emb.size()), 16);
  for (std::size_t i = 0; i < p.emb.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = p.emb[i].transpose();
  const auto km = domainspace::kmeans(X, 4, 0, 1);
  for (auto _ : state) {
    const auto D = domainspace::cosine_distances(X);
    benchmark::DoNotOptimize(domainspace::silhouette(D, km.assignment, 4));
  }
}
BENCHMARK(BM_Silhouette)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

static void BM_ConfidentLearning(benchmark::State& state) {
  const auto p = make_pool(static_cast<std::size_t>(state.range(0)));
  verifier::ProbeParams pp;
  pp.ngram = 1;
  pp.epochs = 10;
  for (auto _ : state) {
    const auto probs = verifier::probe_oos_probs(p.ids, p.texts, p.labels, 2, pp);
    benchmark::DoNotOptimize(verifier::verify(probs, p.labels, p.ids, 0.2));
  }
}
BENCHMARK(BM_ConfidentLearning)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  model::ModelConfig cfg;
  cfg.d = static_cast<int>(state.range(0));
  cfg.heads = 4;
  const int B = 128, in = 16, k = 4;
  model::Classifier m(cfg, in, k);
  model::Batch b{Eigen::MatrixXd::Random(B, in), Eigen::VectorXd::Zero(B), Eigen::MatrixXd::Constant(B, k, 0.25)};
  for (int i = 0; i < B; i += 2) b.y[i] = 1;
  for (auto _ : state) benchmark::DoNotOptimize(m.train_step(b));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

static void BM_DomainAwareSelect(benchmark::State& state) {
  const auto p = make_pool(static_cast<std::size_t>(state.range(0)));
  const auto space = domainspace::fit(p.emb, p.ids, {2, 6, 0});
  std::vector<sampler::PoolItem> pool;
  sampler::ProbMap probs;
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    pool.push_back({p.ids[i], p.emb[i]});
    probs[p.ids[i]] = static_cast<double>(i % 97) / 97.0;
  }
  for (auto _ : state) {
    const auto w = sampler::cluster_weights(space, pool);
    const auto a = sampler::allocate(120, w, sampler::cluster_sizes(space, pool));
    benchmark::DoNotOptimize(sampler::entropy_select(space, pool, a, probs));
  }
}
BENCHMARK(BM_DomainAwareSelect)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
