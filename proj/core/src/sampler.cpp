#include "coalfake/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "coalfake/util.hpp"

namespace coalfake::sampler {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kDomainAwareCold: return "domain_aware_cold";
    case Strategy::kDomainAwareEntropy: return "domain_aware_entropy";
    case Strategy::kRandom: return "random";
    case Strategy::kMaxEntropy: return "max_entropy";
    case Strategy::kLeastConfidence: return "least_confidence";
    case Strategy::kKMeansDiversity: return "kmeans_diversity";
  }
  return "unknown";
}

Strategy strategy_from_name(const std::string& name) {
  for (auto s : {Strategy::kDomainAwareCold, Strategy::kDomainAwareEntropy, Strategy::kRandom,
                 Strategy::kMaxEntropy, Strategy::kLeastConfidence, Strategy::kKMeansDiversity})
    if (name == strategy_name(s)) return s;
  throw InvalidArgument("unknown sampling strategy '" + name + "'");
}

std::vector<std::size_t> cluster_sizes(const DomainSpace& space, const std::vector<PoolItem>& pool) {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(space.k), 0);
  for (const auto& item : pool) ++sizes[static_cast<std::size_t>(space.cluster_of(item.id))];
  return sizes;
}

std::vector<double> cluster_weights(const std::vector<std::size_t>& pool_sizes, double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  if (std::accumulate(pool_sizes.begin(), pool_sizes.end(), std::size_t{0}) == 0)
    throw InvalidArgument("cluster_weights: empty pool");
  std::vector<double> w(pool_sizes.size());
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = 1.0 / (static_cast<double>(pool_sizes[j]) + epsilon);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= total;
  return w;
}

std::vector<double> cluster_weights(const DomainSpace& space, const std::vector<PoolItem>& pool,
                                    double epsilon) {
  return cluster_weights(cluster_sizes(space, pool), epsilon);
}

Allocation allocate(std::size_t M, const std::vector<double>& weights,
                    const std::vector<std::size_t>& capacities) {
  if (weights.size() != capacities.size()) throw InvalidArgument("allocate: weights/capacities size mismatch");
  const std::size_t cap_total = std::accumulate(capacities.begin(), capacities.end(), std::size_t{0});
  if (M > cap_total)
    throw InvalidArgument("allocate: budget " + std::to_string(M) + " exceeds pool capacity " +
                          std::to_string(cap_total));

  const std::size_t k = weights.size();
  Allocation a;
  a.total = M;
  a.per_cluster.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    // The small slack absorbs products like 10 * 0.1 landing a hair above an integer.
    const double q = std::ceil(static_cast<double>(M) * weights[j] - 1e-9);
    a.per_cluster[j] = std::min(capacities[j], static_cast<std::size_t>(std::max(0.0, q)));
  }

  std::size_t sum = std::accumulate(a.per_cluster.begin(), a.per_cluster.end(), std::size_t{0});
  while (sum > M) {
    std::size_t pick = 0;
    for (std::size_t j = 1; j < k; ++j) {
      const auto mj = a.per_cluster[j], mp = a.per_cluster[pick];
      if (mj > mp || (mj == mp && capacities[j] > capacities[pick])) pick = j;
    }
    --a.per_cluster[pick];
    --sum;
  }
  while (sum < M) {
    std::size_t pick = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (capacities[j] - a.per_cluster[j] > capacities[pick] - a.per_cluster[pick]) pick = j;
    ++a.per_cluster[pick];
    ++sum;
  }
  return a;
}

double binary_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("probability outside [0, 1]: " + std::to_string(p));
  auto term = [](double q) { return q > 0.0 ? -q * std::log(q) : 0.0; };
  return term(p) + term(1.0 - p);
}

namespace {

std::vector<std::vector<const PoolItem*>> members_by_cluster(const DomainSpace& space,
                                                             const std::vector<PoolItem>& pool) {
  std::vector<std::vector<const PoolItem*>> out(static_cast<std::size_t>(space.k));
  for (const auto& item : pool) out[static_cast<std::size_t>(space.cluster_of(item.id))].push_back(&item);
  return out;
}

void check_allocation(const DomainSpace& space, const std::vector<std::vector<const PoolItem*>>& members,
                      const Allocation& allocation) {
  if (allocation.per_cluster.size() != static_cast<std::size_t>(space.k))
    throw InvalidArgument("allocation has " + std::to_string(allocation.per_cluster.size()) +
                          " clusters, space has " + std::to_string(space.k));
  for (std::size_t j = 0; j < members.size(); ++j)
    if (allocation.per_cluster[j] > members[j].size())
      throw InvalidArgument("allocation for cluster " + std::to_string(j) + " exceeds its pool size");
}

double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double den = a.norm() * b.norm();
  return den > 0.0 ? 1.0 - a.dot(b) / den : 1.0;
}

}  // namespace

AcquisitionResult cold_start_select(const DomainSpace& space, const std::vector<PoolItem>& pool,
                                    const Allocation& allocation) {
  auto members = members_by_cluster(space, pool);
  check_allocation(space, members, allocation);
  AcquisitionResult out;
  out.strategy = Strategy::kDomainAwareCold;
  for (std::size_t j = 0; j < members.size(); ++j) {
    const Eigen::VectorXd mu = space.centroids.row(static_cast<Eigen::Index>(j)).transpose();
    std::vector<std::pair<double, const PoolItem*>> ranked;
    for (const auto* item : members[j]) ranked.emplace_back(cosine_distance(item->embedding, mu), item);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : a.second->id < b.second->id;
    });
    for (std::size_t r = 0; r < allocation.per_cluster[j]; ++r) {
      out.selected_ids.push_back(ranked[r].second->id);
      out.scores[ranked[r].second->id] = ranked[r].first;
    }
  }
  return out;
}

AcquisitionResult entropy_select(const DomainSpace& space, const std::vector<PoolItem>& pool,
                                 const Allocation& allocation, const ProbMap& probs) {
  auto members = members_by_cluster(space, pool);
  check_allocation(space, members, allocation);
  AcquisitionResult out;
  out.strategy = Strategy::kDomainAwareEntropy;
  for (std::size_t j = 0; j < members.size(); ++j) {
    std::vector<std::pair<double, const PoolItem*>> ranked;
    for (const auto* item : members[j]) {
      auto it = probs.find(item->id);
      if (it == probs.end()) throw InvalidArgument("entropy_select: no probability for '" + item->id + "'");
      ranked.emplace_back(binary_entropy(it->second), item);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second->id < b.second->id;
    });
    for (std::size_t r = 0; r < allocation.per_cluster[j]; ++r) {
      out.selected_ids.push_back(ranked[r].second->id);
      out.scores[ranked[r].second->id] = ranked[r].first;
    }
  }
  return out;
}

AcquisitionResult baseline_select(Strategy strategy, const std::vector<PoolItem>& pool, std::size_t M,
                                  const ProbMap* probs, std::uint64_t seed) {
  AcquisitionResult out;
  out.strategy = strategy;
  M = std::min(M, pool.size());
  if (M == 0) return out;

  std::vector<const PoolItem*> items;
  for (const auto& p : pool) items.push_back(&p);
  std::sort(items.begin(), items.end(), [](auto* a, auto* b) { return a->id < b->id; });

  auto take_ranked = [&](auto score) {
    if (!probs) throw InvalidArgument(std::string(strategy_name(strategy)) + " requires classifier probabilities");
    std::vector<std::pair<double, const PoolItem*>> ranked;
    for (const auto* item : items) {
      auto it = probs->find(item->id);
      if (it == probs->end()) throw InvalidArgument("no probability for '" + item->id + "'");
      ranked.emplace_back(score(it->second), item);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; r < M; ++r) {
      out.selected_ids.push_back(ranked[r].second->id);
      out.scores[ranked[r].second->id] = ranked[r].first;
    }
  };

  switch (strategy) {
    case Strategy::kRandom: {
      Rng rng(seed);
      std::shuffle(items.begin(), items.end(), rng);
      for (std::size_t r = 0; r < M; ++r) {
        out.selected_ids.push_back(items[r]->id);
        out.scores[items[r]->id] = 0.0;
      }
      break;
    }
    case Strategy::kMaxEntropy:
      take_ranked([](double p) { return binary_entropy(p); });
      break;
    case Strategy::kLeastConfidence:
      take_ranked([](double p) {
        if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("probability outside [0, 1]");
        return 1.0 - std::max(p, 1.0 - p);
      });
      break;
    case Strategy::kKMeansDiversity: {
      Eigen::MatrixXd X(static_cast<Eigen::Index>(items.size()), items.front()->embedding.size());
      for (std::size_t i = 0; i < items.size(); ++i) {
        const double n = items[i]->embedding.norm();
        X.row(static_cast<Eigen::Index>(i)) = items[i]->embedding.transpose() / (n > 0.0 ? n : 1.0);
      }
      auto km = domainspace::kmeans(X, static_cast<int>(M), seed, 1);
      std::set<std::size_t> used;
      for (Eigen::Index c = 0; c < km.centroids.rows(); ++c) {
        std::size_t best = items.size();
        double bestd = 0.0;
        for (std::size_t i = 0; i < items.size(); ++i) {
          if (used.count(i)) continue;
          const double d = (X.row(static_cast<Eigen::Index>(i)) - km.centroids.row(c)).squaredNorm();
          if (best == items.size() || d < bestd) {
            best = i;
            bestd = d;
          }
        }
        used.insert(best);
        out.selected_ids.push_back(items[best]->id);
        out.scores[items[best]->id] = bestd;
      }
      break;
    }
    case Strategy::kDomainAwareCold:
    case Strategy::kDomainAwareEntropy:
      throw InvalidArgument("domain-aware strategies are not global baselines");
  }
  return out;
}

}  // namespace coalfake::sampler
