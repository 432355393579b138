#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "coalfake/domainspace.hpp"
#include "coalfake/encoder.hpp"

namespace coalfake::sampler {

enum class Strategy {
  kDomainAwareCold,
  kDomainAwareEntropy,
  kRandom,
  kMaxEntropy,
  kLeastConfidence,
  kKMeansDiversity,
};

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

/// Per-cluster quota m_j with sum equal to the budget.
struct Allocation {
  std::vector<std::size_t> per_cluster;
  std::size_t total = 0;
};

struct AcquisitionResult {
  std::vector<std::string> selected_ids;
  Strategy strategy = Strategy::kRandom;
  std::map<std::string, double> scores;
};

/// One pool member as the sampler sees it.
struct PoolItem {
  std::string id;
  Embedding embedding;
};

using ProbMap = std::map<std::string, double>;  // id -> p(fake)

/// Pool members per cluster, using the space's assignments.
std::vector<std::size_t> cluster_sizes(const DomainSpace& space, const std::vector<PoolItem>& pool);

/// w_j = 1 / (|C_j ∩ pool| + eps), normalized.
std::vector<double> cluster_weights(const DomainSpace& space, const std::vector<PoolItem>& pool,
                                    double epsilon = 1e-6);
std::vector<double> cluster_weights(const std::vector<std::size_t>& pool_sizes, double epsilon = 1e-6);

/// Ceil quotas, then repaired to sum exactly to M without exceeding capacity.
/// Over budget: decrement the largest m_j (ties: larger capacity, then lower index).
/// Under budget: increment the cluster with the most remaining capacity (ties: lower index).
Allocation allocate(std::size_t M, const std::vector<double>& weights,
                    const std::vector<std::size_t>& capacities);

/// Binary entropy in nats with 0 log 0 = 0. Throws InvalidArgument outside [0, 1].
double binary_entropy(double p);

/// Per cluster, the m_j members nearest (cosine) to the centroid.
AcquisitionResult cold_start_select(const DomainSpace& space, const std::vector<PoolItem>& pool,
                                    const Allocation& allocation);

/// Per cluster, the m_j members with highest entropy. Ties by record id.
AcquisitionResult entropy_select(const DomainSpace& space, const std::vector<PoolItem>& pool,
                                 const Allocation& allocation, const ProbMap& probs);

/// Global (no quota) baseline strategies.
AcquisitionResult baseline_select(Strategy strategy, const std::vector<PoolItem>& pool, std::size_t M,
                                  const ProbMap* probs, std::uint64_t seed);

}  // namespace coalfake::sampler
