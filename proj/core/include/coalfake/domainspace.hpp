#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coalfake/encoder.hpp"

namespace coalfake {

struct NewsRecord;

/// Fitted cluster model over embeddings. Immutable once built.
struct DomainSpace {
  int k = 0;
  Eigen::MatrixXd centroids;                 // k x D, each row the mean of its members
  std::map<std::string, int> assignments;    // record id -> cluster
  double silhouette = 0.0;
  std::map<int, double> silhouette_by_k;     // every k tried in the last full search

  int cluster_of(const std::string& id) const;
  std::size_t dim() const { return static_cast<std::size_t>(centroids.cols()); }
};

/// Soft membership over clusters; entries sum to 1.
using DomainEmbedding = Eigen::VectorXd;

namespace domainspace {

struct KMeansResult {
  Eigen::MatrixXd centroids;
  std::vector<int> assignment;
  double inertia = 0.0;
};

/// Lloyd's algorithm with k-means++ seeding on the rows of `points`. Keeps the best of
/// `restarts` runs by inertia. Empty clusters are reseeded from the farthest point.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int restarts = 5,
                    int max_iter = 300);

/// Pairwise cosine distances (1 - cos) between rows.
Eigen::MatrixXd cosine_distances(const Eigen::MatrixXd& points);

/// Mean silhouette coefficient under a precomputed distance matrix.
double silhouette(const Eigen::MatrixXd& dist, std::span<const int> assignment, int k);

struct FitOptions {
  int k_min = 2;
  int k_max = 10;
  std::uint64_t seed = 0;
};

/// Fits k-means for every k in [k_min, k_max] and keeps the best silhouette (ties go to the
/// smaller k). Throws InvalidArgument for too few points or degenerate geometry.
DomainSpace fit(std::span<const Embedding> embeddings, std::span<const std::string> ids,
                const FitOptions& opts);

/// Refit that first tries the previous k; keeps it when the silhouette moved by less than
/// `stable_tol`, otherwise falls back to the full search.
DomainSpace refit(std::span<const Embedding> embeddings, std::span<const std::string> ids,
                  const FitOptions& opts, const std::optional<DomainSpace>& previous,
                  double stable_tol = 0.01);

/// Softmax over cosine similarities to the centroids.
DomainEmbedding membership(const Embedding& x, const DomainSpace& space);

DomainEmbedding domain_embedding(const NewsRecord& record, const encoder::Encoder& enc,
                                 const DomainSpace& space);

nlohmann::json to_json(const DomainSpace& space);
DomainSpace domain_space_from_json(const nlohmann::json& j);

}  // namespace domainspace
}  // namespace coalfake
