#include "coalfake/domainspace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "coalfake/corpus.hpp"
#include "coalfake/util.hpp"

namespace coalfake {

int DomainSpace::cluster_of(const std::string& id) const {
  auto it = assignments.find(id);
  if (it == assignments.end()) throw NotFound("record '" + id + "' is not in the fitted domain space");
  return it->second;
}

namespace domainspace {

namespace {

KMeansResult kmeans_once(const Eigen::MatrixXd& X, int k, Rng& rng, int max_iter) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd C(k, X.cols());

  // k-means++ seeding
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  C.row(0) = X.row(first(rng));
  Eigen::VectorXd d2 = (X.rowwise() - C.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (chosen = 0; chosen < n - 1; ++chosen) {
        r -= d2[chosen];
        if (r <= 0.0) break;
      }
    } else {
      chosen = first(rng);
    }
    C.row(c) = X.row(chosen);
    d2 = d2.cwiseMin((X.rowwise() - C.row(c)).rowwise().squaredNorm());
  }

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bestd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (X.row(i) - C.row(c)).squaredNorm();
        if (d < bestd) {
          bestd = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, X.cols());
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += X.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        C.row(c) = sums.row(c) / counts[c];
        continue;
      }
      // Empty cluster: steal the point farthest from its centroid.
      Eigen::Index far = 0;
      double fard = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (counts[assign[i]] <= 1) continue;
        const double d = (X.row(i) - C.row(assign[i])).squaredNorm();
        if (d > fard) {
          fard = d;
          far = i;
        }
      }
      --counts[assign[far]];
      assign[far] = c;
      counts[c] = 1;
      C.row(c) = X.row(far);
      changed = true;
    }
    if (!changed) break;
  }

  // Centroids are exact member means for the final assignment.
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, X.cols());
  std::vector<int> counts(k, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    sums.row(assign[i]) += X.row(i);
    ++counts[assign[i]];
  }
  for (int c = 0; c < k; ++c)
    if (counts[c] > 0) C.row(c) = sums.row(c) / counts[c];

  double inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) inertia += (X.row(i) - C.row(assign[i])).squaredNorm();
  return {std::move(C), std::move(assign), inertia};
}

Eigen::MatrixXd stack_normalized(std::span<const Embedding> embeddings) {
  if (embeddings.empty()) throw InvalidArgument("no embeddings to cluster");
  const Eigen::Index dim = embeddings.front().size();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(embeddings.size()), dim);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != dim) throw InvalidArgument("embedding dimensions differ");
    const double n = embeddings[i].norm();
    if (!(n > 0.0)) throw InvalidArgument("zero-norm embedding at index " + std::to_string(i));
    X.row(static_cast<Eigen::Index>(i)) = embeddings[i].transpose() / n;
  }
  return X;
}

DomainSpace make_space(const KMeansResult& km, std::span<const std::string> ids, double sil) {
  DomainSpace s;
  s.k = static_cast<int>(km.centroids.rows());
  s.centroids = km.centroids;
  s.silhouette = sil;
  for (std::size_t i = 0; i < ids.size(); ++i) s.assignments[ids[i]] = km.assignment[i];
  return s;
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int restarts, int max_iter) {
  if (k < 1 || points.rows() < k)
    throw InvalidArgument("k-means needs at least k=" + std::to_string(k) + " points");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    KMeansResult cur = kmeans_once(points, k, rng, max_iter);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

Eigen::MatrixXd cosine_distances(const Eigen::MatrixXd& points) {
  Eigen::MatrixXd U = points;
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    const double n = U.row(i).norm();
    if (n > 0.0) U.row(i) /= n;
  }
  Eigen::MatrixXd D = Eigen::MatrixXd::Ones(U.rows(), U.rows()) - U * U.transpose();
  D = D.cwiseMax(0.0);
  D.diagonal().setZero();
  return D;
}

double silhouette(const Eigen::MatrixXd& dist, std::span<const int> assignment, int k) {
  const auto n = static_cast<Eigen::Index>(assignment.size());
  std::vector<int> counts(k, 0);
  for (int a : assignment) ++counts[a];
  double total = 0.0;
  std::vector<double> sums(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) sums[assignment[j]] += dist(i, j);
    const int own = assignment[i];
    if (counts[own] <= 1) continue;  // singleton: s = 0
    const double a = sums[own] / (counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c)
      if (c != own && counts[c] > 0) b = std::min(b, sums[c] / counts[c]);
    const double m = std::max(a, b);
    if (m > 0.0 && std::isfinite(b)) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

DomainSpace fit(std::span<const Embedding> embeddings, std::span<const std::string> ids,
                const FitOptions& opts) {
  if (ids.size() != embeddings.size()) throw InvalidArgument("ids and embeddings differ in length");
  if (opts.k_min < 2 || opts.k_max < opts.k_min) throw InvalidArgument("need 2 <= k_min <= k_max");
  const auto n = static_cast<int>(embeddings.size());
  if (n <= opts.k_min)
    throw InvalidArgument("fewer points (" + std::to_string(n) + ") than k_min+1 (" +
                          std::to_string(opts.k_min + 1) + ")");
  const Eigen::MatrixXd X = stack_normalized(embeddings);
  const Eigen::MatrixXd D = cosine_distances(X);
  if (D.maxCoeff() <= 1e-12) throw InvalidArgument("degenerate geometry: all points identical");

  const int k_max = std::min(opts.k_max, n - 1);
  std::optional<DomainSpace> best;
  std::map<int, double> by_k;
  for (int k = opts.k_min; k <= k_max; ++k) {
    KMeansResult km = kmeans(X, k, derive_seed(opts.seed, static_cast<std::uint64_t>(k)));
    const double s = silhouette(D, km.assignment, k);
    by_k[k] = s;
    if (!best || s > best->silhouette) best = make_space(km, ids, s);
  }
  best->silhouette_by_k = std::move(by_k);
  return *best;
}

DomainSpace refit(std::span<const Embedding> embeddings, std::span<const std::string> ids,
                  const FitOptions& opts, const std::optional<DomainSpace>& previous, double stable_tol) {
  if (!previous) return fit(embeddings, ids, opts);
  const int k = previous->k;
  const auto n = static_cast<int>(embeddings.size());
  if (k < opts.k_min || k > opts.k_max || n <= k) return fit(embeddings, ids, opts);

  const Eigen::MatrixXd X = stack_normalized(embeddings);
  const Eigen::MatrixXd D = cosine_distances(X);
  if (D.maxCoeff() <= 1e-12) throw InvalidArgument("degenerate geometry: all points identical");
  KMeansResult km = kmeans(X, k, derive_seed(opts.seed, static_cast<std::uint64_t>(k)));
  const double s = silhouette(D, km.assignment, k);
  if (std::abs(s - previous->silhouette) >= stable_tol) return fit(embeddings, ids, opts);
  DomainSpace out = make_space(km, ids, s);
  out.silhouette_by_k = {{k, s}};
  return out;
}

DomainEmbedding membership(const Embedding& x, const DomainSpace& space) {
  if (static_cast<std::size_t>(x.size()) != space.dim())
    throw InvalidArgument("membership: dimension " + std::to_string(x.size()) + " != " +
                          std::to_string(space.dim()));
  const double xn = x.norm();
  if (!(xn > 0.0)) throw InvalidArgument("membership: zero-norm input");
  Eigen::VectorXd s(space.k);
  for (int j = 0; j < space.k; ++j) {
    const double cn = space.centroids.row(j).norm();
    s[j] = cn > 0.0 ? space.centroids.row(j).dot(x) / (cn * xn) : 0.0;
  }
  // cosine similarities lie in [-1, 1], so exp cannot overflow
  Eigen::VectorXd e = s.array().exp();
  return e / e.sum();
}

DomainEmbedding domain_embedding(const NewsRecord& record, const encoder::Encoder& enc,
                                 const DomainSpace& space) {
  return membership(enc.embed(record.text), space);
}

nlohmann::json to_json(const DomainSpace& space) {
  nlohmann::json cent = nlohmann::json::array();
  for (Eigen::Index r = 0; r < space.centroids.rows(); ++r) {
    std::vector<double> row(space.centroids.cols());
    for (Eigen::Index c = 0; c < space.centroids.cols(); ++c) row[c] = space.centroids(r, c);
    cent.push_back(row);
  }
  nlohmann::json sil = nlohmann::json::object();
  for (auto [k, s] : space.silhouette_by_k) sil[std::to_string(k)] = s;
  return {{"k", space.k},
          {"centroids", cent},
          {"silhouette", space.silhouette},
          {"silhouette_by_k", sil},
          {"assignments", space.assignments}};
}

DomainSpace domain_space_from_json(const nlohmann::json& j) {
  DomainSpace s;
  s.k = j.at("k").get<int>();
  const auto& cent = j.at("centroids");
  const auto cols = cent.empty() ? 0 : cent[0].size();
  s.centroids.resize(s.k, static_cast<Eigen::Index>(cols));
  for (int r = 0; r < s.k; ++r)
    for (std::size_t c = 0; c < cols; ++c) s.centroids(r, static_cast<Eigen::Index>(c)) = cent[r][c].get<double>();
  s.silhouette = j.at("silhouette").get<double>();
  if (j.contains("silhouette_by_k"))
    for (const auto& [k, v] : j["silhouette_by_k"].items()) s.silhouette_by_k[std::stoi(k)] = v.get<double>();
  s.assignments = j.at("assignments").get<std::map<std::string, int>>();
  return s;
}

}  // namespace domainspace
}  // namespace coalfake
