#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <unordered_map>
#include <vector>

namespace coalfake::verifier {

struct ProbeParams {
  double lr = 0.1;
  int dim = 100;
  int ngram = 3;
  int folds = 5;
  int epochs = 5;
  std::uint64_t seed = 0;
};

/// Word n-grams of orders 1..n, each joined with single spaces.
std::vector<std::string> word_ngrams(const std::string& text, int n);

/// Bag-of-n-grams text classifier: averaged n-gram embeddings feeding a linear softmax
/// head, trained with plain SGD and a linearly decaying learning rate.
class ProbeModel {
 public:
  ProbeModel(ProbeParams params, int num_classes);

  /// Visits samples in a seeded reshuffle of the given order each epoch.
  void train(const std::vector<std::vector<std::string>>& features, const std::vector<int>& labels);

  /// Class probabilities; n-grams unseen in training are ignored.
  Eigen::VectorXd predict_proba(const std::vector<std::string>& features) const;

  std::size_t vocabulary_size() const { return vocab_.size(); }

 private:
  std::vector<int> lookup(const std::vector<std::string>& features) const;

  ProbeParams params_;
  int num_classes_;
  std::unordered_map<std::string, int> vocab_;
  Eigen::MatrixXd input_;   // |V| x dim
  Eigen::MatrixXd output_;  // K x dim
};

/// Out-of-sample class probabilities via k-fold cross-validation. Fold membership is a
/// stable hash of the record id, so results do not depend on input order.
Eigen::MatrixXd probe_oos_probs(const std::vector<std::string>& ids, const std::vector<std::string>& texts,
                                const std::vector<int>& noisy_labels, int num_classes, const ProbeParams& params);

/// t_j: mean self-probability over samples labelled j.
Eigen::VectorXd class_thresholds(const Eigen::MatrixXd& probs, const std::vector<int>& noisy_labels);

/// C[i][j]: samples labelled i whose most probable above-threshold class is j.
Eigen::MatrixXi confident_joint(const Eigen::MatrixXd& probs, const std::vector<int>& noisy_labels,
                                const Eigen::VectorXd& thresholds);

/// Calibrated joint: each row of C rescaled to its noisy-label count, then normalized to
/// sum 1. A row of zeros puts its whole count on the diagonal.
Eigen::MatrixXd estimate_q(const Eigen::MatrixXi& confident, const std::vector<std::int64_t>& noisy_label_counts);

struct NoiseReport {
  Eigen::VectorXd thresholds;
  Eigen::MatrixXi confident_joint;
  Eigen::MatrixXd q_hat;
  std::vector<std::string> flagged;      // ascending self-probability, ties by id
  std::vector<std::string> human_queue;  // prefix of flagged
  std::map<std::string, double> self_prob;  // for every flagged id
};

/// Per class i, the round-half-up(n * sum_{j != i} Q[i][j]) lowest self-probability
/// samples labelled i. The human queue takes the ceil(rho * |flagged|) least confident.
NoiseReport flag_noisy(const Eigen::MatrixXd& q_hat, const Eigen::MatrixXd& probs,
                       const std::vector<int>& noisy_labels, const std::vector<std::string>& ids, double rho);

/// thresholds -> confident joint -> calibrated joint -> flagged samples.
NoiseReport verify(const Eigen::MatrixXd& probs, const std::vector<int>& noisy_labels,
                   const std::vector<std::string>& ids, double rho);

nlohmann::json to_json(const NoiseReport& report);
NoiseReport noise_report_from_json(const nlohmann::json& j);

}  // namespace coalfake::verifier
