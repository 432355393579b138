#include <algorithm>
#include <map>
#include <numeric>

#include "coalfake/util.hpp"
#include "coalfake/verifier.hpp"

namespace coalfake::verifier {

std::vector<std::string> word_ngrams(const std::string& text, int n) {
  const auto tokens = tokenize(text);
  std::vector<std::string> out;
  for (int order = 1; order <= n; ++order) {
    for (std::size_t i = 0; i + static_cast<std::size_t>(order) <= tokens.size(); ++i) {
      std::string g = tokens[i];
      for (int k = 1; k < order; ++k) {
        g.push_back(' ');
        g += tokens[i + static_cast<std::size_t>(k)];
      }
      out.push_back(std::move(g));
    }
  }
  return out;
}

ProbeModel::ProbeModel(ProbeParams params, int num_classes) : params_(params), num_classes_(num_classes) {
  if (num_classes < 2) throw InvalidArgument("probe needs at least two classes");
  if (params.dim <= 0 || params.ngram <= 0 || params.epochs <= 0 || !(params.lr > 0.0))
    throw InvalidArgument("invalid probe hyperparameters");
}

std::vector<int> ProbeModel::lookup(const std::vector<std::string>& features) const {
  std::vector<int> rows;
  rows.reserve(features.size());
  for (const auto& f : features)
    if (auto it = vocab_.find(f); it != vocab_.end()) rows.push_back(it->second);
  return rows;
}

void ProbeModel::train(const std::vector<std::vector<std::string>>& features, const std::vector<int>& labels) {
  if (features.size() != labels.size()) throw InvalidArgument("probe: features/labels size mismatch");

  // Sorted insertion keeps row indices independent of sample order.
  std::map<std::string, int> sorted;
  for (const auto& fs : features)
    for (const auto& f : fs) sorted.emplace(f, 0);
  vocab_.clear();
  int next = 0;
  for (auto& [f, idx] : sorted) vocab_.emplace(f, next++);

  Rng rng(derive_seed(params_.seed, "probe-init"));
  std::uniform_real_distribution<double> init(-1.0 / params_.dim, 1.0 / params_.dim);
  input_.resize(static_cast<Eigen::Index>(vocab_.size()), params_.dim);
  for (Eigen::Index r = 0; r < input_.rows(); ++r)
    for (Eigen::Index c = 0; c < input_.cols(); ++c) input_(r, c) = init(rng);
  output_ = Eigen::MatrixXd::Zero(num_classes_, params_.dim);

  std::vector<std::vector<int>> rows(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) rows[i] = lookup(features[i]);

  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double total_steps = static_cast<double>(params_.epochs) * static_cast<double>(features.size());
  double step = 0.0;
  Eigen::VectorXd hidden(params_.dim), grad_hidden(params_.dim), logits(num_classes_);
  for (int epoch = 0; epoch < params_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      const double lr = params_.lr * (1.0 - step / total_steps);
      ++step;
      const auto& rs = rows[i];
      if (rs.empty()) continue;
      hidden.setZero();
      for (int r : rs) hidden += input_.row(r).transpose();
      hidden /= static_cast<double>(rs.size());

      logits = output_ * hidden;
      logits.array() -= logits.maxCoeff();
      Eigen::VectorXd p = logits.array().exp();
      p /= p.sum();
      p[labels[i]] -= 1.0;  // dL/dlogits

      grad_hidden = output_.transpose() * p;
      output_.noalias() -= lr * p * hidden.transpose();
      const double scale = lr / static_cast<double>(rs.size());
      for (int r : rs) input_.row(r) -= scale * grad_hidden.transpose();
    }
  }
}

Eigen::VectorXd ProbeModel::predict_proba(const std::vector<std::string>& features) const {
  const auto rs = lookup(features);
  if (rs.empty()) return Eigen::VectorXd::Constant(num_classes_, 1.0 / num_classes_);
  Eigen::VectorXd hidden = Eigen::VectorXd::Zero(params_.dim);
  for (int r : rs) hidden += input_.row(r).transpose();
  hidden /= static_cast<double>(rs.size());
  Eigen::VectorXd logits = output_ * hidden;
  logits.array() -= logits.maxCoeff();
  Eigen::VectorXd p = logits.array().exp();
  return p / p.sum();
}

Eigen::MatrixXd probe_oos_probs(const std::vector<std::string>& ids, const std::vector<std::string>& texts,
                                const std::vector<int>& noisy_labels, int num_classes, const ProbeParams& params) {
  const std::size_t n = ids.size();
  if (texts.size() != n || noisy_labels.size() != n) throw InvalidArgument("probe_oos_probs: size mismatch");
  if (params.folds < 2) throw InvalidArgument("probe_oos_probs: need at least 2 folds");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : noisy_labels) {
    if (y < 0 || y >= num_classes) throw InvalidArgument("probe_oos_probs: label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int c = 0; c < num_classes; ++c)
    if (counts[static_cast<std::size_t>(c)] < params.folds)
      throw InvalidArgument("class " + std::to_string(c) + " has " + std::to_string(counts[static_cast<std::size_t>(c)]) +
                            " samples, fewer than folds=" + std::to_string(params.folds));

  // Visit samples in id order so the result is invariant to input permutation.
  std::vector<std::size_t> by_id(n);
  std::iota(by_id.begin(), by_id.end(), std::size_t{0});
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

  std::vector<std::vector<std::string>> feats(n);
  std::vector<int> fold(n);
  for (std::size_t i = 0; i < n; ++i) {
    feats[i] = word_ngrams(texts[i], params.ngram);
    fold[i] = static_cast<int>(fnv1a(ids[i]) % static_cast<std::uint64_t>(params.folds));
  }

  Eigen::MatrixXd probs(static_cast<Eigen::Index>(n), num_classes);
  for (int f = 0; f < params.folds; ++f) {
    std::vector<std::vector<std::string>> train_x;
    std::vector<int> train_y;
    for (std::size_t i : by_id)
      if (fold[i] != f) {
        train_x.push_back(feats[i]);
        train_y.push_back(noisy_labels[i]);
      }
    ProbeParams p = params;
    p.seed = derive_seed(params.seed, static_cast<std::uint64_t>(f));
    ProbeModel model(p, num_classes);
    model.train(train_x, train_y);
    for (std::size_t i = 0; i < n; ++i)
      if (fold[i] == f) probs.row(static_cast<Eigen::Index>(i)) = model.predict_proba(feats[i]).transpose();
  }
  return probs;
}

}  // namespace coalfake::verifier
