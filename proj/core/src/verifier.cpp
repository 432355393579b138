#include "coalfake/verifier.hpp"

#include <algorithm>
#include <cmath>

#include "coalfake/util.hpp"

namespace coalfake::verifier {

namespace {

void check_shapes(const Eigen::MatrixXd& probs, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size())
    throw InvalidArgument("probabilities and labels differ in length");
  for (int y : labels)
    if (y < 0 || y >= probs.cols()) throw InvalidArgument("label out of range");
}

}  // namespace

Eigen::VectorXd class_thresholds(const Eigen::MatrixXd& probs, const std::vector<int>& noisy_labels) {
  check_shapes(probs, noisy_labels);
  const Eigen::Index K = probs.cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(K);
  Eigen::VectorXi count = Eigen::VectorXi::Zero(K);
  for (std::size_t i = 0; i < noisy_labels.size(); ++i) {
    const int y = noisy_labels[i];
    sum[y] += probs(static_cast<Eigen::Index>(i), y);
    ++count[y];
  }
  for (Eigen::Index j = 0; j < K; ++j)
    if (count[j] == 0) throw InvalidArgument("class " + std::to_string(j) + " has no samples");
  return sum.array() / count.cast<double>().array();
}

Eigen::MatrixXi confident_joint(const Eigen::MatrixXd& probs, const std::vector<int>& noisy_labels,
                                const Eigen::VectorXd& thresholds) {
  check_shapes(probs, noisy_labels);
  const Eigen::Index K = probs.cols();
  if (thresholds.size() != K) throw InvalidArgument("threshold count differs from class count");
  Eigen::MatrixXi C = Eigen::MatrixXi::Zero(K, K);
  for (std::size_t i = 0; i < noisy_labels.size(); ++i) {
    const auto row = probs.row(static_cast<Eigen::Index>(i));
    Eigen::Index best = -1;
    for (Eigen::Index l = 0; l < K; ++l)
      if (row[l] >= thresholds[l] && (best < 0 || row[l] > row[best])) best = l;
    if (best >= 0) ++C(noisy_labels[i], best);
  }
  return C;
}

Eigen::MatrixXd estimate_q(const Eigen::MatrixXi& confident, const std::vector<std::int64_t>& noisy_label_counts) {
  const Eigen::Index K = confident.rows();
  if (confident.cols() != K || static_cast<Eigen::Index>(noisy_label_counts.size()) != K)
    throw InvalidArgument("estimate_q: shape mismatch");
  Eigen::MatrixXd calibrated = Eigen::MatrixXd::Zero(K, K);
  for (Eigen::Index i = 0; i < K; ++i) {
    const double n_i = static_cast<double>(noisy_label_counts[static_cast<std::size_t>(i)]);
    const double row = confident.row(i).cast<double>().sum();
    if (row > 0.0)
      calibrated.row(i) = confident.row(i).cast<double>() / row * n_i;
    else
      calibrated(i, i) = n_i;  // no evidence of noise
  }
  const double total = calibrated.sum();
  if (!(total > 0.0)) throw InvalidArgument("estimate_q: no samples");
  return calibrated / total;
}

NoiseReport flag_noisy(const Eigen::MatrixXd& q_hat, const Eigen::MatrixXd& probs,
                       const std::vector<int>& noisy_labels, const std::vector<std::string>& ids, double rho) {
  check_shapes(probs, noisy_labels);
  if (ids.size() != noisy_labels.size()) throw InvalidArgument("ids and labels differ in length");
  if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidArgument("rho must lie in [0, 1]");
  const Eigen::Index K = probs.cols();
  const double n = static_cast<double>(noisy_labels.size());

  NoiseReport rep;
  rep.q_hat = q_hat;
  std::vector<std::pair<double, std::size_t>> chosen;
  for (Eigen::Index i = 0; i < K; ++i) {
    const double off = q_hat.row(i).sum() - q_hat(i, i);
    // Round half up; the slack keeps values like 2.4999999999 from dropping a sample.
    const auto want = static_cast<std::size_t>(std::floor(n * off + 0.5 + 1e-9));
    std::vector<std::pair<double, std::size_t>> members;
    for (std::size_t s = 0; s < noisy_labels.size(); ++s)
      if (noisy_labels[s] == i) members.emplace_back(probs(static_cast<Eigen::Index>(s), i), s);
    std::sort(members.begin(), members.end(), [&](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : ids[a.second] < ids[b.second];
    });
    for (std::size_t r = 0; r < std::min(want, members.size()); ++r) chosen.push_back(members[r]);
  }
  std::sort(chosen.begin(), chosen.end(), [&](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : ids[a.second] < ids[b.second];
  });
  for (const auto& [p, s] : chosen) {
    rep.flagged.push_back(ids[s]);
    rep.self_prob[ids[s]] = p;
  }
  const auto queue = static_cast<std::size_t>(std::ceil(rho * static_cast<double>(rep.flagged.size()) - 1e-9));
  rep.human_queue.assign(rep.flagged.begin(), rep.flagged.begin() + static_cast<std::ptrdiff_t>(queue));
  return rep;
}

NoiseReport verify(const Eigen::MatrixXd& probs, const std::vector<int>& noisy_labels,
                   const std::vector<std::string>& ids, double rho) {
  const Eigen::VectorXd t = class_thresholds(probs, noisy_labels);
  const Eigen::MatrixXi C = confident_joint(probs, noisy_labels, t);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(probs.cols()), 0);
  for (int y : noisy_labels) ++counts[static_cast<std::size_t>(y)];
  const Eigen::MatrixXd Q = estimate_q(C, counts);
  NoiseReport rep = flag_noisy(Q, probs, noisy_labels, ids, rho);
  rep.thresholds = t;
  rep.confident_joint = C;
  return rep;
}

nlohmann::json to_json(const NoiseReport& r) {
  auto mat = [](const auto& m) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
      out.push_back(row);
    }
    return out;
  };
  std::vector<double> t(r.thresholds.data(), r.thresholds.data() + r.thresholds.size());
  return {{"thresholds", t},
          {"confident_joint", mat(r.confident_joint)},
          {"q_hat", mat(r.q_hat)},
          {"flagged", r.flagged},
          {"human_queue", r.human_queue},
          {"self_prob", r.self_prob}};
}

NoiseReport noise_report_from_json(const nlohmann::json& j) {
  NoiseReport r;
  auto t = j.at("thresholds").get<std::vector<double>>();
  r.thresholds = Eigen::Map<Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
  const auto& cj = j.at("confident_joint");
  const auto K = static_cast<Eigen::Index>(cj.size());
  r.confident_joint.resize(K, K);
  r.q_hat.resize(K, K);
  for (Eigen::Index a = 0; a < K; ++a)
    for (Eigen::Index b = 0; b < K; ++b) {
      r.confident_joint(a, b) = cj[a][b].get<int>();
      r.q_hat(a, b) = j.at("q_hat")[a][b].get<double>();
    }
  r.flagged = j.at("flagged").get<std::vector<std::string>>();
  r.human_queue = j.at("human_queue").get<std::vector<std::string>>();
  r.self_prob = j.at("self_prob").get<std::map<std::string, double>>();
  return r;
}

}  // namespace coalfake::verifier
