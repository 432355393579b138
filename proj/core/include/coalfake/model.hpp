#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace coalfake::model {

enum class AttentionLayout {
  kSingleToken,  // each subspace vector is one token
  kTokenSplit,   // d reshaped into `heads` tokens of d / heads
};

struct ModelConfig {
  int d = 512;
  int heads = 4;
  int hidden = 0;  // decoder hidden width; 0 means d
  std::array<double, 5> lambdas{1.0, 1.0, 0.5, 0.1, 0.1};
  double lr_generator = 1e-4;
  double lr_domain_classifier = 1e-5;
  int epochs = 300;
  int batch = 128;
  double tau = 0.5;
  double val_frac = 0.1;
  AttentionLayout attention = AttentionLayout::kSingleToken;
  bool cross_attention = true;
  bool use_specific = true;  // false drops L_specific and its decoder's updates
  bool use_shared = true;    // false drops L_shared and the adversarial step
  std::uint64_t seed = 0;

  void validate() const;
  int hidden_width() const { return hidden > 0 ? hidden : d; }
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// The six loss terms. total = pred + λ1 recon + λ2 specific + λ3 shared + λ4 ortho + λ5 contrast.
struct LossBreakdown {
  double pred = 0, recon = 0, specific = 0, shared = 0, ortho = 0, contrast = 0, total = 0;
};
nlohmann::json to_json(const LossBreakdown& l);
LossBreakdown loss_breakdown_from_json(const nlohmann::json& j);

struct Batch {
  Eigen::MatrixXd x;       // B x input_dim
  Eigen::VectorXd y;       // B, 0 = real, 1 = fake
  Eigen::MatrixXd domain;  // B x k soft domain targets
};

struct ForwardResult {
  Eigen::VectorXd prob;  // p(fake)
  Eigen::MatrixXd specific, shared;              // f_specific, f_shared
  Eigen::MatrixXd specific_fused, shared_fused;  // after gated cross-attention
  Eigen::MatrixXd reconstruction;
  Eigen::MatrixXd domain_from_specific, domain_from_shared;
};

/// Per-term weights used when differentiating: sum_i c_i * term_i.
using LossWeights = std::array<double, 6>;

/// Dual-subspace classifier with bidirectional gated cross-attention.
class Classifier {
 public:
  enum Param : int {
    kSpW, kSpB, kShW, kShB,
    // specific-to-shared attention: query = shared, key/value = specific
    kS2hQ, kS2hK, kS2hV, kS2hVb, kS2hO, kS2hOb, kS2hLnG, kS2hLnB, kS2hGate,
    // shared-to-specific attention: query = specific, key/value = shared
    kH2sQ, kH2sK, kH2sV, kH2sVb, kH2sO, kH2sOb, kH2sLnG, kH2sLnB, kH2sGate,
    kPredW1, kPredB1, kPredW2, kPredB2,
    kRecW1, kRecB1, kRecW2, kRecB2,
    kSpecW1, kSpecB1, kSpecW2, kSpecB2,
    kDomW1, kDomB1, kDomW2, kDomB2,  // g_shared, the adversarial domain classifier
    kNumParams
  };

  Classifier(ModelConfig cfg, int input_dim, int domain_dim);

  const ModelConfig& config() const { return cfg_; }
  int input_dim() const { return input_dim_; }
  int domain_dim() const { return domain_dim_; }

  ForwardResult forward(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const { return forward(x).prob; }

  /// g_pred applied to an explicit concatenated representation.
  Eigen::VectorXd predict_from_concat(const Eigen::MatrixXd& concat) const;

  LossBreakdown losses(const Batch& batch) const;

  /// Scalar sum_i w_i * term_i; used by finite-difference checks.
  double objective(const Batch& batch, const LossWeights& w) const;

  /// Analytic gradient of `objective` for every parameter (same shapes as parameters()).
  std::vector<Eigen::MatrixXd> gradients(const Batch& batch, const LossWeights& w) const;

  /// Step A: every parameter except g_shared descends the total loss with the shared term
  /// negated. Step B: g_shared descends L_shared. Returns the losses before the update.
  LossBreakdown train_step(const Batch& batch);

  std::vector<Eigen::MatrixXd>& parameters() { return params_; }
  const std::vector<Eigen::MatrixXd>& parameters() const { return params_; }
  static const char* param_name(int p);
  static bool is_domain_classifier(int p) { return p >= kDomW1 && p <= kDomB2; }

  /// Test hook: gate pre-activations to -inf so both gates output exactly 0.
  void close_gates();

  std::int64_t steps() const { return steps_; }

  void save(const std::filesystem::path& path) const;
  static Classifier load(const std::filesystem::path& path);

 private:
  struct Cache;
  struct AttnCache;

  void run_forward(const Eigen::MatrixXd& x, Cache& c) const;
  LossBreakdown terms(const Cache& c, const Batch& b) const;
  void backward(const Cache& c, const Batch& b, const LossWeights& w, std::vector<Eigen::MatrixXd>& g) const;
  void attend(int base, const Eigen::MatrixXd& query, const Eigen::MatrixXd& kv, AttnCache& a) const;
  void attend_backward(int base, const AttnCache& a, const Eigen::MatrixXd& query, const Eigen::MatrixXd& kv,
                       const Eigen::MatrixXd& d_fused, Eigen::MatrixXd& d_query, Eigen::MatrixXd& d_kv,
                       std::vector<Eigen::MatrixXd>& g) const;
  void adam_update(const std::vector<Eigen::MatrixXd>& grads, bool domain_group);

  ModelConfig cfg_;
  int input_dim_;
  int domain_dim_;
  std::vector<Eigen::MatrixXd> params_;
  std::vector<Eigen::MatrixXd> m_, v_;
  std::int64_t steps_ = 0;
  std::int64_t gen_t_ = 0, dom_t_ = 0;
};

/// Threshold-0.5 F1 with fake as the positive class.
double f1_score(const Eigen::VectorXd& prob, const Eigen::VectorXd& y);

struct FitResult {
  Classifier classifier;
  double best_val_f1 = 0.0;
  int best_epoch = -1;
  std::vector<LossBreakdown> epoch_losses;  // mean over batches
};

/// Trains for cfg.epochs on a seeded split, holding out val_frac of the data and keeping
/// the parameters with the best held-out F1. States that predict a single class for the
/// whole held-out slice are kept only if no other state occurs. Throws InvalidArgument
/// unless each class has at least two samples.
FitResult fit(const ModelConfig& cfg, const Batch& data);

/// Max relative error between analytic and central-difference gradients (step 1e-4)
/// over every parameter of a freshly initialized model.
double gradient_check(const ModelConfig& cfg, const Batch& batch, const LossWeights& w);

}  // namespace coalfake::model
