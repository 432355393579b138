#include "coalfake/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "coalfake/util.hpp"

namespace coalfake::model {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kLnEps = 1e-5;
constexpr double kCosEps = 1e-12;
constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

// Attention parameter offsets from the direction's first index.
enum AttnOffset : int { kQ = 0, kK, kV, kVb, kO, kOb, kLnG, kLnB, kGate };

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

Mat relu(const Mat& m) { return m.cwiseMax(0.0); }
Mat relu_mask(const Mat& pre) { return (pre.array() > 0.0).cast<double>().matrix(); }

// Row-wise affine map: rows of x times W^T plus bias.
Mat affine(const Mat& x, const Mat& W, const Mat& b) {
  Mat out = x * W.transpose();
  out.rowwise() += b.col(0).transpose();
  return out;
}

// Accumulate gradients of an affine map given the upstream gradient dy (B x out).
void affine_backward(const Mat& x, const Mat& W, const Mat& dy, Mat& gW, Mat& gb, Mat* dx) {
  gW.noalias() += dy.transpose() * x;
  gb.col(0) += dy.colwise().sum().transpose();
  if (dx) dx->noalias() += dy * W;
}

}  // namespace

void ModelConfig::validate() const {
  if (d <= 0 || heads <= 0 || d % heads != 0) throw InvalidArgument("model.d must be a positive multiple of model.heads");
  for (double l : lambdas)
    if (!(l >= 0.0)) throw InvalidArgument("model lambdas must be non-negative");
  if (!(tau > 0.0)) throw InvalidArgument("model.tau must be positive");
  if (epochs < 0 || batch <= 0) throw InvalidArgument("model.epochs must be >= 0 and model.batch > 0");
  if (!(lr_generator >= 0.0) || !(lr_domain_classifier >= 0.0)) throw InvalidArgument("learning rates must be >= 0");
  if (!(val_frac >= 0.0 && val_frac < 1.0)) throw InvalidArgument("model.val_frac must lie in [0, 1)");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"heads", c.heads},
          {"hidden", c.hidden},
          {"lambdas", c.lambdas},
          {"lr_generator", c.lr_generator},
          {"lr_domain_classifier", c.lr_domain_classifier},
          {"epochs", c.epochs},
          {"batch", c.batch},
          {"tau", c.tau},
          {"val_frac", c.val_frac},
          {"attention", c.attention == AttentionLayout::kSingleToken ? "single_token" : "token_split"},
          {"cross_attention", c.cross_attention},
          {"use_specific", c.use_specific},
          {"use_shared", c.use_shared},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  c.d = j.value("d", c.d);
  c.heads = j.value("heads", c.heads);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("lambdas")) c.lambdas = j["lambdas"].get<std::array<double, 5>>();
  for (int i = 0; i < 5; ++i) {
    const std::string key = "lambda" + std::to_string(i + 1);
    if (j.contains(key)) c.lambdas[static_cast<std::size_t>(i)] = j[key].get<double>();
  }
  c.lr_generator = j.value("lr_generator", c.lr_generator);
  c.lr_domain_classifier = j.value("lr_domain_classifier", c.lr_domain_classifier);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.tau = j.value("tau", c.tau);
  c.val_frac = j.value("val_frac", c.val_frac);
  if (j.contains("attention")) {
    const auto a = j["attention"].get<std::string>();
    if (a == "single_token")
      c.attention = AttentionLayout::kSingleToken;
    else if (a == "token_split")
      c.attention = AttentionLayout::kTokenSplit;
    else
      throw InvalidArgument("unknown model.attention '" + a + "'");
  }
  c.cross_attention = j.value("cross_attention", c.cross_attention);
  c.use_specific = j.value("use_specific", c.use_specific);
  c.use_shared = j.value("use_shared", c.use_shared);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json to_json(const LossBreakdown& l) {
  return {{"pred", l.pred},     {"recon", l.recon}, {"specific", l.specific}, {"shared", l.shared},
          {"ortho", l.ortho},   {"contrast", l.contrast}, {"total", l.total}};
}

LossBreakdown loss_breakdown_from_json(const nlohmann::json& j) {
  return {j.at("pred").get<double>(),  j.at("recon").get<double>(),    j.at("specific").get<double>(),
          j.at("shared").get<double>(), j.at("ortho").get<double>(),   j.at("contrast").get<double>(),
          j.at("total").get<double>()};
}

struct Classifier::AttnCache {
  Mat out;    // B x d, flattened attention output
  Mat pre;    // B x d, W_out projection before layer norm
  Mat nhat;   // B x d, normalized
  Vec inv_std;
  Mat ln;     // B x d, layer-norm output
  double gamma = 0.0;
  // token-split layout only, one entry per sample
  std::vector<RowMat> q, k, v, attn;
};

struct Classifier::Cache {
  Mat x;
  Mat sp_pre, sp, sh_pre, sh;
  AttnCache s2h, h2s;
  Mat sp_fused, sh_fused, concat;
  Mat pred_pre, pred_hidden;
  Vec logit, prob;
  Mat rec_pre, rec_hidden, recon;
  Mat spec_pre, spec_hidden, dom_sp;
  Mat dom_pre, dom_hidden, dom_sh;
};

const char* Classifier::param_name(int p) {
  static constexpr const char* kNames[kNumParams] = {
      "specific.W", "specific.b", "shared.W", "shared.b",
      "s2h.Wq", "s2h.Wk", "s2h.Wv", "s2h.bv", "s2h.Wout", "s2h.bout", "s2h.ln_gain", "s2h.ln_bias", "s2h.gate",
      "h2s.Wq", "h2s.Wk", "h2s.Wv", "h2s.bv", "h2s.Wout", "h2s.bout", "h2s.ln_gain", "h2s.ln_bias", "h2s.gate",
      "g_pred.W1", "g_pred.b1", "g_pred.W2", "g_pred.b2",
      "g_recons.W1", "g_recons.b1", "g_recons.W2", "g_recons.b2",
      "g_specific.W1", "g_specific.b1", "g_specific.W2", "g_specific.b2",
      "g_shared.W1", "g_shared.b1", "g_shared.W2", "g_shared.b2"};
  return (p >= 0 && p < kNumParams) ? kNames[p] : "?";
}

Classifier::Classifier(ModelConfig cfg, int input_dim, int domain_dim)
    : cfg_(cfg), input_dim_(input_dim), domain_dim_(domain_dim) {
  cfg_.validate();
  if (input_dim <= 0 || domain_dim <= 0) throw InvalidArgument("classifier dimensions must be positive");
  const int d = cfg_.d, h = cfg_.hidden_width();
  const int tokens = cfg_.attention == AttentionLayout::kTokenSplit ? cfg_.heads : 1;
  const int e = d / tokens;

  params_.resize(kNumParams);
  Rng rng(derive_seed(cfg_.seed, "classifier-init"));
  auto uniform = [&](int rows, int cols, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = u(rng);
    return m;
  };
  auto layer = [&](int W, int out, int in) {
    params_[W] = uniform(out, in, in);
    params_[W + 1] = uniform(out, 1, in);
  };

  layer(kSpW, d, input_dim);
  layer(kShW, d, input_dim);
  for (int base : {static_cast<int>(kS2hQ), static_cast<int>(kH2sQ)}) {
    params_[base + kQ] = uniform(e, e, e);
    params_[base + kK] = uniform(e, e, e);
    params_[base + kV] = uniform(e, e, e);
    params_[base + kVb] = uniform(e, 1, e);
    params_[base + kO] = uniform(d, d, d);
    params_[base + kOb] = uniform(d, 1, d);
    params_[base + kLnG] = Mat::Ones(d, 1);
    params_[base + kLnB] = Mat::Zero(d, 1);
    params_[base + kGate] = Mat::Zero(1, 1);  // gate starts at 0.5
  }
  layer(kPredW1, h, 2 * d);
  layer(kPredW2, 1, h);
  layer(kRecW1, h, 2 * d);
  layer(kRecW2, input_dim, h);
  layer(kSpecW1, h, d);
  layer(kSpecW2, domain_dim, h);
  layer(kDomW1, h, d);
  layer(kDomW2, domain_dim, h);

  m_.resize(kNumParams);
  v_.resize(kNumParams);
  for (int p = 0; p < kNumParams; ++p) {
    m_[p] = Mat::Zero(params_[p].rows(), params_[p].cols());
    v_[p] = Mat::Zero(params_[p].rows(), params_[p].cols());
  }
}

void Classifier::close_gates() {
  params_[static_cast<int>(kS2hQ) + kGate](0, 0) = -std::numeric_limits<double>::infinity();
  params_[static_cast<int>(kH2sQ) + kGate](0, 0) = -std::numeric_limits<double>::infinity();
}

void Classifier::attend(int base, const Mat& query, const Mat& kv, AttnCache& a) const {
  const Eigen::Index B = query.rows(), d = query.cols();
  const auto& Wq = params_[base + kQ];
  const auto& Wk = params_[base + kK];
  const auto& Wv = params_[base + kV];
  const auto& bv = params_[base + kVb];

  if (cfg_.attention == AttentionLayout::kSingleToken) {
    // One key per query: the softmax weight is exactly 1 and the output is the value.
    a.out = affine(kv, Wv, bv);
  } else {
    const Eigen::Index T = cfg_.heads, e = d / T;
    const double scale = 1.0 / std::sqrt(static_cast<double>(e));
    a.out.resize(B, d);
    a.q.resize(static_cast<std::size_t>(B));
    a.k.resize(static_cast<std::size_t>(B));
    a.v.resize(static_cast<std::size_t>(B));
    a.attn.resize(static_cast<std::size_t>(B));
    for (Eigen::Index b = 0; b < B; ++b) {
      const Vec qrow = query.row(b).transpose(), krow = kv.row(b).transpose();
      const RowMat xq = Eigen::Map<const RowMat>(qrow.data(), T, e);
      const RowMat xk = Eigen::Map<const RowMat>(krow.data(), T, e);
      auto& Q = a.q[b];
      auto& K = a.k[b];
      auto& V = a.v[b];
      auto& A = a.attn[b];
      Q = xq * Wq.transpose();
      K = xk * Wk.transpose();
      V = xk * Wv.transpose();
      V.rowwise() += bv.col(0).transpose();
      A = (Q * K.transpose()) * scale;
      for (Eigen::Index t = 0; t < T; ++t) {
        A.row(t).array() -= A.row(t).maxCoeff();
        A.row(t) = A.row(t).array().exp().matrix();
        A.row(t) /= A.row(t).sum();
      }
      const RowMat O = A * V;
      a.out.row(b) = Eigen::Map<const Eigen::RowVectorXd>(O.data(), d);
    }
  }

  a.pre = affine(a.out, params_[base + kO], params_[base + kOb]);
  a.nhat.resize(B, d);
  a.inv_std.resize(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const double mu = a.pre.row(b).mean();
    const double var = (a.pre.row(b).array() - mu).square().mean();
    a.inv_std[b] = 1.0 / std::sqrt(var + kLnEps);
    a.nhat.row(b) = (a.pre.row(b).array() - mu) * a.inv_std[b];
  }
  a.ln = a.nhat.array().rowwise() * params_[base + kLnG].col(0).transpose().array();
  a.ln.rowwise() += params_[base + kLnB].col(0).transpose();
  a.gamma = sigmoid(params_[base + kGate](0, 0));
}

void Classifier::attend_backward(int base, const AttnCache& a, const Mat& query, const Mat& kv, const Mat& d_fused,
                                 Mat& d_query, Mat& d_kv, std::vector<Mat>& g) const {
  const Eigen::Index B = query.rows(), d = query.cols();
  d_query += d_fused;  // residual path

  const double d_gamma = (d_fused.array() * a.ln.array()).sum();
  g[base + kGate](0, 0) += d_gamma * a.gamma * (1.0 - a.gamma);
  const Mat d_ln = a.gamma * d_fused;
  g[base + kLnG].col(0) += (d_ln.array() * a.nhat.array()).colwise().sum().transpose().matrix();
  g[base + kLnB].col(0) += d_ln.colwise().sum().transpose();
  const Mat d_nhat = d_ln.array().rowwise() * params_[base + kLnG].col(0).transpose().array();
  Mat d_pre(B, d);
  for (Eigen::Index b = 0; b < B; ++b) {
    const double m1 = d_nhat.row(b).mean();
    const double m2 = (d_nhat.row(b).array() * a.nhat.row(b).array()).mean();
    d_pre.row(b) = a.inv_std[b] * (d_nhat.row(b).array() - m1 - a.nhat.row(b).array() * m2);
  }
  Mat d_out = Mat::Zero(B, d);
  affine_backward(a.out, params_[base + kO], d_pre, g[base + kO], g[base + kOb], &d_out);

  const auto& Wq = params_[base + kQ];
  const auto& Wk = params_[base + kK];
  const auto& Wv = params_[base + kV];
  if (cfg_.attention == AttentionLayout::kSingleToken) {
    affine_backward(kv, Wv, d_out, g[base + kV], g[base + kVb], &d_kv);
    return;
  }

  const Eigen::Index T = cfg_.heads, e = d / T;
  const double scale = 1.0 / std::sqrt(static_cast<double>(e));
  for (Eigen::Index b = 0; b < B; ++b) {
    const Vec qrow = query.row(b).transpose(), krow = kv.row(b).transpose(), drow = d_out.row(b).transpose();
    const RowMat xq = Eigen::Map<const RowMat>(qrow.data(), T, e);
    const RowMat xk = Eigen::Map<const RowMat>(krow.data(), T, e);
    const RowMat dO = Eigen::Map<const RowMat>(drow.data(), T, e);
    const auto& Q = a.q[b];
    const auto& K = a.k[b];
    const auto& V = a.v[b];
    const auto& A = a.attn[b];

    const RowMat dA = dO * V.transpose();
    const RowMat dV = A.transpose() * dO;
    RowMat dS(T, T);
    for (Eigen::Index t = 0; t < T; ++t) {
      const double dot = (dA.row(t).array() * A.row(t).array()).sum();
      dS.row(t) = A.row(t).array() * (dA.row(t).array() - dot);
    }
    const RowMat dQ = dS * K * scale;
    const RowMat dK = dS.transpose() * Q * scale;

    g[base + kQ].noalias() += dQ.transpose() * xq;
    g[base + kK].noalias() += dK.transpose() * xk;
    g[base + kV].noalias() += dV.transpose() * xk;
    g[base + kVb].col(0) += dV.colwise().sum().transpose();

    const RowMat dxq = dQ * Wq;
    const RowMat dxk = dK * Wk + dV * Wv;
    d_query.row(b) += Eigen::Map<const Eigen::RowVectorXd>(dxq.data(), d);
    d_kv.row(b) += Eigen::Map<const Eigen::RowVectorXd>(dxk.data(), d);
  }
}

void Classifier::run_forward(const Mat& x, Cache& c) const {
  if (x.cols() != input_dim_)
    throw InvalidArgument("classifier input has " + std::to_string(x.cols()) + " columns, expected " +
                          std::to_string(input_dim_));
  const Eigen::Index d = cfg_.d;
  c.x = x;
  c.sp_pre = affine(x, params_[kSpW], params_[kSpB]);
  c.sp = relu(c.sp_pre);
  c.sh_pre = affine(x, params_[kShW], params_[kShB]);
  c.sh = relu(c.sh_pre);

  if (cfg_.cross_attention) {
    attend(kS2hQ, c.sh, c.sp, c.s2h);
    attend(kH2sQ, c.sp, c.sh, c.h2s);
    c.sh_fused = c.sh + c.s2h.gamma * c.s2h.ln;
    c.sp_fused = c.sp + c.h2s.gamma * c.h2s.ln;
  } else {
    c.sh_fused = c.sh;
    c.sp_fused = c.sp;
  }

  c.concat.resize(x.rows(), 2 * d);
  c.concat.leftCols(d) = c.sp_fused;
  c.concat.rightCols(d) = c.sh_fused;

  c.pred_pre = affine(c.concat, params_[kPredW1], params_[kPredB1]);
  c.pred_hidden = relu(c.pred_pre);
  c.logit = affine(c.pred_hidden, params_[kPredW2], params_[kPredB2]).col(0);
  c.prob = c.logit.unaryExpr([](double z) { return sigmoid(z); });

  c.rec_pre = affine(c.concat, params_[kRecW1], params_[kRecB1]);
  c.rec_hidden = relu(c.rec_pre);
  c.recon = affine(c.rec_hidden, params_[kRecW2], params_[kRecB2]);

  c.spec_pre = affine(c.sp, params_[kSpecW1], params_[kSpecB1]);
  c.spec_hidden = relu(c.spec_pre);
  c.dom_sp = affine(c.spec_hidden, params_[kSpecW2], params_[kSpecB2]);

  c.dom_pre = affine(c.sh, params_[kDomW1], params_[kDomB1]);
  c.dom_hidden = relu(c.dom_pre);
  c.dom_sh = affine(c.dom_hidden, params_[kDomW2], params_[kDomB2]).unaryExpr([](double z) { return sigmoid(z); });
}

LossBreakdown Classifier::terms(const Cache& c, const Batch& b) const {
  const auto B = static_cast<double>(c.x.rows());
  if (b.y.size() != c.x.rows() || b.domain.rows() != c.x.rows() || b.domain.cols() != domain_dim_)
    throw InvalidArgument("batch labels or domain targets do not match the input");
  LossBreakdown l;
  for (Eigen::Index i = 0; i < c.logit.size(); ++i) l.pred += softplus(c.logit[i]) - b.y[i] * c.logit[i];
  l.pred /= B;
  l.recon = (c.recon - c.x).squaredNorm() / (B * input_dim_);
  if (cfg_.use_specific) l.specific = (c.dom_sp - b.domain).squaredNorm() / (B * domain_dim_);
  if (cfg_.use_shared) l.shared = (c.dom_sh - b.domain).squaredNorm() / (B * domain_dim_);
  l.ortho = (c.sp_fused * c.sh_fused.transpose()).squaredNorm() / (B * B);
  for (Eigen::Index i = 0; i < c.x.rows(); ++i) {
    const double na = std::sqrt(c.sp_fused.row(i).squaredNorm() + kCosEps);
    const double ns = std::sqrt(c.sh_fused.row(i).squaredNorm() + kCosEps);
    const double cs = c.sp_fused.row(i).dot(c.sh_fused.row(i)) / (na * ns);
    l.contrast += softplus((cs - 1.0) / cfg_.tau);
  }
  l.contrast /= B;
  const auto& lam = cfg_.lambdas;
  l.total = l.pred + lam[0] * l.recon + lam[1] * l.specific + lam[2] * l.shared + lam[3] * l.ortho +
            lam[4] * l.contrast;
  return l;
}

void Classifier::backward(const Cache& c, const Batch& b, const LossWeights& w, std::vector<Mat>& g) const {
  const Eigen::Index Bn = c.x.rows(), d = cfg_.d;
  const auto B = static_cast<double>(Bn);
  g.resize(kNumParams);
  for (int p = 0; p < kNumParams; ++p) g[p] = Mat::Zero(params_[p].rows(), params_[p].cols());

  Mat d_concat = Mat::Zero(Bn, 2 * d);

  // prediction head: d(softplus(z) - y z)/dz = sigmoid(z) - y
  {
    Mat dz = ((c.prob - b.y) * (w[0] / B));
    Mat d_hidden = Mat::Zero(Bn, c.pred_hidden.cols());
    affine_backward(c.pred_hidden, params_[kPredW2], dz, g[kPredW2], g[kPredB2], &d_hidden);
    const Mat d_pre = d_hidden.cwiseProduct(relu_mask(c.pred_pre));
    affine_backward(c.concat, params_[kPredW1], d_pre, g[kPredW1], g[kPredB1], &d_concat);
  }
  // reconstruction head
  {
    const Mat d_rec = (c.recon - c.x) * (2.0 * w[1] / (B * input_dim_));
    Mat d_hidden = Mat::Zero(Bn, c.rec_hidden.cols());
    affine_backward(c.rec_hidden, params_[kRecW2], d_rec, g[kRecW2], g[kRecB2], &d_hidden);
    const Mat d_pre = d_hidden.cwiseProduct(relu_mask(c.rec_pre));
    affine_backward(c.concat, params_[kRecW1], d_pre, g[kRecW1], g[kRecB1], &d_concat);
  }

  Mat d_spf = d_concat.leftCols(d);
  Mat d_shf = d_concat.rightCols(d);

  // orthogonality over all (specific, shared) pairs in the batch
  if (w[4] != 0.0) {
    const Mat M = c.sp_fused * c.sh_fused.transpose();
    const double k = 2.0 * w[4] / (B * B);
    d_spf.noalias() += k * M * c.sh_fused;
    d_shf.noalias() += k * M.transpose() * c.sp_fused;
  }
  // contrastive: softplus((cos - 1) / tau) per sample
  if (w[5] != 0.0) {
    for (Eigen::Index i = 0; i < Bn; ++i) {
      const auto a = c.sp_fused.row(i), s = c.sh_fused.row(i);
      const double na = std::sqrt(a.squaredNorm() + kCosEps);
      const double ns = std::sqrt(s.squaredNorm() + kCosEps);
      const double cs = a.dot(s) / (na * ns);
      const double dc = w[5] * sigmoid((cs - 1.0) / cfg_.tau) / (cfg_.tau * B);
      d_spf.row(i) += dc * (s / (na * ns) - cs * a / (na * na));
      d_shf.row(i) += dc * (a / (na * ns) - cs * s / (ns * ns));
    }
  }

  Mat d_sp = Mat::Zero(Bn, d), d_sh = Mat::Zero(Bn, d);
  if (cfg_.cross_attention) {
    attend_backward(kS2hQ, c.s2h, c.sh, c.sp, d_shf, d_sh, d_sp, g);
    attend_backward(kH2sQ, c.h2s, c.sp, c.sh, d_spf, d_sp, d_sh, g);
  } else {
    d_sp += d_spf;
    d_sh += d_shf;
  }

  if (cfg_.use_specific && w[2] != 0.0) {
    const Mat d_out = (c.dom_sp - b.domain) * (2.0 * w[2] / (B * domain_dim_));
    Mat d_hidden = Mat::Zero(Bn, c.spec_hidden.cols());
    affine_backward(c.spec_hidden, params_[kSpecW2], d_out, g[kSpecW2], g[kSpecB2], &d_hidden);
    const Mat d_pre = d_hidden.cwiseProduct(relu_mask(c.spec_pre));
    affine_backward(c.sp, params_[kSpecW1], d_pre, g[kSpecW1], g[kSpecB1], &d_sp);
  }
  if (cfg_.use_shared && w[3] != 0.0) {
    const Mat d_out = (c.dom_sh - b.domain) * (2.0 * w[3] / (B * domain_dim_));
    const Mat d_logit = d_out.array() * c.dom_sh.array() * (1.0 - c.dom_sh.array());
    Mat d_hidden = Mat::Zero(Bn, c.dom_hidden.cols());
    affine_backward(c.dom_hidden, params_[kDomW2], d_logit, g[kDomW2], g[kDomB2], &d_hidden);
    const Mat d_pre = d_hidden.cwiseProduct(relu_mask(c.dom_pre));
    affine_backward(c.sh, params_[kDomW1], d_pre, g[kDomW1], g[kDomB1], &d_sh);
  }

  const Mat d_sp_pre = d_sp.cwiseProduct(relu_mask(c.sp_pre));
  const Mat d_sh_pre = d_sh.cwiseProduct(relu_mask(c.sh_pre));
  affine_backward(c.x, params_[kSpW], d_sp_pre, g[kSpW], g[kSpB], nullptr);
  affine_backward(c.x, params_[kShW], d_sh_pre, g[kShW], g[kShB], nullptr);
}

ForwardResult Classifier::forward(const Mat& x) const {
  Cache c;
  run_forward(x, c);
  return {c.prob, c.sp, c.sh, c.sp_fused, c.sh_fused, c.recon, c.dom_sp, c.dom_sh};
}

Vec Classifier::predict_from_concat(const Mat& concat) const {
  const Mat hidden = relu(affine(concat, params_[kPredW1], params_[kPredB1]));
  return affine(hidden, params_[kPredW2], params_[kPredB2]).col(0).unaryExpr([](double z) { return sigmoid(z); });
}

LossBreakdown Classifier::losses(const Batch& batch) const {
  Cache c;
  run_forward(batch.x, c);
  return terms(c, batch);
}

double Classifier::objective(const Batch& batch, const LossWeights& w) const {
  const LossBreakdown l = losses(batch);
  return w[0] * l.pred + w[1] * l.recon + w[2] * l.specific + w[3] * l.shared + w[4] * l.ortho + w[5] * l.contrast;
}

std::vector<Mat> Classifier::gradients(const Batch& batch, const LossWeights& w) const {
  Cache c;
  run_forward(batch.x, c);
  terms(c, batch);  // shape checks
  std::vector<Mat> g;
  backward(c, batch, w, g);
  return g;
}

void Classifier::adam_update(const std::vector<Mat>& grads, bool domain_group) {
  std::int64_t& t = domain_group ? dom_t_ : gen_t_;
  ++t;
  const double lr = domain_group ? cfg_.lr_domain_classifier : cfg_.lr_generator;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
  for (int p = 0; p < kNumParams; ++p) {
    if (is_domain_classifier(p) != domain_group) continue;
    m_[p] = kBeta1 * m_[p] + (1.0 - kBeta1) * grads[p];
    v_[p] = kBeta2 * v_[p] + (1.0 - kBeta2) * grads[p].cwiseAbs2();
    params_[p].array() -= lr * (m_[p].array() / c1) / ((v_[p].array() / c2).sqrt() + kAdamEps);
  }
}

LossBreakdown Classifier::train_step(const Batch& batch) {
  if (batch.x.rows() > cfg_.batch)
    throw InvalidArgument("batch of " + std::to_string(batch.x.rows()) + " exceeds model.batch=" +
                          std::to_string(cfg_.batch));
  const auto& lam = cfg_.lambdas;

  Cache c;
  run_forward(batch.x, c);
  const LossBreakdown l = terms(c, batch);
  if (!std::isfinite(l.total))
    throw Error("non-finite loss: " + to_json(l).dump());

  // Step A: the generator sees the shared term with a negative sign.
  std::vector<Mat> g;
  backward(c, batch, {1.0, lam[0], lam[1], -lam[2], lam[3], lam[4]}, g);
  adam_update(g, false);

  // Step B: the domain classifier alone minimizes L_shared against the updated encoder.
  if (cfg_.use_shared) {
    Cache cb;
    cb.sh_pre = affine(batch.x, params_[kShW], params_[kShB]);
    cb.sh = relu(cb.sh_pre);
    cb.dom_pre = affine(cb.sh, params_[kDomW1], params_[kDomB1]);
    cb.dom_hidden = relu(cb.dom_pre);
    cb.dom_sh = affine(cb.dom_hidden, params_[kDomW2], params_[kDomB2]).unaryExpr([](double z) { return sigmoid(z); });
    const auto B = static_cast<double>(batch.x.rows());
    for (int p = kDomW1; p <= kDomB2; ++p) g[p].setZero();
    const Mat d_out = (cb.dom_sh - batch.domain) * (2.0 / (B * domain_dim_));
    const Mat d_logit = d_out.array() * cb.dom_sh.array() * (1.0 - cb.dom_sh.array());
    Mat d_hidden = Mat::Zero(batch.x.rows(), cb.dom_hidden.cols());
    affine_backward(cb.dom_hidden, params_[kDomW2], d_logit, g[kDomW2], g[kDomB2], &d_hidden);
    const Mat d_pre = d_hidden.cwiseProduct(relu_mask(cb.dom_pre));
    affine_backward(cb.sh, params_[kDomW1], d_pre, g[kDomW1], g[kDomB1], nullptr);
    adam_update(g, true);
  }
  ++steps_;
  return l;
}

namespace {
constexpr char kMagic[8] = {'C', 'F', 'K', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u64(std::string& buf, std::uint64_t v) { buf.append(reinterpret_cast<const char*>(&v), sizeof v); }
std::uint64_t get_u64(const std::string& buf, std::size_t& pos) {
  if (pos + 8 > buf.size()) throw Error("truncated checkpoint");
  std::uint64_t v;
  std::memcpy(&v, buf.data() + pos, 8);
  pos += 8;
  return v;
}
}  // namespace

void Classifier::save(const std::filesystem::path& path) const {
  nlohmann::json header = {{"version", kCheckpointVersion},
                           {"config", to_json(cfg_)},
                           {"input_dim", input_dim_},
                           {"domain_dim", domain_dim_},
                           {"steps", steps_},
                           {"gen_t", gen_t_},
                           {"dom_t", dom_t_}};
  nlohmann::json shapes = nlohmann::json::array();
  for (int p = 0; p < kNumParams; ++p)
    shapes.push_back({{"name", param_name(p)}, {"rows", params_[p].rows()}, {"cols", params_[p].cols()}});
  header["tensors"] = shapes;

  std::string buf(kMagic, sizeof kMagic);
  const std::string h = header.dump();
  put_u64(buf, h.size());
  buf += h;
  for (const auto* set : {&params_, &m_, &v_})
    for (const auto& t : *set) buf.append(reinterpret_cast<const char*>(t.data()), sizeof(double) * t.size());
  buf += sha256_hex(buf);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot write checkpoint " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Classifier Classifier::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot read checkpoint " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 8 + 64 || buf.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0)
    throw Error("not a classifier checkpoint: " + path.string());
  const std::string body = buf.substr(0, buf.size() - 64);
  if (sha256_hex(body) != buf.substr(buf.size() - 64)) throw Error("checkpoint checksum mismatch: " + path.string());

  std::size_t pos = sizeof kMagic;
  const auto hlen = get_u64(body, pos);
  const auto header = nlohmann::json::parse(body.substr(pos, hlen));
  pos += hlen;
  if (header.at("version").get<std::uint32_t>() != kCheckpointVersion)
    throw Error("unsupported checkpoint version in " + path.string());

  Classifier c(model_config_from_json(header.at("config")), header.at("input_dim").get<int>(),
               header.at("domain_dim").get<int>());
  c.steps_ = header.at("steps").get<std::int64_t>();
  c.gen_t_ = header.at("gen_t").get<std::int64_t>();
  c.dom_t_ = header.at("dom_t").get<std::int64_t>();
  const auto& shapes = header.at("tensors");
  for (auto* set : {&c.params_, &c.m_, &c.v_}) {
    for (int p = 0; p < kNumParams; ++p) {
      auto& t = (*set)[p];
      if (shapes[p].at("rows").get<Eigen::Index>() != t.rows() || shapes[p].at("cols").get<Eigen::Index>() != t.cols())
        throw Error("checkpoint tensor shape mismatch for " + std::string(param_name(p)));
      const std::size_t bytes = sizeof(double) * static_cast<std::size_t>(t.size());
      if (pos + bytes > body.size()) throw Error("truncated checkpoint");
      std::memcpy(t.data(), body.data() + pos, bytes);
      pos += bytes;
    }
  }
  return c;
}

double f1_score(const Vec& prob, const Vec& y) {
  double tp = 0, fp = 0, fn = 0;
  for (Eigen::Index i = 0; i < prob.size(); ++i) {
    const bool pred = prob[i] >= 0.5, truth = y[i] >= 0.5;
    tp += pred && truth;
    fp += pred && !truth;
    fn += !pred && truth;
  }
  return tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
}

namespace {
Batch gather(const Batch& data, const std::vector<Eigen::Index>& idx, std::size_t from, std::size_t to) {
  Batch b;
  const auto n = static_cast<Eigen::Index>(to - from);
  b.x.resize(n, data.x.cols());
  b.y.resize(n);
  b.domain.resize(n, data.domain.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index s = idx[from + static_cast<std::size_t>(r)];
    b.x.row(r) = data.x.row(s);
    b.y[r] = data.y[s];
    b.domain.row(r) = data.domain.row(s);
  }
  return b;
}
}  // namespace

FitResult fit(const ModelConfig& cfg, const Batch& data) {
  cfg.validate();
  const Eigen::Index n = data.x.rows();
  if (data.y.size() != n || data.domain.rows() != n) throw InvalidArgument("fit: inconsistent training data");
  const auto fakes = static_cast<Eigen::Index>((data.y.array() >= 0.5).count());
  if (fakes < 2 || n - fakes < 2) throw InvalidArgument("fit needs at least two samples of each class");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng split_rng(derive_seed(cfg.seed, "fit-split"));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_frac * static_cast<double>(n)));
  std::vector<Eigen::Index> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<Eigen::Index> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (val.empty()) val = train;
  const Batch val_batch = gather(data, val, 0, val.size());

  FitResult res{Classifier(cfg, static_cast<int>(data.x.cols()), static_cast<int>(data.domain.cols())), -1.0, -1, {}};
  Classifier model = res.classifier;
  // A state predicting one class for the whole slice scores the slice's class prior, which on a
  // small noisy slice can beat a trained state. Such states only win when no other state exists.
  bool best_is_constant = true;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1));
    std::shuffle(train.begin(), train.end(), rng);
    LossBreakdown mean;
    int batches = 0;
    for (std::size_t from = 0; from < train.size(); from += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t to = std::min(train.size(), from + static_cast<std::size_t>(cfg.batch));
      const LossBreakdown l = model.train_step(gather(data, train, from, to));
      mean.pred += l.pred, mean.recon += l.recon, mean.specific += l.specific, mean.shared += l.shared;
      mean.ortho += l.ortho, mean.contrast += l.contrast, mean.total += l.total;
      ++batches;
    }
    if (batches > 0) {
      for (double* v : {&mean.pred, &mean.recon, &mean.specific, &mean.shared, &mean.ortho, &mean.contrast, &mean.total})
        *v /= batches;
    }
    res.epoch_losses.push_back(mean);
    const Eigen::VectorXd pred = model.predict(val_batch.x);
    const double f1 = f1_score(pred, val_batch.y);
    const auto fakes = (pred.array() >= 0.5).count();
    const bool constant = fakes == 0 || fakes == pred.size();
    if ((best_is_constant && !constant) || (constant == best_is_constant && f1 > res.best_val_f1)) {
      best_is_constant = constant;
      res.best_val_f1 = f1;
      res.best_epoch = epoch;
      res.classifier = model;
    }
  }
  if (res.best_epoch < 0) res.best_val_f1 = f1_score(res.classifier.predict(val_batch.x), val_batch.y);
  return res;
}

double gradient_check(const ModelConfig& cfg, const Batch& batch, const LossWeights& w) {
  Classifier model(cfg, static_cast<int>(batch.x.cols()), static_cast<int>(batch.domain.cols()));
  const auto analytic = model.gradients(batch, w);
  constexpr double h = 1e-4;
  double worst = 0.0;
  for (int p = 0; p < Classifier::kNumParams; ++p) {
    auto& t = model.parameters()[p];
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double orig = t.data()[i];
      t.data()[i] = orig + h;
      const double up = model.objective(batch, w);
      t.data()[i] = orig - h;
      const double down = model.objective(batch, w);
      t.data()[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[p].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace coalfake::model
