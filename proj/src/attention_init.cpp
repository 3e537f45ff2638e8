#include "structattn/attention_init.hpp"

#include <cmath>
#include <string>

#include "structattn/errors.hpp"

namespace structattn {

namespace {

constexpr double kDefaultWeightStd = 0.02;
constexpr double kSingularCutoff = 1e-12;

std::uint64_t u64(int v) { return static_cast<std::uint64_t>(v); }

}  // namespace

std::string to_string(ScaleMode mode) {
  return mode == ScaleMode::paper_exact ? "paper_exact" : "inv_sqrt_d";
}

std::string to_string(InitMethod method) {
  switch (method) {
    case InitMethod::impulse: return "impulse";
    case InitMethod::default_trunc_normal: return "default";
    case InitMethod::mimetic: return "mimetic";
  }
  return "impulse";
}

std::string to_string(PaddingMode mode) {
  return mode == PaddingMode::zero ? "zero" : "circular";
}

ScaleMode parse_scale_mode(const std::string& text) {
  if (text == "paper_exact") return ScaleMode::paper_exact;
  if (text == "inv_sqrt_d") return ScaleMode::inv_sqrt_d;
  throw ConfigError("unknown scale mode '" + text + "'");
}

InitMethod parse_init_method(const std::string& text) {
  if (text == "impulse") return InitMethod::impulse;
  if (text == "default") return InitMethod::default_trunc_normal;
  if (text == "mimetic") return InitMethod::mimetic;
  throw ConfigError("unknown init method '" + text + "'");
}

PaddingMode parse_padding(const std::string& text) {
  if (text == "zero") return PaddingMode::zero;
  if (text == "circular") return PaddingMode::circular;
  throw ConfigError("unknown padding mode '" + text + "'");
}

void InitHyperparams::validate() const {
  check_odd_size(f);
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  if (d_head < 1) throw ConfigError("d_head must be >= 1");
  if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(gamma))
    throw ConfigError("alpha, beta, gamma must be finite");
}

InitHyperparams ModelConfig::hyperparams() const {
  return {alpha, beta, gamma, f, d_head, scale_mode};
}

std::vector<std::string> ModelConfig::validate() const {
  if (dim < 2) throw ConfigError("embedding dimension must be >= 2");
  if (heads < 1 || layers < 1) throw ConfigError("heads and layers must be >= 1");
  if (d_head < 1) throw ConfigError("d_head must be >= 1");
  if (d_head > dim)
    throw ConfigError("d_head " + std::to_string(d_head) + " exceeds embedding dimension " +
                      std::to_string(dim));
  if (!(pos_std > 0.0)) throw ConfigError("positional encoding std must be > 0");
  if (!(layer_norm_eps >= 0.0)) throw ConfigError("layer norm eps must be >= 0");
  if (!(mimetic_mu > 0.0)) throw ConfigError("mimetic mu must be > 0");
  if (!(mimetic_noise >= 0.0)) throw ConfigError("mimetic noise must be >= 0");
  hyperparams().validate();
  if (f > 2 * std::min(grid.rows(), grid.cols()))
    throw ConfigError("kernel size " + std::to_string(f) + " too large for the token grid");
  std::vector<std::string> warnings;
  if (d_head * heads != dim)
    warnings.push_back("d_head * heads = " + std::to_string(d_head * heads) +
                       " differs from embedding dimension " + std::to_string(dim));
  return warnings;
}

const AttentionInit& ModelInit::at(int layer, int head) const {
  if (layer < 0 || layer >= config.layers || head < 0 || head >= config.heads)
    throw BoundsError("no head " + std::to_string(head) + " in layer " + std::to_string(layer));
  return attention.at(static_cast<std::size_t>(layer * config.heads + head));
}

PosEncoding init_pos_encoding(int n, int d, double std, Seed seed) {
  if (n < 1 || d < 1) throw ConfigError("positional encoding needs N, D >= 1");
  if (!(std > 0.0)) throw ConfigError("positional encoding std must be > 0");
  Rng rng(seed);
  return {truncated_normal(n, d, std, rng), std, seed};
}

EmbeddingMatrix layer_norm_rows(const Eigen::MatrixXd& x, double eps) {
  EmbeddingMatrix out(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const Eigen::RowVectorXd centred = x.row(i).array() - mean;
    const double var = centred.squaredNorm() / d;
    const double denom = std::sqrt(var + eps);
    out.row(i) = denom > 0.0 ? Eigen::RowVectorXd(centred / denom) : centred;
  }
  return out;
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& x, double rel_tol) {
  const Eigen::Index needed = std::min(x.rows(), x.cols());
  if (needed == 0) throw SingularityError("pseudo-inverse of an empty matrix", 0, 0);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const Eigen::Index rank = s(0) > 0.0 ? (s.array() > rel_tol * s(0)).count() : 0;
  if (rank < needed) {
    const bool tall = x.rows() >= x.cols();
    throw SingularityError("pseudo input is rank deficient: rank " + std::to_string(rank) +
                               " < " + std::to_string(needed) + " (" +
                               (tall ? "column" : "row") + " dimension " +
                               std::to_string(needed) + ")",
                           rank, needed);
  }
  return svd.matrixV() * s.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
}

Eigen::MatrixXd sample_noise(int n, const NoiseSpec& noise) {
  if (noise.dim < 1) throw ConfigError("noise dimension must be >= 1");
  Rng rng(noise.seed);
  return standard_normal(n, n, rng) / std::sqrt(static_cast<double>(noise.dim));
}

Eigen::MatrixXd build_target_map(const ConvMatrix& h, const InitHyperparams& hp,
                                 const NoiseSpec& noise) {
  const int n = static_cast<int>(h.data.rows());
  Eigen::MatrixXd target = hp.alpha * h.data;
  if (hp.beta != 0.0) target += hp.beta * sample_noise(n, noise);
  return target;
}

AttentionInit solve_qk_from_pseudo_input(const EmbeddingMatrix& pseudo_input,
                                         const ConvMatrix& h, const InitHyperparams& hp,
                                         Seed noise_seed) {
  hp.validate();
  const Eigen::Index n = pseudo_input.rows();
  const Eigen::Index d = pseudo_input.cols();
  if (h.data.rows() != n)
    throw ConfigError("convolution matrix is " + std::to_string(h.data.rows()) +
                      " tokens wide, pseudo input has " + std::to_string(n));
  if (hp.d_head > d)
    throw ConfigError("d_head " + std::to_string(hp.d_head) + " exceeds embedding dimension " +
                      std::to_string(d));

  const Eigen::MatrixXd p_inv = pseudo_inverse(pseudo_input);
  const Eigen::MatrixXd target =
      build_target_map(h, hp, NoiseSpec{static_cast<int>(d), noise_seed});
  const Eigen::MatrixXd qk = p_inv * target * p_inv.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(qk, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd s = svd.singularValues();
  if (s(0) <= 0.0) throw UndefinedInputError("target map projects to zero");
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) < kSingularCutoff * s(0)) s(i) = 0.0;
  const Eigen::VectorXd root = s.head(hp.d_head).cwiseSqrt();

  Eigen::MatrixXd q = svd.matrixU().leftCols(hp.d_head) * root.asDiagonal();
  Eigen::MatrixXd k = svd.matrixV().leftCols(hp.d_head) * root.asDiagonal();
  q *= hp.gamma / q.norm();
  k *= hp.gamma / k.norm();

  AttentionInit out;
  out.q = std::move(q);
  out.k = std::move(k);
  if (h.source.kind == KernelKind::impulse) out.target_offset = h.source.offset;
  return out;
}

AttentionInit solve_qk(const PosEncoding& pos, const ConvMatrix& h, const InitHyperparams& hp,
                       Seed noise_seed, double layer_norm_eps) {
  return solve_qk_from_pseudo_input(layer_norm_rows(pos.data, layer_norm_eps), h, hp,
                                    noise_seed);
}

Eigen::MatrixXd attention_logits(const EmbeddingMatrix& x, const Eigen::MatrixXd& q,
                                 const Eigen::MatrixXd& k, ScaleMode mode) {
  if (q.rows() != x.cols() || k.rows() != x.cols() || q.cols() != k.cols())
    throw ConfigError("Q/K shapes do not match the input embedding");
  const Eigen::MatrixXd xq = x * q;
  const Eigen::MatrixXd xk = x * k;
  Eigen::MatrixXd logits = xq * xk.transpose();
  if (mode == ScaleMode::inv_sqrt_d) logits /= std::sqrt(static_cast<double>(q.cols()));
  return logits;
}

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - peak).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

Eigen::MatrixXd synthesize_attention(const EmbeddingMatrix& x, const Eigen::MatrixXd& q,
                                     const Eigen::MatrixXd& k, ScaleMode mode) {
  return row_softmax(attention_logits(x, q, k, mode));
}

Eigen::MatrixXd head_attention(const ModelInit& init, const AttentionInit& head) {
  return synthesize_attention(layer_norm_rows(init.pos.data, init.config.layer_norm_eps),
                              head.q, head.k, init.config.scale_mode);
}

namespace {

ModelInit start_model(const ModelConfig& config, InitMethod method) {
  config.validate();
  ModelInit init;
  init.config = config;
  init.method = method;
  init.pos = init_pos_encoding(config.tokens(), config.dim, config.pos_std,
                               derive_seed(config.seed, {seed_stream::pos}));
  init.attention.reserve(static_cast<std::size_t>(config.layers * config.heads));
  return init;
}

}  // namespace

ModelInit init_vit(const ModelConfig& config) {
  ModelInit init = start_model(config, InitMethod::impulse);
  const InitHyperparams hp = config.hyperparams();
  const EmbeddingMatrix pseudo_input = layer_norm_rows(init.pos.data, config.layer_norm_eps);
  for (int layer = 0; layer < config.layers; ++layer) {
    const auto offsets = sample_impulse_bank(
        config.heads, config.f, derive_seed(config.seed, {seed_stream::offsets, u64(layer)}),
        config.head_offsets);
    for (int head = 0; head < config.heads; ++head) {
      const ConvMatrix h = make_conv_matrix(offsets[head], config.grid, config.padding);
      AttentionInit a = solve_qk_from_pseudo_input(
          pseudo_input, h, hp,
          derive_seed(config.seed, {seed_stream::noise, u64(layer), u64(head)}));
      a.layer = layer;
      a.head = head;
      init.attention.push_back(std::move(a));
    }
  }
  return init;
}

ModelInit init_default(const ModelConfig& config) {
  ModelInit init = start_model(config, InitMethod::default_trunc_normal);
  for (int layer = 0; layer < config.layers; ++layer) {
    for (int head = 0; head < config.heads; ++head) {
      Rng q_rng(derive_seed(config.seed, {seed_stream::query, u64(layer), u64(head)}));
      Rng k_rng(derive_seed(config.seed, {seed_stream::key, u64(layer), u64(head)}));
      AttentionInit a;
      a.q = truncated_normal(config.dim, config.d_head, kDefaultWeightStd, q_rng);
      a.k = truncated_normal(config.dim, config.d_head, kDefaultWeightStd, k_rng);
      a.layer = layer;
      a.head = head;
      init.attention.push_back(std::move(a));
    }
  }
  return init;
}

ModelInit init_mimetic(const ModelConfig& config) {
  ModelInit init = start_model(config, InitMethod::mimetic);
  const double mu = config.mimetic_mu;
  Eigen::MatrixXd target = mu * Eigen::MatrixXd::Identity(config.dim, config.dim);
  if (config.mimetic_noise > 0.0) {
    Rng rng(derive_seed(config.seed, {seed_stream::mimetic}));
    target += (config.mimetic_noise * mu) * standard_normal(config.dim, config.dim, rng);
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(target, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd root = svd.singularValues().head(config.d_head).cwiseSqrt();
  const Eigen::MatrixXd q = svd.matrixU().leftCols(config.d_head) * root.asDiagonal();
  const Eigen::MatrixXd k = svd.matrixV().leftCols(config.d_head) * root.asDiagonal();
  for (int layer = 0; layer < config.layers; ++layer) {
    for (int head = 0; head < config.heads; ++head) {
      AttentionInit a;
      a.q = q;
      a.k = k;
      a.layer = layer;
      a.head = head;
      init.attention.push_back(std::move(a));
    }
  }
  return init;
}

ModelInit initialize(const ModelConfig& config, InitMethod method) {
  switch (method) {
    case InitMethod::impulse: return init_vit(config);
    case InitMethod::default_trunc_normal: return init_default(config);
    case InitMethod::mimetic: return init_mimetic(config);
  }
  return init_vit(config);
}

}  // namespace structattn
