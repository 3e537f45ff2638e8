#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "structattn/conv_matrix.hpp"
#include "structattn/random.hpp"
#include "structattn/spanned_set.hpp"

namespace structattn {

/// paper_exact: softmax(X Q K^T X^T); inv_sqrt_d divides the logits by
/// sqrt(d_head) first, as a standard attention block does.
enum class ScaleMode { paper_exact, inv_sqrt_d };
enum class InitMethod { impulse, default_trunc_normal, mimetic };

std::string to_string(ScaleMode mode);
std::string to_string(InitMethod method);
std::string to_string(PaddingMode mode);
ScaleMode parse_scale_mode(const std::string& text);
InitMethod parse_init_method(const std::string& text);
PaddingMode parse_padding(const std::string& text);

struct PosEncoding {
  Eigen::MatrixXd data;  // N x D
  double std = 0.02;
  Seed seed = 0;
};

struct InitHyperparams {
  double alpha = 40.0;
  double beta = 1.0;
  double gamma = 2.0;
  int f = 3;
  int d_head = 64;
  ScaleMode scale_mode = ScaleMode::inv_sqrt_d;

  void validate() const;
};

/// Noise term Z of the target map: N x N, i.i.d. N(0, 1/dim).
struct NoiseSpec {
  int dim = 1;
  Seed seed = 0;
};

struct AttentionInit {
  Eigen::MatrixXd q;  // D x d_head
  Eigen::MatrixXd k;  // D x d_head
  std::optional<ImpulseOffset> target_offset;  // absent for the baselines
  int layer = 0;
  int head = 0;
};

struct ModelConfig {
  GridShape grid{8, 8};
  int dim = 192;
  int heads = 3;
  int layers = 12;
  int f = 3;
  int d_head = 64;
  PaddingMode padding = PaddingMode::zero;
  ScaleMode scale_mode = ScaleMode::inv_sqrt_d;
  double alpha = 40.0;
  double beta = 1.0;
  double gamma = 2.0;
  double pos_std = 0.02;
  double layer_norm_eps = 1e-6;
  double mimetic_mu = 0.05;
  double mimetic_noise = 0.01;
  BankStrategy head_offsets = BankStrategy::coverage_first;
  Seed seed = 0;

  int tokens() const noexcept { return grid.tokens(); }
  InitHyperparams hyperparams() const;
  /// Throws ConfigError on hard violations; returns warnings (e.g.
  /// d_head * heads != dim) that do not stop initialization.
  std::vector<std::string> validate() const;
};

struct ModelInit {
  ModelConfig config;
  PosEncoding pos;
  std::vector<AttentionInit> attention;  // layer-major, length layers * heads
  InitMethod method = InitMethod::impulse;

  const AttentionInit& at(int layer, int head) const;
};

/// Truncated normal(0, std) clipped at ±2 std.
PosEncoding init_pos_encoding(int n, int d, double std, Seed seed);

/// Per-row standardization with unit gain and zero bias:
/// (x - mean) / sqrt(var + eps), var the biased row variance.
EmbeddingMatrix layer_norm_rows(const Eigen::MatrixXd& x, double eps = 1e-6);

/// Moore-Penrose inverse of a full-rank matrix. For N >= D this is
/// (X^T X)^{-1} X^T and satisfies P_inv X = I_D; for N < D it is the right
/// inverse X^T (X X^T)^{-1} with X P_inv = I_N. Throws SingularityError when
/// the rank falls short of min(N, D).
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& x, double rel_tol = 1e-10);

Eigen::MatrixXd sample_noise(int n, const NoiseSpec& noise);

/// alpha * H + beta * Z.
Eigen::MatrixXd build_target_map(const ConvMatrix& h, const InitHyperparams& hp,
                                 const NoiseSpec& noise);

/// Factors P_inv (alpha H + beta Z) P_inv^T by SVD into Q = U sqrt(s),
/// K = V sqrt(s), keeps the leading d_head columns and rescales each to
/// Frobenius norm gamma. `pseudo_input` is the already normalized X~.
AttentionInit solve_qk_from_pseudo_input(const EmbeddingMatrix& pseudo_input,
                                         const ConvMatrix& h, const InitHyperparams& hp,
                                         Seed noise_seed);

/// Full pipeline from a positional encoding: X~ = layer_norm_rows(P), then
/// solve_qk_from_pseudo_input.
AttentionInit solve_qk(const PosEncoding& pos, const ConvMatrix& h, const InitHyperparams& hp,
                       Seed noise_seed, double layer_norm_eps = 1e-6);

/// X Q K^T X^T, optionally divided by sqrt(d_head).
Eigen::MatrixXd attention_logits(const EmbeddingMatrix& x, const Eigen::MatrixXd& q,
                                 const Eigen::MatrixXd& k, ScaleMode mode);

/// Numerically stable row softmax.
Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& logits);

/// Row-wise softmax of attention_logits; rows sum to one.
Eigen::MatrixXd synthesize_attention(const EmbeddingMatrix& x, const Eigen::MatrixXd& q,
                                     const Eigen::MatrixXd& k, ScaleMode mode);

/// Attention map of one stored head, re-derived from the stored encoding.
Eigen::MatrixXd head_attention(const ModelInit& init, const AttentionInit& head);

/// Impulse initialization for every head of every layer.
ModelInit init_vit(const ModelConfig& config);
/// Truncated normal(0, 0.02) Q and K with no structure.
ModelInit init_default(const ModelConfig& config);
/// Q K^T ~ mu I + noise, factored by truncated SVD; identical for all heads.
ModelInit init_mimetic(const ModelConfig& config);

ModelInit initialize(const ModelConfig& config, InitMethod method);

/// Seed counter scheme shared by all initializers.
namespace seed_stream {
inline constexpr std::uint64_t pos = 0;
inline constexpr std::uint64_t offsets = 1;
inline constexpr std::uint64_t noise = 2;
inline constexpr std::uint64_t query = 3;
inline constexpr std::uint64_t key = 4;
inline constexpr std::uint64_t mimetic = 5;
}  // namespace seed_stream

}  // namespace structattn
