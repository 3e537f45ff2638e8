#pragma once

#include <vector>

#include <Eigen/Dense>

#include "structattn/conv_matrix.hpp"

namespace structattn {

/// N x D: tokens by channels, column i is channel x_i.
using EmbeddingMatrix = Eigen::MatrixXd;
/// D x D pointwise channel mixing, applied on the right.
using ChannelMixWeights = Eigen::MatrixXd;

/// One spatial filter per channel, all of the same size, on one grid.
struct FilterBank {
  std::vector<Kernel2D> filters;
  GridShape grid;
  PaddingMode padding = PaddingMode::zero;

  int channels() const noexcept { return static_cast<int>(filters.size()); }
  int kernel_size() const;
  /// D x f^2, row i is filters[i] vectorized.
  Eigen::MatrixXd vectorized() const;
  void validate() const;
};

FilterBank make_impulse_bank(int count, int f, const GridShape& grid, Seed seed,
                             BankStrategy strategy = BankStrategy::coverage_first,
                             PaddingMode padding = PaddingMode::zero);
FilterBank make_random_bank(int count, int f, const GridShape& grid, Seed seed,
                            PaddingMode padding = PaddingMode::zero);
FilterBank make_box_bank(int count, int f, const GridShape& grid,
                         PaddingMode padding = PaddingMode::zero);

/// Singular values, descending.
Eigen::VectorXd singular_values(const Eigen::MatrixXd& x);

/// sum(sigma^2) / sigma_max^2. Throws UndefinedInputError for a zero matrix.
double stable_rank(const Eigen::MatrixXd& x);

/// Number of singular values above rel_tol * sigma_max (0 for a zero matrix).
int numerical_rank(const Eigen::MatrixXd& x, double rel_tol = 1e-8);

/// Gaussian (N x k)(k x D) product: rank k with probability one.
EmbeddingMatrix sample_low_rank(int n, int d, int k, Seed seed);

struct SpanReport {
  int claimed_M = 0;
  int claimed_k = 0;
  bool satisfied = false;
  std::vector<int> subset_ranks;
  /// Dimension of the common subspace of all group spans.
  int common_dim = 0;
  double tolerance = 0.0;
  /// Filter indices per group.
  std::vector<std::vector<int>> groups;
};

/// Splits the bank's vectorized filters into k groups and tests whether
/// every group's span contains a common M-dimensional subspace.
///
/// Filters are assigned greedily: each goes to the group whose span it
/// enlarges, ties to the smaller group, then the lower group index. For
/// M == f^2 the test is "every group has rank f^2"; for M < f^2 the groups'
/// spans are intersected through principal angles.
SpanReport check_spanned(const FilterBank& bank, int M, int k, double tolerance = 1e-8);

/// Orthonormal basis of the intersection of the column spans of `bases`
/// (each an orthonormal basis). Directions with principal-angle cosine
/// >= 1 - tolerance are kept.
Eigen::MatrixXd intersect_spans(const std::vector<Eigen::MatrixXd>& bases,
                                double tolerance);

/// [H_1 x_1, ..., H_D x_D].
EmbeddingMatrix mixer_spatial(const EmbeddingMatrix& x, const FilterBank& bank);
/// mixer_spatial(x, bank) * w.
EmbeddingMatrix mixer_block(const EmbeddingMatrix& x, const FilterBank& bank,
                            const ChannelMixWeights& w);

struct Prop1Fit {
  ChannelMixWeights weights;
  /// max over output channels of ||F w_j - y_j|| / ||y_j||.
  double rel_residual = 0.0;
  std::vector<double> channel_residuals;
};

/// Least-squares fit of channel mixing weights for `fixed_bank` that make
/// the block reproduce mixer_block(x, target_bank, target_w). Solved with a
/// rank-revealing complete orthogonal decomposition (relative cutoff 1e-10).
Prop1Fit prop1_oracle(const EmbeddingMatrix& x, const FilterBank& fixed_bank,
                      const FilterBank& target_bank, const ChannelMixWeights& target_w);

/// Same fit against explicit targets; used for nested-design comparisons.
Prop1Fit fit_channel_mix(const EmbeddingMatrix& features, const EmbeddingMatrix& targets);

}  // namespace structattn
