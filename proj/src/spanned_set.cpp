#include "structattn/spanned_set.hpp"

#include <algorithm>
#include <string>

#include "structattn/errors.hpp"

namespace structattn {

int FilterBank::kernel_size() const {
  if (filters.empty()) throw ConfigError("filter bank is empty");
  return filters.front().size;
}

void FilterBank::validate() const {
  const int f = kernel_size();
  for (const auto& k : filters)
    if (k.size != f) throw ConfigError("filter bank mixes kernel sizes");
}

Eigen::MatrixXd FilterBank::vectorized() const {
  const int f = kernel_size();
  Eigen::MatrixXd out(channels(), f * f);
  for (int i = 0; i < channels(); ++i) out.row(i) = filters[i].vectorized().transpose();
  return out;
}

FilterBank make_impulse_bank(int count, int f, const GridShape& grid, Seed seed,
                             BankStrategy strategy, PaddingMode padding) {
  return {sample_impulse_bank(count, f, seed, strategy), grid, padding};
}

FilterBank make_random_bank(int count, int f, const GridShape& grid, Seed seed,
                            PaddingMode padding) {
  if (count < 1) throw ConfigError("random bank needs count >= 1");
  FilterBank bank{{}, grid, padding};
  for (int i = 0; i < count; ++i)
    bank.filters.push_back(sample_random_kernel(f, derive_seed(seed, {std::uint64_t(i)})));
  return bank;
}

FilterBank make_box_bank(int count, int f, const GridShape& grid, PaddingMode padding) {
  if (count < 1) throw ConfigError("box bank needs count >= 1");
  return {std::vector<Kernel2D>(static_cast<std::size_t>(count), make_box_kernel(f)), grid,
          padding};
}

Eigen::VectorXd singular_values(const Eigen::MatrixXd& x) {
  if (x.size() == 0) return Eigen::VectorXd();
  return Eigen::BDCSVD<Eigen::MatrixXd>(x).singularValues();
}

double stable_rank(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd s = singular_values(x);
  if (s.size() == 0 || s(0) == 0.0)
    throw UndefinedInputError("stable rank of an all-zero matrix is undefined");
  return s.squaredNorm() / (s(0) * s(0));
}

int numerical_rank(const Eigen::MatrixXd& x, double rel_tol) {
  const Eigen::VectorXd s = singular_values(x);
  if (s.size() == 0 || s(0) == 0.0) return 0;
  return static_cast<int>((s.array() > rel_tol * s(0)).count());
}

EmbeddingMatrix sample_low_rank(int n, int d, int k, Seed seed) {
  if (n < 1 || d < 1 || k < 1) throw ConfigError("low-rank sample needs n, d, k >= 1");
  Rng rng(seed);
  const Eigen::MatrixXd left = standard_normal(n, k, rng);
  const Eigen::MatrixXd right = standard_normal(k, d, rng);
  return left * right;
}

Eigen::MatrixXd intersect_spans(const std::vector<Eigen::MatrixXd>& bases,
                                double tolerance) {
  if (bases.empty()) return Eigen::MatrixXd();
  Eigen::MatrixXd common = bases.front();
  for (std::size_t g = 1; g < bases.size() && common.cols() > 0; ++g) {
    const Eigen::MatrixXd& other = bases[g];
    if (other.cols() == 0) return Eigen::MatrixXd(common.rows(), 0);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(common.transpose() * other, Eigen::ComputeThinU);
    const Eigen::VectorXd& cosines = svd.singularValues();
    const Eigen::Index keep = (cosines.array() >= 1.0 - tolerance).count();
    common = common * svd.matrixU().leftCols(keep);
  }
  return common;
}

namespace {

// Appends v's component orthogonal to `basis` if it is not already spanned.
bool extends_span(const Eigen::MatrixXd& basis, const Eigen::VectorXd& v, double tolerance,
                  Eigen::VectorXd* direction) {
  const double scale = v.norm();
  if (scale == 0.0) return false;
  Eigen::VectorXd residual = v;
  for (int pass = 0; pass < 2 && basis.cols() > 0; ++pass)
    residual -= basis * (basis.transpose() * residual);
  if (residual.norm() <= tolerance * scale) return false;
  if (direction) *direction = residual.normalized();
  return true;
}

Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& rows_as_vectors, double tolerance) {
  // Column span of the transposed group matrix.
  const Eigen::MatrixXd cols = rows_as_vectors.transpose();
  if (cols.cols() == 0) return Eigen::MatrixXd(cols.rows(), 0);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(cols, Eigen::ComputeThinU);
  const Eigen::VectorXd& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return Eigen::MatrixXd(cols.rows(), 0);
  const Eigen::Index rank = (s.array() > tolerance * s(0)).count();
  return svd.matrixU().leftCols(rank);
}

}  // namespace

SpanReport check_spanned(const FilterBank& bank, int M, int k, double tolerance) {
  bank.validate();
  const int f = bank.kernel_size();
  const int dim = f * f;
  const int d = bank.channels();
  if (k < 1) throw ConfigError("k must be >= 1");
  if (d < k)
    throw InfeasibleError("cannot split " + std::to_string(d) + " filters into " +
                          std::to_string(k) + " non-empty groups");
  if (M < 1 || M > dim)
    throw ConfigError("M must lie in [1, f^2] = [1, " + std::to_string(dim) + "]");

  const Eigen::MatrixXd vectors = bank.vectorized();
  std::vector<Eigen::MatrixXd> bases(static_cast<std::size_t>(k), Eigen::MatrixXd(dim, 0));
  SpanReport report;
  report.claimed_M = M;
  report.claimed_k = k;
  report.tolerance = tolerance;
  report.groups.assign(static_cast<std::size_t>(k), {});

  for (int i = 0; i < d; ++i) {
    const Eigen::VectorXd v = vectors.row(i).transpose();
    int chosen = -1;
    bool chosen_gains = false;
    Eigen::VectorXd chosen_dir;
    for (int g = 0; g < k; ++g) {
      Eigen::VectorXd dir;
      const bool gains = extends_span(bases[g], v, tolerance, &dir);
      const bool better =
          chosen < 0 || (gains && !chosen_gains) ||
          (gains == chosen_gains && report.groups[g].size() < report.groups[chosen].size());
      if (better) {
        chosen = g;
        chosen_gains = gains;
        chosen_dir = dir;
      }
    }
    report.groups[chosen].push_back(i);
    if (chosen_gains) {
      Eigen::MatrixXd& basis = bases[chosen];
      basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
      basis.col(basis.cols() - 1) = chosen_dir;
    }
  }

  std::vector<Eigen::MatrixXd> group_bases;
  for (const auto& members : report.groups) {
    Eigen::MatrixXd group(static_cast<Eigen::Index>(members.size()), dim);
    for (std::size_t j = 0; j < members.size(); ++j) group.row(j) = vectors.row(members[j]);
    report.subset_ranks.push_back(members.empty() ? 0 : numerical_rank(group, tolerance));
    group_bases.push_back(orthonormal_basis(group, tolerance));
  }
  report.common_dim = static_cast<int>(intersect_spans(group_bases, tolerance).cols());

  const bool all_full = std::all_of(report.subset_ranks.begin(), report.subset_ranks.end(),
                                    [&](int r) { return r >= dim; });
  report.satisfied = (M == dim) ? all_full : report.common_dim >= M;
  return report;
}

EmbeddingMatrix mixer_spatial(const EmbeddingMatrix& x, const FilterBank& bank) {
  bank.validate();
  if (x.cols() != bank.channels())
    throw ConfigError("embedding has " + std::to_string(x.cols()) + " channels but bank has " +
                      std::to_string(bank.channels()) + " filters");
  if (x.rows() != bank.grid.tokens())
    throw ConfigError("embedding has " + std::to_string(x.rows()) + " tokens but grid has " +
                      std::to_string(bank.grid.tokens()));
  EmbeddingMatrix out(x.rows(), x.cols());
  for (int i = 0; i < bank.channels(); ++i)
    out.col(i) = make_conv_matrix(bank.filters[i], bank.grid, bank.padding).data * x.col(i);
  return out;
}

EmbeddingMatrix mixer_block(const EmbeddingMatrix& x, const FilterBank& bank,
                            const ChannelMixWeights& w) {
  if (w.rows() != x.cols())
    throw ConfigError("channel mixing weights have " + std::to_string(w.rows()) +
                      " rows, expected " + std::to_string(x.cols()));
  return mixer_spatial(x, bank) * w;
}

Prop1Fit fit_channel_mix(const EmbeddingMatrix& features, const EmbeddingMatrix& targets) {
  if (features.rows() != targets.rows())
    throw ConfigError("features and targets disagree on token count");
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
  cod.setThreshold(1e-10);
  cod.compute(features);
  Prop1Fit fit;
  fit.weights = cod.solve(targets);
  const Eigen::MatrixXd residual = features * fit.weights - targets;
  for (Eigen::Index j = 0; j < targets.cols(); ++j) {
    const double denom = targets.col(j).norm();
    const double r = residual.col(j).norm();
    const double rel = denom > 0.0 ? r / denom : r;
    fit.channel_residuals.push_back(rel);
    fit.rel_residual = std::max(fit.rel_residual, rel);
  }
  return fit;
}

Prop1Fit prop1_oracle(const EmbeddingMatrix& x, const FilterBank& fixed_bank,
                      const FilterBank& target_bank, const ChannelMixWeights& target_w) {
  if (x.size() == 0 || x.isZero(0.0))
    throw UndefinedInputError("channel-mix oracle needs a nonzero input embedding");
  if (fixed_bank.kernel_size() != target_bank.kernel_size() ||
      !(fixed_bank.grid == target_bank.grid))
    throw ConfigError("fixed and target banks must share kernel size and grid");
  const EmbeddingMatrix features = mixer_spatial(x, fixed_bank);
  const EmbeddingMatrix targets = mixer_block(x, target_bank, target_w);
  return fit_channel_mix(features, targets);
}

}  // namespace structattn
