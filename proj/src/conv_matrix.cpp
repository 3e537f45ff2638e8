#include "structattn/conv_matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "structattn/errors.hpp"

namespace structattn {

GridShape::GridShape(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 1 || cols < 1)
    throw ConfigError("grid must be at least 1x1, got " + std::to_string(rows) + "x" +
                      std::to_string(cols));
}

void check_odd_size(int f) {
  if (f < 1 || f % 2 == 0)
    throw ConfigError("kernel size must be a positive odd integer, got " +
                      std::to_string(f));
}

Eigen::VectorXd Kernel2D::vectorized() const {
  Eigen::VectorXd v(size * size);
  for (int a = 0; a < size; ++a)
    for (int b = 0; b < size; ++b) v(a * size + b) = weights(a, b);
  return v;
}

Kernel2D make_impulse_kernel(int f, ImpulseOffset offset) {
  check_odd_size(f);
  const int radius = (f - 1) / 2;
  if (std::abs(offset.dr) > radius || std::abs(offset.dc) > radius)
    throw BoundsError("impulse offset (" + std::to_string(offset.dr) + ", " +
                      std::to_string(offset.dc) + ") outside a " + std::to_string(f) +
                      "x" + std::to_string(f) + " kernel");
  Kernel2D k;
  k.size = f;
  k.weights = Eigen::MatrixXd::Zero(f, f);
  k.weights(radius + offset.dr, radius + offset.dc) = 1.0;
  k.kind = KernelKind::impulse;
  k.offset = offset;
  return k;
}

Kernel2D make_box_kernel(int f) {
  check_odd_size(f);
  Kernel2D k;
  k.size = f;
  k.weights = Eigen::MatrixXd::Ones(f, f);
  k.kind = KernelKind::box;
  return k;
}

Kernel2D sample_random_kernel(int f, Seed seed) {
  check_odd_size(f);
  Rng rng(seed);
  Kernel2D k;
  k.size = f;
  k.weights = standard_normal(f, f, rng) / static_cast<double>(f);
  k.kind = KernelKind::random;
  return k;
}

Kernel2D make_custom_kernel(const Eigen::MatrixXd& weights) {
  if (weights.rows() != weights.cols())
    throw ConfigError("kernel weights must be square");
  check_odd_size(static_cast<int>(weights.rows()));
  if (!weights.allFinite()) throw ConfigError("kernel weights must be finite");
  Kernel2D k;
  k.size = static_cast<int>(weights.rows());
  k.weights = weights;
  k.kind = KernelKind::custom;
  return k;
}

std::vector<ImpulseOffset> all_offsets(int f) {
  check_odd_size(f);
  const int radius = (f - 1) / 2;
  std::vector<ImpulseOffset> out;
  out.reserve(static_cast<std::size_t>(f * f));
  for (int dr = -radius; dr <= radius; ++dr)
    for (int dc = -radius; dc <= radius; ++dc) out.push_back({dr, dc});
  return out;
}

std::vector<Kernel2D> sample_impulse_bank(int count, int f, Seed seed,
                                          BankStrategy strategy) {
  if (count < 1) throw ConfigError("impulse bank needs count >= 1");
  const auto offsets = all_offsets(f);
  Rng rng(seed);
  std::vector<Kernel2D> bank;
  bank.reserve(static_cast<std::size_t>(count));
  if (strategy == BankStrategy::uniform) {
    std::uniform_int_distribution<std::size_t> pick(0, offsets.size() - 1);
    for (int i = 0; i < count; ++i) bank.push_back(make_impulse_kernel(f, offsets[pick(rng)]));
    return bank;
  }
  std::vector<ImpulseOffset> pass = offsets;
  while (static_cast<int>(bank.size()) < count) {
    std::shuffle(pass.begin(), pass.end(), rng);
    for (const auto& o : pass) {
      if (static_cast<int>(bank.size()) == count) break;
      bank.push_back(make_impulse_kernel(f, o));
    }
  }
  return bank;
}

namespace {

int wrap(int v, int n) { return ((v % n) + n) % n; }

}  // namespace

ConvMatrix make_conv_matrix(const Kernel2D& kernel, const GridShape& grid,
                            PaddingMode padding) {
  check_odd_size(kernel.size);
  if (kernel.size > 2 * std::min(grid.rows(), grid.cols()))
    throw ConfigError("kernel size " + std::to_string(kernel.size) +
                      " exceeds twice the smaller grid side");
  const int n = grid.tokens();
  const int radius = kernel.radius();
  ConvMatrix h{grid, Eigen::MatrixXd::Zero(n, n), kernel, padding};
  for (int r = 0; r < grid.rows(); ++r) {
    for (int c = 0; c < grid.cols(); ++c) {
      const int row = grid.index(r, c);
      for (int a = 0; a < kernel.size; ++a) {
        for (int b = 0; b < kernel.size; ++b) {
          const double w = kernel.weights(a, b);
          if (w == 0.0) continue;
          int sr = r + a - radius;
          int sc = c + b - radius;
          if (padding == PaddingMode::circular) {
            sr = wrap(sr, grid.rows());
            sc = wrap(sc, grid.cols());
          } else if (!grid.contains(sr, sc)) {
            continue;
          }
          h.data(row, grid.index(sr, sc)) += w;
        }
      }
    }
  }
  return h;
}

std::vector<int> ConvMatrix::interior_rows() const {
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    if (padding == PaddingMode::circular || (data.row(i).array() != 0.0).any())
      rows.push_back(static_cast<int>(i));
  return rows;
}

}  // namespace structattn
