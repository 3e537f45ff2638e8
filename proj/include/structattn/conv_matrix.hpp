#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "structattn/random.hpp"

namespace structattn {

/// Token grid of rows x cols; tokens are vectorized row-major, so token
/// (r, c) has flat index r * cols + c everywhere in the library.
class GridShape {
 public:
  GridShape(int rows, int cols);

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  int tokens() const noexcept { return rows_ * cols_; }
  int index(int r, int c) const noexcept { return r * cols_ + c; }
  bool contains(int r, int c) const noexcept {
    return r >= 0 && r < rows_ && c >= 0 && c < cols_;
  }

  friend bool operator==(const GridShape&, const GridShape&) = default;

 private:
  int rows_;
  int cols_;
};

/// Displacement of an impulse's 1-entry from the kernel centre. Also used
/// for detected attention offsets, where the range is not kernel-bounded.
struct ImpulseOffset {
  int dr = 0;
  int dc = 0;

  /// Offset along the vectorized token axis (dr * cols + dc).
  int flat(const GridShape& grid) const noexcept { return dr * grid.cols() + dc; }

  friend bool operator==(const ImpulseOffset&, const ImpulseOffset&) = default;
};

enum class KernelKind { impulse, box, random, custom };
enum class PaddingMode { zero, circular };
enum class BankStrategy { uniform, coverage_first };

/// f x f spatial filter, f odd. Applied as cross-correlation centred on the
/// output token: out(r, c) = sum_ab w(a, b) * in(r + a - f/2, c + b - f/2).
struct Kernel2D {
  int size = 1;
  Eigen::MatrixXd weights = Eigen::MatrixXd::Ones(1, 1);
  KernelKind kind = KernelKind::custom;
  std::optional<ImpulseOffset> offset;  // set iff kind == impulse

  int radius() const noexcept { return (size - 1) / 2; }
  /// Row-major flattening into R^{f*f}.
  Eigen::VectorXd vectorized() const;
};

Kernel2D make_impulse_kernel(int f, ImpulseOffset offset);
Kernel2D make_box_kernel(int f);
/// i.i.d. N(0, 1) entries scaled by 1/f.
Kernel2D sample_random_kernel(int f, Seed seed);
/// Wraps arbitrary weights; kind is custom.
Kernel2D make_custom_kernel(const Eigen::MatrixXd& weights);

/// All f*f offsets in row-major kernel order.
std::vector<ImpulseOffset> all_offsets(int f);

/// `coverage_first` draws whole random permutations of the f*f offsets and
/// concatenates them, so every offset appears before any repeats.
std::vector<Kernel2D> sample_impulse_bank(int count, int f, Seed seed,
                                          BankStrategy strategy);

/// N x N matrix H with H * vec(x) = vec(kernel applied to x) on `grid`.
struct ConvMatrix {
  GridShape grid;
  Eigen::MatrixXd data;
  Kernel2D source;
  PaddingMode padding = PaddingMode::zero;

  /// Rows with at least one nonzero. All rows under circular padding.
  std::vector<int> interior_rows() const;
};

ConvMatrix make_conv_matrix(const Kernel2D& kernel, const GridShape& grid,
                            PaddingMode padding = PaddingMode::zero);

void check_odd_size(int f);

}  // namespace structattn
