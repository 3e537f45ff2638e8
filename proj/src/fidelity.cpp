#include "structattn/fidelity.hpp"

#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <limits>

#include "structattn/errors.hpp"

namespace structattn {

namespace {

// Column of the single 1 in each row of an impulse matrix, -1 for empty rows.
std::vector<Eigen::Index> impulse_columns(const ConvMatrix& h) {
  std::vector<Eigen::Index> cols(static_cast<std::size_t>(h.data.rows()), -1);
  for (Eigen::Index i = 0; i < h.data.rows(); ++i) {
    for (Eigen::Index j = 0; j < h.data.cols(); ++j) {
      const double v = h.data(i, j);
      if (v == 0.0) continue;
      if (v != 1.0 || cols[i] >= 0)
        throw ContractError("matrix is not an impulse convolution matrix (row " +
                            std::to_string(i) + ")");
      cols[i] = j;
    }
  }
  return cols;
}

void check_square_match(const Eigen::MatrixXd& m, const ConvMatrix& h) {
  if (m.rows() != h.data.rows() || m.cols() != h.data.cols())
    throw ConfigError("attention map and convolution matrix differ in shape");
}

}  // namespace

std::vector<Eigen::Index> row_argmax(const Eigen::MatrixXd& m) {
  std::vector<Eigen::Index> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).maxCoeff(&out[i]);
  return out;
}

double peak_accuracy(const Eigen::MatrixXd& attention, const ConvMatrix& h) {
  check_square_match(attention, h);
  const auto targets = impulse_columns(h);
  const auto argmax = row_argmax(attention);
  int interior = 0;
  int hits = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0) continue;
    ++interior;
    if (argmax[i] == targets[i]) ++hits;
  }
  return interior == 0 ? 0.0 : static_cast<double>(hits) / interior;
}

ImpulseOffset detect_offset(const Eigen::MatrixXd& attention, const GridShape& grid) {
  if (attention.rows() != grid.tokens() || attention.cols() != grid.tokens())
    throw ConfigError("attention map does not match the grid");
  ImpulseOffset best{0, 0};
  double best_mass = -std::numeric_limits<double>::infinity();
  int best_l1 = 0;
  for (int dr = -(grid.rows() - 1); dr < grid.rows(); ++dr) {
    for (int dc = -(grid.cols() - 1); dc < grid.cols(); ++dc) {
      double mass = 0.0;
      for (int r = std::max(0, -dr); r < std::min(grid.rows(), grid.rows() - dr); ++r)
        for (int c = std::max(0, -dc); c < std::min(grid.cols(), grid.cols() - dc); ++c)
          mass += attention(grid.index(r, c), grid.index(r + dr, c + dc));
      const int l1 = std::abs(dr) + std::abs(dc);
      const bool first = dr == -(grid.rows() - 1) && dc == -(grid.cols() - 1);
      const double slack = first ? 0.0 : 1e-12 * std::max(1.0, std::abs(best_mass));
      // Row-major scan order already gives the final tie-break.
      if (first || mass > best_mass + slack ||
          (std::abs(mass - best_mass) <= slack && l1 < best_l1)) {
        best = {dr, dc};
        best_mass = mass;
        best_l1 = l1;
      }
    }
  }
  return best;
}

double row_entropy(const Eigen::MatrixXd& attention) {
  if (attention.rows() == 0) throw ContractError("empty attention map");
  double total = 0.0;
  for (Eigen::Index i = 0; i < attention.rows(); ++i) {
    const auto row = attention.row(i);
    if ((row.array() < 0.0).any() || std::abs(row.sum() - 1.0) > 1e-6)
      throw ContractError("row " + std::to_string(i) + " is not a probability distribution");
    double h = 0.0;
    for (Eigen::Index j = 0; j < row.size(); ++j)
      if (row(j) > 0.0) h -= row(j) * std::log(row(j));
    total += h;
  }
  return total / static_cast<double>(attention.rows());
}

double map_error(const Eigen::MatrixXd& attention, const ConvMatrix& h) {
  check_square_match(attention, h);
  double diff = 0.0;
  double ref = 0.0;
  for (int i : h.interior_rows()) {
    diff += (attention.row(i) - h.data.row(i)).squaredNorm();
    ref += h.data.row(i).squaredNorm();
  }
  if (ref == 0.0) throw UndefinedInputError("convolution matrix has no interior rows");
  return std::sqrt(diff / ref);
}

FidelityReport assess_head(const ModelInit& init, const AttentionInit& head) {
  return assess_head(init, head, head_attention(init, head));
}

FidelityReport assess_head(const ModelInit& init, const AttentionInit& head,
                           const Eigen::MatrixXd& attention) {
  const GridShape& grid = init.config.grid;
  FidelityReport r;
  r.layer = head.layer;
  r.head = head.head;
  r.method = init.method;
  r.target_offset = head.target_offset;
  r.detected_offset = detect_offset(attention, grid);
  r.detected_flat = r.detected_offset.flat(grid);
  r.mean_row_entropy = row_entropy(attention);
  r.normalized_entropy = grid.tokens() > 1
                             ? r.mean_row_entropy / std::log(static_cast<double>(grid.tokens()))
                             : 0.0;
  if (head.target_offset) {
    const ConvMatrix h = make_conv_matrix(make_impulse_kernel(init.config.f, *head.target_offset),
                                          grid, init.config.padding);
    r.peak_recovery = peak_accuracy(attention, h);
    r.frobenius_error = map_error(attention, h);
  }
  return r;
}

void write_fidelity_csv(std::ostream& out, const std::vector<FidelityReport>& reports) {
  out << "layer,head,method,target_dr,target_dc,detected_dr,detected_dc,peak_recovery,"
         "mean_row_entropy,frobenius_error,detected_flat,normalized_entropy\n";
  const auto old_flags = out.flags();
  const auto old_precision = out.precision();
  out << std::setprecision(17);
  for (const auto& r : reports) {
    out << r.layer << ',' << r.head << ',' << to_string(r.method) << ',';
    if (r.target_offset)
      out << r.target_offset->dr << ',' << r.target_offset->dc << ',';
    else
      out << ",,";
    out << r.detected_offset.dr << ',' << r.detected_offset.dc << ',';
    if (r.peak_recovery) out << *r.peak_recovery;
    out << ',' << r.mean_row_entropy << ',';
    if (r.frobenius_error) out << *r.frobenius_error;
    out << ',' << r.detected_flat << ',' << r.normalized_entropy << '\n';
  }
  out.flags(old_flags);
  out.precision(old_precision);
}

}  // namespace structattn
