#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "structattn/attention_init.hpp"
#include "structattn/conv_matrix.hpp"

namespace structattn {

struct FidelityReport {
  int layer = 0;
  int head = 0;
  InitMethod method = InitMethod::impulse;
  std::optional<ImpulseOffset> target_offset;
  ImpulseOffset detected_offset;
  int detected_flat = 0;
  /// Empty when the head has no impulse target.
  std::optional<double> peak_recovery;
  double mean_row_entropy = 0.0;
  /// mean_row_entropy / ln N.
  double normalized_entropy = 0.0;
  std::optional<double> frobenius_error;
};

/// Fraction of rows where H has its 1 (interior rows) whose argmax in M
/// lands on that column. Throws ContractError if H is not an impulse matrix.
double peak_accuracy(const Eigen::MatrixXd& attention, const ConvMatrix& h);

/// Grid displacement whose shifted diagonal {(i, i + dr*cols + dc) : both
/// tokens on the grid, no wrap-around} carries the most attention mass.
/// Ties: smaller |dr| + |dc|, then row-major (dr, then dc).
ImpulseOffset detect_offset(const Eigen::MatrixXd& attention, const GridShape& grid);

/// Mean Shannon entropy (nats) of the rows. Throws ContractError if a row
/// has a negative entry or does not sum to one within 1e-6.
double row_entropy(const Eigen::MatrixXd& attention);

/// ||M - H||_F / ||H||_F over the interior rows of H.
double map_error(const Eigen::MatrixXd& attention, const ConvMatrix& h);

/// Index of the largest entry of each row (first on ties).
std::vector<Eigen::Index> row_argmax(const Eigen::MatrixXd& m);

/// All metrics for one head of an initialized model.
FidelityReport assess_head(const ModelInit& init, const AttentionInit& head);
FidelityReport assess_head(const ModelInit& init, const AttentionInit& head,
                           const Eigen::MatrixXd& attention);

/// One line per report, in the order given. Header:
/// layer,head,method,target_dr,target_dc,detected_dr,detected_dc,
/// peak_recovery,mean_row_entropy,frobenius_error,detected_flat,normalized_entropy
void write_fidelity_csv(std::ostream& out, const std::vector<FidelityReport>& reports);

}  // namespace structattn
