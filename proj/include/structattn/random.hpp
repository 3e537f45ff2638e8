#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace structattn {

using Seed = std::uint64_t;
using Rng = std::mt19937_64;

/// Derives a child seed from a master seed and a path of counters, e.g.
/// derive_seed(master, {layer, head, stream}). SplitMix64 finalizer over the
/// sequence; distinct paths give statistically independent streams.
Seed derive_seed(Seed master, std::initializer_list<std::uint64_t> path);

Eigen::MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Normal(0, std) entries resampled until they fall within ±bound_sigmas·std.
Eigen::MatrixXd truncated_normal(Eigen::Index rows, Eigen::Index cols, double std,
                                 Rng& rng, double bound_sigmas = 2.0);

}  // namespace structattn
