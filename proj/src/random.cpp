#include "structattn/random.hpp"

#include <cmath>

namespace structattn {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Seed derive_seed(Seed master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t state = splitmix64(master);
  for (std::uint64_t step : path) state = splitmix64(state ^ splitmix64(step + 1));
  return state;
}

Eigen::MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(rows, cols);
  // Fill row-major so the draw order matches the row-major export layout.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = normal(rng);
  return out;
}

Eigen::MatrixXd truncated_normal(Eigen::Index rows, Eigen::Index cols, double std,
                                 Rng& rng, double bound_sigmas) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      double z;
      do {
        z = normal(rng);
      } while (std::abs(z) > bound_sigmas);
      out(r, c) = std * z;
    }
  }
  return out;
}

}  // namespace structattn
