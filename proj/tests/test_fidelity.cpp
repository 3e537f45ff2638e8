#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "structattn/errors.hpp"
#include "structattn/fidelity.hpp"

using namespace structattn;

namespace {

Eigen::MatrixXd noisy_softmax(const Eigen::MatrixXd& signal, double noise, Seed seed) {
  Rng rng(seed);
  return row_softmax(signal + noise * standard_normal(signal.rows(), signal.cols(), rng));
}

}  // namespace

TEST_CASE("peak accuracy") {
  const GridShape grid(8, 8);
  const ConvMatrix h = make_conv_matrix(make_impulse_kernel(3, {-1, 1}), grid);
  CHECK(peak_accuracy(noisy_softmax(100.0 * h.data, 1e-3, 1), h) == 1.0);

  double total = 0.0;
  for (Seed s = 0; s < 100; ++s) total += peak_accuracy(noisy_softmax(Eigen::MatrixXd::Zero(64, 64), 1e-3, s), h);
  CHECK(total / 100.0 <= 5.0 / 64.0);

  const ConvMatrix box = make_conv_matrix(make_box_kernel(3), grid);
  CHECK_THROWS_AS(peak_accuracy(h.data, box), ContractError);
  CHECK_THROWS_AS(peak_accuracy(Eigen::MatrixXd::Zero(10, 10), h), ConfigError);
}

TEST_CASE("property: peak accuracy only sees the argmax") {
  const GridShape grid(6, 6);
  const ConvMatrix h = make_conv_matrix(make_impulse_kernel(3, {1, 0}), grid);
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd logits = 2.0 * h.data + standard_normal(36, 36, rng);
    const double base = peak_accuracy(row_softmax(logits), h);
    CHECK(peak_accuracy(logits, h) == base);
    CHECK(peak_accuracy(row_softmax(3.0 * logits.array().cube().matrix()), h) == base);
    CHECK(peak_accuracy(logits.array().exp().matrix(), h) == base);
  }
}

TEST_CASE("offset detection") {
  CHECK(detect_offset(Eigen::MatrixXd::Identity(64, 64), GridShape(8, 8)) == ImpulseOffset{0, 0});
  const auto shift = make_conv_matrix(make_impulse_kernel(3, {0, 1}), GridShape(3, 3), PaddingMode::circular);
  CHECK(detect_offset(shift.data, GridShape(3, 3)) == ImpulseOffset{0, 1});
  CHECK(detect_offset(Eigen::MatrixXd::Constant(64, 64, 1.0 / 64), GridShape(8, 8)) == ImpulseOffset{0, 0});

  SUBCASE("ties prefer the smaller displacement, then row-major order") {
    const GridShape grid(3, 3);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(9, 9);
    m(grid.index(0, 0), grid.index(0, 1)) = 1.0;  // (0, 1)
    m(grid.index(0, 0), grid.index(1, 0)) = 1.0;  // (1, 0)
    m(grid.index(1, 1), grid.index(1, 0)) = 1.0;  // (0, -1)
    CHECK(detect_offset(m, grid) == ImpulseOffset{0, -1});
    m(grid.index(1, 1), grid.index(1, 0)) = 0.0;
    CHECK(detect_offset(m, grid) == ImpulseOffset{0, 1});
    m(grid.index(0, 0), grid.index(0, 1)) = 0.0;
    m(grid.index(0, 0), grid.index(1, 1)) = 1.0;  // (1, 1), farther than (1, 0)
    CHECK(detect_offset(m, grid) == ImpulseOffset{1, 0});
  }

  SUBCASE("(-1, 0) is the -8 flattened diagonal on an 8x8 grid") {
    const GridShape grid(8, 8);
    const ImpulseOffset up{-1, 0};
    CHECK(up.flat(grid) == -8);
    const ConvMatrix h = make_conv_matrix(make_impulse_kernel(3, up), grid);
    for (int i = 8; i < 64; ++i) CHECK(h.data(i, i - 8) == 1.0);
  }
}

TEST_CASE("property: planted offsets are detected under noise") {
  const GridShape grid(8, 8);
  const double noise = 1.0;
  for (const auto& o : all_offsets(3)) {
    const ConvMatrix h = make_conv_matrix(make_impulse_kernel(3, o), grid);
    for (double c : {40.0, 80.0, 400.0}) {
      for (Seed s = 0; s < 3; ++s)
        CHECK(detect_offset(noisy_softmax(c * noise * h.data, noise, s), grid) == o);
    }
  }
}

TEST_CASE("row entropy") {
  CHECK(row_entropy(Eigen::MatrixXd::Constant(64, 64, 1.0 / 64)) == doctest::Approx(std::log(64.0)).epsilon(1e-12));
  const ConvMatrix perm = make_conv_matrix(make_impulse_kernel(3, {1, 1}), GridShape(5, 5), PaddingMode::circular);
  CHECK(row_entropy(perm.data) == 0.0);
  CHECK(row_entropy(noisy_softmax(50.0 * perm.data, 0.1, 2)) <= 1e-10);
  CHECK_THROWS_AS(row_entropy(Eigen::MatrixXd::Constant(4, 4, 0.3)), ContractError);
  Eigen::MatrixXd negative = Eigen::MatrixXd::Identity(3, 3);
  negative(0, 0) = 1.5;
  negative(0, 1) = -0.5;
  CHECK_THROWS_AS(row_entropy(negative), ContractError);

  Rng rng(4);
  const Eigen::MatrixXd p = row_softmax(standard_normal(10, 12, rng));
  double sum = 0.0;
  for (int i = 0; i < 10; ++i) sum += oracle::entropy(p.row(i));
  CHECK(row_entropy(p) == doctest::Approx(sum / 10).epsilon(1e-13));
}

TEST_CASE("property: sharpening logits lowers entropy") {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const Eigen::MatrixXd logits = standard_normal(1, 16, rng);
    double previous = row_entropy(row_softmax(logits));
    for (double c : {1.5, 2.0, 4.0, 8.0}) {
      const double h = row_entropy(row_softmax(c * logits));
      CHECK(h < previous);
      previous = h;
    }
  }
}

TEST_CASE("map error") {
  const GridShape grid(8, 8);
  const ConvMatrix h = make_conv_matrix(make_impulse_kernel(3, {0, -1}), grid);
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(64, 64, 1.0 / 64);
  for (int i : h.interior_rows()) m.row(i) = h.data.row(i);
  CHECK(map_error(m, h) == 0.0);

  const double n = 64.0;
  const double closed = std::sqrt(std::pow(1 - 1 / n, 2) + (n - 1) / (n * n));
  CHECK(map_error(Eigen::MatrixXd::Constant(64, 64, 1 / n), h) == doctest::Approx(closed).epsilon(1e-13));
}

TEST_CASE("ViT-Tiny configuration: structure of the three initializations") {
  std::vector<double> entropy(3, 0.0);
  int impulse_wins = 0, heads = 0;
  for (Seed seed = 0; seed < 10; ++seed) {
    ModelConfig c;
    c.seed = seed;
    c.layers = seed < 3 ? 12 : 2;
    const ModelInit impulse = init_vit(c);
    const ModelInit dflt = init_default(c);
    const ModelInit mimetic = init_mimetic(c);
    for (std::size_t i = 0; i < impulse.attention.size(); ++i) {
      const auto& a = impulse.attention[i];
      const ConvMatrix h = make_conv_matrix(make_impulse_kernel(3, *a.target_offset), c.grid);
      const Eigen::MatrixXd mi = head_attention(impulse, a);
      const Eigen::MatrixXd md = head_attention(dflt, dflt.attention[i]);
      const Eigen::MatrixXd mm = head_attention(mimetic, mimetic.attention[i]);
      ++heads;
      if (map_error(mi, h) < map_error(md, h)) ++impulse_wins;
      if (seed < 3) {
        entropy[0] += row_entropy(md);
        entropy[1] += row_entropy(mm);
        entropy[2] += row_entropy(mi);
      }
    }
  }
  CHECK(impulse_wins == heads);
  CHECK(entropy[0] > entropy[1]);
  CHECK(entropy[1] > entropy[2]);
}

TEST_CASE("assess_head and the CSV report") {
  ModelConfig c;
  c.layers = 1;
  const ModelInit init = init_vit(c);
  const FidelityReport r = assess_head(init, init.attention[0]);
  CHECK(r.detected_offset == *init.attention[0].target_offset);
  CHECK(r.detected_flat == r.detected_offset.flat(c.grid));
  CHECK(*r.peak_recovery >= 0.9);
  CHECK(r.mean_row_entropy <= std::log(64.0));

  const ModelInit dflt = init_default(c);
  const FidelityReport d = assess_head(dflt, dflt.attention[1]);
  CHECK_FALSE(d.peak_recovery);

  std::ostringstream csv;
  write_fidelity_csv(csv, {r, d});
  std::istringstream lines(csv.str());
  std::string header, first, second;
  std::getline(lines, header);
  std::getline(lines, first);
  std::getline(lines, second);
  CHECK(header ==
        "layer,head,method,target_dr,target_dc,detected_dr,detected_dc,peak_recovery,"
        "mean_row_entropy,frobenius_error,detected_flat,normalized_entropy");
  CHECK(first.rfind("0,0,impulse,", 0) == 0);
  CHECK(second.rfind("0,1,default,,,0,0,,", 0) == 0);
}
