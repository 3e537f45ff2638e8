#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "structattn/attention_init.hpp"
#include "structattn/export.hpp"

namespace structattn::cli {

/// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kIoError = 3,
  kFormatError = 4,
  kVerificationFailed = 5,
};

struct RunConfig {
  ModelConfig model;
  InitMethod method = InitMethod::impulse;
  TensorDtype dtype = TensorDtype::f32;
};

int cmd_init(const RunConfig& config, const std::filesystem::path& out_path, std::ostream& out,
             std::ostream& err);

struct InspectOptions {
  std::filesystem::path container;
  std::filesystem::path out_dir;
  std::vector<int> layers;  // empty = all
  std::vector<int> heads;   // empty = all
  int zoom = 16;
};

int cmd_inspect(const InspectOptions& options, std::ostream& out, std::ostream& err);

enum class BankKind { random, impulse, box };
std::string to_string(BankKind kind);
BankKind parse_bank_kind(const std::string& text);

struct Prop1Sweep {
  std::vector<int> dims;
  std::vector<int> ranks;
  std::vector<int> filters{3};
  std::vector<BankKind> banks{BankKind::random, BankKind::impulse, BankKind::box};
  std::vector<Seed> seeds{0};
  GridShape grid{8, 8};
  PaddingMode padding = PaddingMode::zero;
};

struct Prop1Cell {
  int dim = 0;
  int rank = 0;
  int f = 0;
  BankKind bank = BankKind::random;
  Seed seed = 0;
  double rel_residual = 0.0;
  /// Empty when the cell lies outside D >= k f^2 for a spanning bank.
  std::string verdict;
};

/// Bound a spanning bank's residual must meet, and the floor a box bank must exceed.
inline constexpr double kSpanningResidualMax = 1e-6;
inline constexpr double kBoxResidualMin = 1e-3;

/// One oracle instance: rank-k embedding, random target bank and weights,
/// fixed bank of the given kind. Deterministic in seed.
Prop1Cell run_prop1_cell(int dim, int rank, int f, BankKind bank, Seed seed,
                         const GridShape& grid, PaddingMode padding);
std::vector<Prop1Cell> run_prop1_sweep(const Prop1Sweep& sweep);

int cmd_verify_prop1(const Prop1Sweep& sweep, const std::filesystem::path& out_csv,
                     std::ostream& out, std::ostream& err);

struct SpanCheck {
  BankKind bank = BankKind::random;
  int dim = 20;
  int f = 3;
  int rank = 2;
  int span_dim = 0;  // 0 = f^2
  std::vector<Seed> seeds{0};
};

int cmd_verify_span(const SpanCheck& check, const std::filesystem::path& out_csv,
                    std::ostream& out, std::ostream& err);

/// Full command line front end (argv[0] is the program name).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace structattn::cli
