#include "commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "structattn/errors.hpp"
#include "structattn/fidelity.hpp"
#include "structattn/spanned_set.hpp"

namespace structattn::cli {

namespace {

int report(std::ostream& err, int code, const std::string& what) {
  err << "error: " << what << '\n';
  return code;
}

// Maps library errors onto the exit-code contract.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    return report(err, kConfigError, e.what());
  } catch (const BoundsError& e) {
    return report(err, kConfigError, e.what());
  } catch (const InfeasibleError& e) {
    return report(err, kConfigError, e.what());
  } catch (const IoError& e) {
    return report(err, kIoError, e.what());
  } catch (const FormatError& e) {
    return report(err, kFormatError, e.what());
  } catch (const CorruptionError& e) {
    return report(err, kFormatError, e.what());
  } catch (const ValidationError& e) {
    return report(err, kFormatError, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return report(err, kIoError, e.what());
  } catch (const Error& e) {
    return report(err, kVerificationFailed, e.what());
  }
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

Seed env_seed() {
  if (const char* s = std::getenv("STRUCTATTN_SEED")) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw ConfigError(std::string("STRUCTATTN_SEED is not an unsigned integer: ") + s);
    }
  }
  return 0;
}

template <typename T>
bool contains(const std::vector<T>& v, const T& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

std::string to_string(BankKind kind) {
  switch (kind) {
    case BankKind::random: return "random";
    case BankKind::impulse: return "impulse";
    case BankKind::box: return "box";
  }
  return "random";
}

BankKind parse_bank_kind(const std::string& text) {
  if (text == "random") return BankKind::random;
  if (text == "impulse") return BankKind::impulse;
  if (text == "box") return BankKind::box;
  throw ConfigError("unknown bank kind '" + text + "'");
}

int cmd_init(const RunConfig& config, const std::filesystem::path& out_path, std::ostream& out,
             std::ostream& err) {
  return guarded(err, [&] {
    for (const auto& w : config.model.validate()) err << "warning: " << w << '\n';
    const ModelInit init = initialize(config.model, config.method);
    write_container(init, out_path, config.dtype);
    out << "method " << to_string(config.method) << ", " << init.attention.size()
        << " heads, " << 1 + 2 * init.attention.size() << " tensors -> " << out_path.string()
        << '\n';
    out << std::fixed << std::setprecision(6);
    for (const auto& a : init.attention) {
      out << "layer " << a.layer << " head " << a.head;
      if (a.target_offset)
        out << " target (" << a.target_offset->dr << "," << a.target_offset->dc << ")";
      out << " |Q|_F=" << a.q.norm() << " |K|_F=" << a.k.norm() << '\n';
    }
    return static_cast<int>(kOk);
  });
}

int cmd_inspect(const InspectOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ModelInit init = read_container(options.container);
    std::filesystem::create_directories(options.out_dir);
    std::vector<FidelityReport> reports;
    for (const auto& a : init.attention) {
      if (!options.layers.empty() && !contains(options.layers, a.layer)) continue;
      if (!options.heads.empty() && !contains(options.heads, a.head)) continue;
      const Eigen::MatrixXd map = head_attention(init, a);
      const std::string stem = "layer" + std::to_string(a.layer) + "_head" + std::to_string(a.head);
      std::optional<ZoomSpec> zoom;
      if (options.zoom > 0) zoom = ZoomSpec{0, 0, options.zoom, options.out_dir / (stem + "_zoom.pgm")};
      render_attention_pgm(map, options.out_dir / (stem + ".pgm"), zoom);
      reports.push_back(assess_head(init, a, map));
    }
    const auto csv_path = options.out_dir / "fidelity.csv";
    auto csv = open_output(csv_path);
    write_fidelity_csv(csv, reports);
    if (!csv) throw IoError("write failed for " + csv_path.string());
    out << reports.size() << " heads inspected -> " << csv_path.string() << '\n';
    return static_cast<int>(kOk);
  });
}

Prop1Cell run_prop1_cell(int dim, int rank, int f, BankKind bank, Seed seed,
                         const GridShape& grid, PaddingMode padding) {
  const int n = grid.tokens();
  const EmbeddingMatrix x = sample_low_rank(n, dim, rank, derive_seed(seed, {0}));
  const FilterBank target = make_random_bank(dim, f, grid, derive_seed(seed, {1}), padding);
  Rng w_rng(derive_seed(seed, {2}));
  const ChannelMixWeights target_w = standard_normal(dim, dim, w_rng);

  FilterBank fixed = [&] {
    switch (bank) {
      case BankKind::random: return make_random_bank(dim, f, grid, derive_seed(seed, {3}), padding);
      case BankKind::impulse:
        return make_impulse_bank(dim, f, grid, derive_seed(seed, {4}), BankStrategy::coverage_first,
                                 padding);
      case BankKind::box: break;
    }
    return make_box_bank(dim, f, grid, padding);
  }();

  Prop1Cell cell{dim, rank, f, bank, seed, prop1_oracle(x, fixed, target, target_w).rel_residual, ""};
  if (bank == BankKind::box)
    cell.verdict = cell.rel_residual > kBoxResidualMin ? "true" : "false";
  else if (dim >= rank * f * f)
    cell.verdict = cell.rel_residual <= kSpanningResidualMax ? "true" : "false";
  return cell;
}

std::vector<Prop1Cell> run_prop1_sweep(const Prop1Sweep& sweep) {
  std::vector<Prop1Cell> cells;
  for (int d : sweep.dims)
    for (int k : sweep.ranks)
      for (int f : sweep.filters)
        for (BankKind b : sweep.banks)
          for (Seed s : sweep.seeds)
            cells.push_back(run_prop1_cell(d, k, f, b, s, sweep.grid, sweep.padding));
  return cells;
}

int cmd_verify_prop1(const Prop1Sweep& sweep, const std::filesystem::path& out_csv,
                     std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (sweep.dims.empty() || sweep.ranks.empty() || sweep.filters.empty() ||
        sweep.banks.empty() || sweep.seeds.empty())
      throw ConfigError("verify-prop1 needs non-empty dims, ranks, filters, banks and seeds");
    const auto cells = run_prop1_sweep(sweep);
    std::ofstream file;
    if (!out_csv.empty()) file = open_output(out_csv);
    std::ostream& csv = out_csv.empty() ? out : file;
    csv << "D,k,f,bank_kind,seed,rel_residual,satisfied\n" << std::setprecision(6);
    int failures = 0;
    for (const auto& c : cells) {
      csv << c.dim << ',' << c.rank << ',' << c.f << ',' << to_string(c.bank) << ',' << c.seed
          << ',' << std::scientific << c.rel_residual << std::defaultfloat << ','
          << (c.verdict.empty() ? "na" : c.verdict) << '\n';
      if (c.verdict == "false") ++failures;
    }
    if (!out_csv.empty()) {
      if (!file) throw IoError("write failed for " + out_csv.string());
      out << cells.size() << " cells, " << failures << " failed -> " << out_csv.string() << '\n';
    }
    if (failures > 0) {
      err << "verification failed: " << failures << " cell(s) contradict the expected residual\n";
      return static_cast<int>(kVerificationFailed);
    }
    return static_cast<int>(kOk);
  });
}

int cmd_verify_span(const SpanCheck& check, const std::filesystem::path& out_csv,
                    std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (check.seeds.empty()) throw ConfigError("verify-span needs at least one seed");
    check_odd_size(check.f);
    const int full = check.f * check.f;
    const int m = check.span_dim == 0 ? full : check.span_dim;
    const GridShape grid(std::max(check.f, 1), std::max(check.f, 1));

    std::ofstream file;
    if (!out_csv.empty()) file = open_output(out_csv);
    std::ostream& csv = out_csv.empty() ? out : file;
    csv << "D,k,f,bank_kind,seed,M,subset_ranks,common_dim,satisfied,expected\n";
    int mismatches = 0;
    for (Seed seed : check.seeds) {
      FilterBank bank = [&] {
        switch (check.bank) {
          case BankKind::random: return make_random_bank(check.dim, check.f, grid, seed);
          case BankKind::impulse:
            return make_impulse_bank(check.dim, check.f, grid, seed, BankStrategy::coverage_first);
          case BankKind::box: break;
        }
        return make_box_bank(check.dim, check.f, grid);
      }();
      const SpanReport r = check_spanned(bank, m, check.rank);
      std::string expected;
      if (check.bank == BankKind::box)
        expected = m <= 1 ? "true" : "false";
      else if (check.dim >= check.rank * full)
        expected = "true";
      else if (m == full)
        expected = "false";  // some group must have fewer than f^2 filters
      std::string ranks;
      for (int v : r.subset_ranks) ranks += (ranks.empty() ? "" : ";") + std::to_string(v);
      const std::string got = r.satisfied ? "true" : "false";
      csv << check.dim << ',' << check.rank << ',' << check.f << ',' << to_string(check.bank)
          << ',' << seed << ',' << m << ',' << ranks << ',' << r.common_dim << ',' << got << ','
          << (expected.empty() ? "na" : expected) << '\n';
      if (!expected.empty() && expected != got) ++mismatches;
    }
    if (!out_csv.empty() && !file) throw IoError("write failed for " + out_csv.string());
    if (mismatches > 0) {
      err << "verification failed: " << mismatches << " seed(s) disagree with the expected span\n";
      return static_cast<int>(kVerificationFailed);
    }
    return static_cast<int>(kOk);
  });
}

namespace {

void add_model_flags(CLI::App& cmd, ModelConfig& m, std::vector<int>& grid, std::string& padding,
                     std::string& scale_mode) {
  cmd.add_option("--grid", grid, "token grid rows and cols")->expected(2);
  cmd.add_option("--dim", m.dim, "embedding dimension D");
  cmd.add_option("--heads", m.heads, "attention heads per layer");
  cmd.add_option("--layers", m.layers, "transformer layers");
  cmd.add_option("--dhead", m.d_head, "per-head dimension");
  cmd.add_option("--filter", m.f, "impulse kernel size (odd)");
  cmd.add_option("--alpha", m.alpha, "impulse weight in the target map");
  cmd.add_option("--beta", m.beta, "noise weight in the target map");
  cmd.add_option("--gamma", m.gamma, "Frobenius norm of Q and K");
  cmd.add_option("--padding", padding, "zero | circular");
  cmd.add_option("--scale-mode", scale_mode, "inv_sqrt_d | paper_exact");
  cmd.add_option("--seed", m.seed, "master seed (default $STRUCTATTN_SEED or 0)");
  cmd.add_option("--pos-std", m.pos_std, "positional encoding std");
  cmd.add_option("--mu", m.mimetic_mu, "mimetic diagonal strength");
}

GridShape grid_from(const std::vector<int>& g) { return GridShape(g.at(0), g.at(1)); }

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Seed default_seed = 0;
  try {
    default_seed = env_seed();
  } catch (const ConfigError& e) {
    return report(err, kConfigError, e.what());
  }

  CLI::App app{"Structured impulse initialization for attention weights"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value file; command-line flags take precedence");

  RunConfig init_cfg;
  init_cfg.model.seed = default_seed;
  std::vector<int> init_grid{8, 8};
  std::string padding = "zero";
  std::string scale_mode = "inv_sqrt_d";
  std::string method = "impulse";
  std::string offsets = "coverage_first";
  std::string dtype = "f32";
  std::string init_out;
  auto* init = app.add_subcommand("init", "initialize Q/K for every head and write a SAIW file");
  add_model_flags(*init, init_cfg.model, init_grid, padding, scale_mode);
  init->add_option("--method", method, "impulse | default | mimetic");
  init->add_option("--offsets", offsets, "coverage_first | uniform head offsets");
  init->add_option("--dtype", dtype, "f32 | f64 payload");
  init->add_option("--out", init_out, "output container")->required();

  InspectOptions inspect_opts;
  std::string inspect_in;
  std::string inspect_out = ".";
  auto* inspect = app.add_subcommand("inspect", "render attention maps and fidelity metrics");
  inspect->add_option("container", inspect_in, "SAIW file")->required();
  inspect->add_option("--out", inspect_out, "output directory");
  inspect->add_option("--layer", inspect_opts.layers, "layers to inspect (default all)");
  inspect->add_option("--head", inspect_opts.heads, "heads to inspect (default all)");
  inspect->add_option("--zoom", inspect_opts.zoom, "zoom crop size, 0 disables");

  Prop1Sweep sweep;
  sweep.seeds = {default_seed};
  std::vector<int> sweep_grid{8, 8};
  std::vector<std::string> bank_names{"random", "impulse", "box"};
  std::string sweep_padding = "zero";
  std::string sweep_out;
  auto* prop1 = app.add_subcommand("verify-prop1", "least-squares channel-mix oracle sweep");
  prop1->add_option("--dims", sweep.dims, "channel counts D")->required();
  prop1->add_option("--ranks", sweep.ranks, "input ranks k")->required();
  prop1->add_option("--filter", sweep.filters, "kernel sizes f");
  prop1->add_option("--banks", bank_names, "random | impulse | box");
  prop1->add_option("--seeds", sweep.seeds, "seed list");
  prop1->add_option("--grid", sweep_grid, "token grid rows and cols")->expected(2);
  prop1->add_option("--padding", sweep_padding, "zero | circular");
  prop1->add_option("--out", sweep_out, "CSV path (default stdout)");

  SpanCheck span;
  span.seeds = {default_seed};
  std::string span_bank = "random";
  std::string span_out;
  auto* vspan = app.add_subcommand("verify-span", "spanned-set check of a filter bank");
  vspan->add_option("--bank", span_bank, "random | impulse | box");
  vspan->add_option("--dim", span.dim, "number of filters D");
  vspan->add_option("--filter", span.f, "kernel size f");
  vspan->add_option("--ranks", span.rank, "number of groups k");
  vspan->add_option("--span-dim", span.span_dim, "common subspace dimension M (default f^2)");
  vspan->add_option("--seeds", span.seeds, "seed list");
  vspan->add_option("--out", span_out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return report(err, e.get_name() == "FileError" ? kIoError : kConfigError, e.what());
  }

  if (*init) {
    try {
      init_cfg.model.grid = grid_from(init_grid);
      init_cfg.model.padding = parse_padding(padding);
      init_cfg.model.scale_mode = parse_scale_mode(scale_mode);
      init_cfg.method = parse_init_method(method);
      if (offsets == "coverage_first")
        init_cfg.model.head_offsets = BankStrategy::coverage_first;
      else if (offsets == "uniform")
        init_cfg.model.head_offsets = BankStrategy::uniform;
      else
        throw ConfigError("unknown offset strategy '" + offsets + "'");
      if (dtype == "f32")
        init_cfg.dtype = TensorDtype::f32;
      else if (dtype == "f64")
        init_cfg.dtype = TensorDtype::f64;
      else
        throw ConfigError("unknown dtype '" + dtype + "'");
    } catch (const ConfigError& e) {
      return report(err, kConfigError, e.what());
    }
    return cmd_init(init_cfg, init_out, out, err);
  }
  if (*inspect) {
    inspect_opts.container = inspect_in;
    inspect_opts.out_dir = inspect_out;
    return cmd_inspect(inspect_opts, out, err);
  }
  if (*prop1) {
    try {
      sweep.grid = grid_from(sweep_grid);
      sweep.padding = parse_padding(sweep_padding);
      sweep.banks.clear();
      for (const auto& b : bank_names) sweep.banks.push_back(parse_bank_kind(b));
    } catch (const ConfigError& e) {
      return report(err, kConfigError, e.what());
    }
    return cmd_verify_prop1(sweep, sweep_out, out, err);
  }
  try {
    span.bank = parse_bank_kind(span_bank);
  } catch (const ConfigError& e) {
    return report(err, kConfigError, e.what());
  }
  return cmd_verify_span(span, span_out, out, err);
}

}  // namespace structattn::cli
