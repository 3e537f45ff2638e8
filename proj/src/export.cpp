#include "structattn/export.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "structattn/errors.hpp"

namespace structattn {

namespace {

using nlohmann::json;

std::size_t align_up(std::size_t v, std::size_t a) { return (v + a - 1) / a * a; }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_le(const std::string& bytes, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

std::size_t dtype_size(TensorDtype dtype) { return dtype == TensorDtype::f32 ? 4 : 8; }
const char* dtype_name(TensorDtype dtype) { return dtype == TensorDtype::f32 ? "f32" : "f64"; }

void put_tensor(std::string& out, const Eigen::MatrixXd& m, TensorDtype dtype) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (dtype == TensorDtype::f32)
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
      else
        put_u64(out, std::bit_cast<std::uint64_t>(m(r, c)));
    }
  }
}

Eigen::MatrixXd get_tensor(const std::string& bytes, std::size_t at, Eigen::Index rows,
                           Eigen::Index cols, TensorDtype dtype) {
  Eigen::MatrixXd m(rows, cols);
  const std::size_t step = dtype_size(dtype);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c, at += step) {
      if (dtype == TensorDtype::f32)
        m(r, c) = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, at, 4)));
      else
        m(r, c) = std::bit_cast<double>(get_le(bytes, at, 8));
    }
  }
  return m;
}

std::string strategy_name(BankStrategy s) {
  return s == BankStrategy::coverage_first ? "coverage_first" : "uniform";
}

BankStrategy parse_strategy(const std::string& s) {
  if (s == "coverage_first") return BankStrategy::coverage_first;
  if (s == "uniform") return BankStrategy::uniform;
  throw FormatError("unknown head offset strategy '" + s + "'");
}

json config_to_json(const ModelConfig& c) {
  return json{{"grid", {c.grid.rows(), c.grid.cols()}},
              {"dim", c.dim},
              {"heads", c.heads},
              {"layers", c.layers},
              {"f", c.f},
              {"d_head", c.d_head},
              {"padding", to_string(c.padding)},
              {"scale_mode", to_string(c.scale_mode)},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"gamma", c.gamma},
              {"pos_std", c.pos_std},
              {"layer_norm_eps", c.layer_norm_eps},
              {"mimetic_mu", c.mimetic_mu},
              {"mimetic_noise", c.mimetic_noise},
              {"head_offsets", strategy_name(c.head_offsets)},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  const auto& grid = j.at("grid");
  c.grid = GridShape(grid.at(0).get<int>(), grid.at(1).get<int>());
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.f = j.at("f").get<int>();
  c.d_head = j.at("d_head").get<int>();
  c.padding = parse_padding(j.at("padding").get<std::string>());
  c.scale_mode = parse_scale_mode(j.at("scale_mode").get<std::string>());
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.pos_std = j.at("pos_std").get<double>();
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  c.mimetic_mu = j.at("mimetic_mu").get<double>();
  c.mimetic_noise = j.at("mimetic_noise").get<double>();
  c.head_offsets = parse_strategy(j.at("head_offsets").get<std::string>());
  c.seed = j.at("seed").get<Seed>();
  return c;
}

struct TensorEntry {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  TensorDtype dtype = TensorDtype::f32;
  std::size_t offset = 0;
  std::size_t length = 0;
};

}  // namespace

std::string tensor_name(int layer, int head, char which) {
  return "layer" + std::to_string(layer) + ".head" + std::to_string(head) + "." + which;
}

std::string encode_container(const ModelInit& init, TensorDtype dtype) {
  const std::size_t expected = static_cast<std::size_t>(init.config.layers * init.config.heads);
  if (init.attention.size() != expected)
    throw ConfigError("model has " + std::to_string(init.attention.size()) +
                      " attention entries, config implies " + std::to_string(expected));

  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> tensors;
  tensors.emplace_back(kPosEmbedName, &init.pos.data);
  json heads = json::array();
  for (const auto& a : init.attention) {
    tensors.emplace_back(tensor_name(a.layer, a.head, 'q'), &a.q);
    tensors.emplace_back(tensor_name(a.layer, a.head, 'k'), &a.k);
    json target = nullptr;
    if (a.target_offset) target = json::array({a.target_offset->dr, a.target_offset->dc});
    heads.push_back({{"layer", a.layer}, {"head", a.head}, {"target", target}});
  }

  json table = json::object();
  std::size_t cursor = 0;
  for (const auto& [name, m] : tensors) {
    if (table.contains(name)) throw ConfigError("duplicate tensor name " + name);
    const std::size_t len = static_cast<std::size_t>(m->size()) * dtype_size(dtype);
    table[name] = {{"dtype", dtype_name(dtype)},
                   {"shape", {m->rows(), m->cols()}},
                   {"byte_offset", cursor},
                   {"byte_len", len}};
    cursor = align_up(cursor + len, saiw::kAlignment);
  }

  const json header = {{"format", "SAIW"},
                       {"library_version", kLibraryVersion},
                       {"metadata",
                        {{"config", config_to_json(init.config)},
                         {"method", to_string(init.method)},
                         {"seed", init.config.seed},
                         {"pos_std", init.pos.std},
                         {"pos_seed", init.pos.seed},
                         {"heads", heads}}},
                       {"tensors", table}};
  std::string text = header.dump();
  text.resize(align_up(saiw::kFixedPrefix + text.size(), saiw::kAlignment) - saiw::kFixedPrefix,
              ' ');

  std::string out;
  out.append(saiw::kMagic, 4);
  put_u32(out, saiw::kVersion);
  put_u64(out, text.size());
  out += text;
  const std::size_t payload_start = out.size();
  for (const auto& [name, m] : tensors) {
    out.resize(payload_start + table[name]["byte_offset"].get<std::size_t>(), '\0');
    put_tensor(out, *m, dtype);
  }
  return out;
}

ModelInit decode_container(const std::string& bytes) {
  if (bytes.size() < saiw::kFixedPrefix) throw FormatError("file shorter than the SAIW prefix");
  if (std::memcmp(bytes.data(), saiw::kMagic, 4) != 0) throw FormatError("bad magic, not SAIW");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != saiw::kVersion)
    throw FormatError("unsupported SAIW version " + std::to_string(version));
  const std::uint64_t header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - saiw::kFixedPrefix)
    throw CorruptionError("header length exceeds file size");

  json header;
  try {
    header = json::parse(bytes.begin() + saiw::kFixedPrefix,
                         bytes.begin() + static_cast<std::ptrdiff_t>(saiw::kFixedPrefix + header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what());
  }
  const std::size_t payload_start = saiw::kFixedPrefix + header_len;

  ModelInit init;
  std::vector<TensorEntry> entries;
  try {
    const auto& meta = header.at("metadata");
    init.config = config_from_json(meta.at("config"));
    init.method = parse_init_method(meta.at("method").get<std::string>());
    init.pos.std = meta.at("pos_std").get<double>();
    init.pos.seed = meta.at("pos_seed").get<Seed>();

    const auto& table = header.at("tensors");
    for (auto it = table.begin(); it != table.end(); ++it) {
      TensorEntry e;
      e.name = it.key();
      const auto& t = it.value();
      const auto dtype = t.at("dtype").get<std::string>();
      if (dtype == "f32")
        e.dtype = TensorDtype::f32;
      else if (dtype == "f64")
        e.dtype = TensorDtype::f64;
      else
        throw FormatError("tensor " + e.name + " has unsupported dtype " + dtype);
      const auto& shape = t.at("shape");
      if (!shape.is_array() || shape.size() != 2)
        throw FormatError("tensor " + e.name + " must be two-dimensional");
      e.rows = shape.at(0).get<Eigen::Index>();
      e.cols = shape.at(1).get<Eigen::Index>();
      if (e.rows < 0 || e.cols < 0) throw FormatError("tensor " + e.name + " has negative shape");
      e.offset = t.at("byte_offset").get<std::size_t>();
      e.length = t.at("byte_len").get<std::size_t>();
      if (e.length != static_cast<std::size_t>(e.rows * e.cols) * dtype_size(e.dtype))
        throw FormatError("tensor " + e.name + " byte_len disagrees with its shape");
      entries.push_back(std::move(e));
    }

    const auto& heads = meta.at("heads");
    for (const auto& h : heads) {
      AttentionInit a;
      a.layer = h.at("layer").get<int>();
      a.head = h.at("head").get<int>();
      const auto& target = h.at("target");
      if (!target.is_null())
        a.target_offset = ImpulseOffset{target.at(0).get<int>(), target.at(1).get<int>()};
      init.attention.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed SAIW header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("malformed SAIW metadata: ") + e.what());
  }

  const ModelConfig& cfg = init.config;
  if (init.attention.size() != static_cast<std::size_t>(cfg.layers * cfg.heads))
    throw FormatError("head table does not match layers * heads");
  if (entries.size() != 1 + 2 * init.attention.size())
    throw FormatError("container holds " + std::to_string(entries.size()) +
                      " tensors, config implies " +
                      std::to_string(1 + 2 * init.attention.size()));

  std::sort(entries.begin(), entries.end(),
            [](const TensorEntry& a, const TensorEntry& b) { return a.offset < b.offset; });
  std::size_t prev_end = 0;
  for (const auto& e : entries) {
    if (e.offset % saiw::kAlignment != 0)
      throw CorruptionError("tensor " + e.name + " is not 64-byte aligned");
    if (e.offset < prev_end) throw CorruptionError("tensor " + e.name + " overlaps its neighbour");
    prev_end = e.offset + e.length;
    if (payload_start + prev_end > bytes.size())
      throw CorruptionError("payload truncated inside tensor " + e.name);
  }

  auto find = [&](const std::string& name) -> const TensorEntry& {
    for (const auto& e : entries)
      if (e.name == name) return e;
    throw FormatError("missing tensor " + name);
  };
  auto load = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    const TensorEntry& e = find(name);
    if (e.rows != rows || e.cols != cols)
      throw FormatError("tensor " + name + " has shape " + std::to_string(e.rows) + "x" +
                        std::to_string(e.cols) + ", expected " + std::to_string(rows) + "x" +
                        std::to_string(cols));
    return get_tensor(bytes, payload_start + e.offset, rows, cols, e.dtype);
  };

  init.pos.data = load(kPosEmbedName, cfg.tokens(), cfg.dim);
  std::vector<std::string> violations;
  for (auto& a : init.attention) {
    a.q = load(tensor_name(a.layer, a.head, 'q'), cfg.dim, cfg.d_head);
    a.k = load(tensor_name(a.layer, a.head, 'k'), cfg.dim, cfg.d_head);
  }
  if (init.method == InitMethod::impulse) {
    const bool narrow = find(kPosEmbedName).dtype == TensorDtype::f32;
    const double tol = (narrow ? 1e-5 : 1e-6) * std::max(1.0, cfg.gamma);
    for (const auto& a : init.attention) {
      if (std::abs(a.q.norm() - cfg.gamma) > tol) violations.push_back(tensor_name(a.layer, a.head, 'q'));
      if (std::abs(a.k.norm() - cfg.gamma) > tol) violations.push_back(tensor_name(a.layer, a.head, 'k'));
    }
  }
  if (!violations.empty()) {
    std::string list;
    for (const auto& v : violations) list += (list.empty() ? "" : ", ") + v;
    throw ValidationError("Frobenius norm differs from gamma in: " + list, violations);
  }
  return init;
}

void write_container(const ModelInit& init, const std::filesystem::path& path,
                     TensorDtype dtype) {
  const std::string bytes = encode_container(init, dtype);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

ModelInit read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return decode_container(bytes);
}

namespace {

void write_pgm(const Eigen::MatrixXd& m, double peak, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
  std::string pixels;
  pixels.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = peak > 0.0 ? std::round(255.0 * m(r, c) / peak) : 0.0;
      pixels.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0, 255.0))));
    }
  }
  out.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void render_attention_pgm(const Eigen::MatrixXd& attention, const std::filesystem::path& path,
                          const std::optional<ZoomSpec>& zoom) {
  if (attention.size() == 0) throw ContractError("empty attention map");
  if (!attention.allFinite() || attention.minCoeff() < 0.0)
    throw ContractError("attention map entries must be finite and non-negative");
  const double peak = attention.maxCoeff();
  write_pgm(attention, peak, path);
  if (zoom) {
    const Eigen::Index rows = std::min<Eigen::Index>(zoom->size, attention.rows() - zoom->row);
    const Eigen::Index cols = std::min<Eigen::Index>(zoom->size, attention.cols() - zoom->col);
    if (zoom->row < 0 || zoom->col < 0 || rows <= 0 || cols <= 0)
      throw ConfigError("zoom block lies outside the attention map");
    write_pgm(attention.block(zoom->row, zoom->col, rows, cols), peak, zoom->path);
  }
}

}  // namespace structattn
