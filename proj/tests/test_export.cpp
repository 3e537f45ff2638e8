#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "structattn/errors.hpp"
#include "structattn/export.hpp"

using namespace structattn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ModelConfig small_config(Seed seed) {
  ModelConfig c;
  c.grid = GridShape(4, 4);
  c.dim = 24;
  c.heads = 2;
  c.layers = 2;
  c.d_head = 12;
  c.seed = seed;
  return c;
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "structattn_test_export";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint64_t le(const std::string& b, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= std::uint64_t(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

json header_of(const std::string& bytes) {
  return json::parse(bytes.substr(16, le(bytes, 8, 8)));
}

// Replaces the header in place, keeping its padded length and the payload.
std::string with_header(const std::string& bytes, const json& header) {
  const std::size_t len = le(bytes, 8, 8);
  std::string text = header.dump();
  REQUIRE(text.size() <= len);
  text.resize(len, ' ');
  std::string out = bytes;
  out.replace(16, len, text);
  return out;
}

void check_same(const ModelInit& a, const ModelInit& b, double tol) {
  CHECK(a.method == b.method);
  CHECK(a.config.grid == b.config.grid);
  CHECK(a.config.dim == b.config.dim);
  CHECK(a.config.heads == b.config.heads);
  CHECK(a.config.layers == b.config.layers);
  CHECK(a.config.d_head == b.config.d_head);
  CHECK(a.config.f == b.config.f);
  CHECK(a.config.padding == b.config.padding);
  CHECK(a.config.scale_mode == b.config.scale_mode);
  CHECK(a.config.alpha == b.config.alpha);
  CHECK(a.config.beta == b.config.beta);
  CHECK(a.config.gamma == b.config.gamma);
  CHECK(a.config.pos_std == b.config.pos_std);
  CHECK(a.config.layer_norm_eps == b.config.layer_norm_eps);
  CHECK(a.config.mimetic_mu == b.config.mimetic_mu);
  CHECK(a.config.head_offsets == b.config.head_offsets);
  CHECK(a.config.seed == b.config.seed);
  CHECK(a.pos.std == b.pos.std);
  CHECK(a.pos.seed == b.pos.seed);
  CHECK((a.pos.data - b.pos.data).cwiseAbs().maxCoeff() <= tol);
  REQUIRE(a.attention.size() == b.attention.size());
  for (std::size_t i = 0; i < a.attention.size(); ++i) {
    const auto& x = a.attention[i];
    const auto& y = b.attention[i];
    CHECK(x.layer == y.layer);
    CHECK(x.head == y.head);
    CHECK(x.target_offset == y.target_offset);
    CHECK((x.q - y.q).cwiseAbs().maxCoeff() <= tol);
    CHECK((x.k - y.k).cwiseAbs().maxCoeff() <= tol);
  }
}

}  // namespace

TEST_CASE("write then read returns the same model") {
  for (auto method : {InitMethod::impulse, InitMethod::default_trunc_normal, InitMethod::mimetic}) {
    const ModelInit init = initialize(small_config(3), method);
    const fs::path p = temp_path("roundtrip.saiw");
    write_container(init, p, TensorDtype::f64);
    check_same(init, read_container(p), 0.0);
    write_container(init, p, TensorDtype::f32);
    check_same(init, read_container(p), 1e-7);
  }
}

TEST_CASE("property: roundtrip across configurations") {
  for (Seed s = 0; s < 6; ++s) {
    ModelConfig c = small_config(s);
    c.grid = GridShape(3 + int(s % 3), 4);
    c.heads = 1 + int(s % 3);
    c.layers = 1 + int(s % 2);
    c.padding = s % 2 ? PaddingMode::circular : PaddingMode::zero;
    c.scale_mode = s % 3 == 0 ? ScaleMode::paper_exact : ScaleMode::inv_sqrt_d;
    const ModelInit init = initialize(c, static_cast<InitMethod>(s % 3));
    check_same(init, decode_container(encode_container(init, TensorDtype::f64)), 0.0);
  }
}

TEST_CASE("byte-exact determinism") {
  const fs::path a = temp_path("a.saiw");
  const fs::path b = temp_path("b.saiw");
  write_container(initialize(small_config(9), InitMethod::impulse), a);
  write_container(initialize(small_config(9), InitMethod::impulse), b);
  CHECK(slurp(a) == slurp(b));
  write_container(initialize(small_config(10), InitMethod::impulse), b);
  CHECK(slurp(a) != slurp(b));
}

TEST_CASE("byte layout") {
  const ModelInit init = initialize(small_config(1), InitMethod::impulse);
  const std::string bytes = encode_container(init);
  CHECK(bytes.substr(0, 4) == "SAIW");
  CHECK(le(bytes, 4, 4) == 1);
  const std::size_t header_len = le(bytes, 8, 8);
  const std::size_t payload = 16 + header_len;
  CHECK(payload % 64 == 0);
  const json h = header_of(bytes);
  CHECK(h.at("format") == "SAIW");
  CHECK(h.at("tensors").size() == 1 + 2 * 4);
  CHECK(h.at("metadata").at("method") == "impulse");

  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (const auto& [name, t] : h.at("tensors").items()) {
    CHECK(t.at("dtype") == "f32");
    const std::size_t off = t.at("byte_offset"), len = t.at("byte_len");
    CHECK(off % 64 == 0);
    CHECK(len == t.at("shape")[0].get<std::size_t>() * t.at("shape")[1].get<std::size_t>() * 4);
    spans.emplace_back(off, len);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) CHECK(spans[i].first >= spans[i - 1].first + spans[i - 1].second);
  CHECK(payload + spans.back().first + spans.back().second == bytes.size());

  // pos_embed is first and stored row-major.
  const auto& pos = h.at("tensors").at("pos_embed");
  CHECK(pos.at("byte_offset") == 0);
  const float first = std::bit_cast<float>(static_cast<std::uint32_t>(le(bytes, payload, 4)));
  const float second = std::bit_cast<float>(static_cast<std::uint32_t>(le(bytes, payload + 4, 4)));
  CHECK(first == static_cast<float>(init.pos.data(0, 0)));
  CHECK(second == static_cast<float>(init.pos.data(0, 1)));
  CHECK(h.at("tensors").contains("layer1.head0.k"));
  CHECK(tensor_name(3, 2, 'q') == "layer3.head2.q");
}

TEST_CASE("ViT-Tiny container holds 73 tensors") {
  ModelConfig c;
  c.seed = 2;
  const std::string bytes = encode_container(init_default(c));
  CHECK(header_of(bytes).at("tensors").size() == 12 * 3 * 2 + 1);
}

TEST_CASE("independently assembled container parses") {
  // Built field by field from the documented layout, without the library writer.
  const ModelConfig c = small_config(4);
  const ModelInit ref = initialize(c, InitMethod::mimetic);
  const std::string lib = encode_container(ref, TensorDtype::f64);
  json header = header_of(lib);
  header["tensors"] = json::object();
  std::string payload;
  auto add = [&](const std::string& name, const Eigen::MatrixXd& m) {
    while (payload.size() % 64) payload.push_back('\0');
    header["tensors"][name] = {{"dtype", "f64"}, {"shape", {m.rows(), m.cols()}},
                               {"byte_offset", payload.size()}, {"byte_len", m.size() * 8}};
    for (long r = 0; r < m.rows(); ++r)
      for (long col = 0; col < m.cols(); ++col) {
        char raw[8];
        std::memcpy(raw, &m(r, col), 8);  // host is little-endian
        payload.append(raw, 8);
      }
  };
  // Reverse order on purpose: readers must go by the table, not position.
  for (auto it = ref.attention.rbegin(); it != ref.attention.rend(); ++it) {
    add(tensor_name(it->layer, it->head, 'k'), it->k);
    add(tensor_name(it->layer, it->head, 'q'), it->q);
  }
  add("pos_embed", ref.pos.data);
  std::string text = header.dump(2);
  text.append((64 - (16 + text.size()) % 64) % 64, '\n');
  std::string bytes = "SAIW";
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>(i == 0 ? 1 : 0));
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xff));
  bytes += text + payload;
  check_same(ref, decode_container(bytes), 0.0);
}

TEST_CASE("malformed containers are rejected with their named error") {
  const std::string good = encode_container(initialize(small_config(5), InitMethod::impulse));
  REQUIRE_NOTHROW(decode_container(good));

  std::string bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_container(bad), FormatError);
  CHECK_THROWS_AS(decode_container(good.substr(0, 10)), FormatError);

  bad = good;
  bad[4] = 2;
  CHECK_THROWS_AS(decode_container(bad), FormatError);

  CHECK_THROWS_AS(decode_container(good.substr(0, good.size() - 1)), CorruptionError);

  bad = good;
  bad[8] = static_cast<char>(0xff);
  bad[9] = static_cast<char>(0xff);
  CHECK_THROWS_AS(decode_container(bad), CorruptionError);

  bad = good;
  bad[16] = '#';
  CHECK_THROWS_AS(decode_container(bad), FormatError);

  json h = header_of(good);
  SUBCASE("overlapping tensors") {
    h["tensors"]["layer0.head0.k"]["byte_offset"] = h["tensors"]["layer0.head0.q"]["byte_offset"];
    CHECK_THROWS_AS(decode_container(with_header(good, h)), CorruptionError);
  }
  SUBCASE("misaligned tensor") {
    h["tensors"]["layer1.head1.k"]["byte_offset"] = h["tensors"]["layer1.head1.k"]["byte_offset"].get<int>() + 4;
    CHECK_THROWS_AS(decode_container(with_header(good, h)), CorruptionError);
  }
  SUBCASE("byte_len disagrees with shape") {
    h["tensors"]["pos_embed"]["byte_len"] = 8;
    CHECK_THROWS_AS(decode_container(with_header(good, h)), FormatError);
  }
  SUBCASE("missing tensor") {
    h["tensors"].erase("layer0.head1.q");
    CHECK_THROWS_AS(decode_container(with_header(good, h)), FormatError);
  }
  SUBCASE("unknown dtype") {
    h["tensors"]["pos_embed"]["dtype"] = "f16";
    CHECK_THROWS_AS(decode_container(with_header(good, h)), FormatError);
  }
  SUBCASE("missing metadata") {
    h.erase("metadata");
    CHECK_THROWS_AS(decode_container(with_header(good, h)), FormatError);
  }
  SUBCASE("gamma norm breach names the tensor") {
    ModelInit broken = initialize(small_config(5), InitMethod::impulse);
    broken.attention[3].k *= 1.1;
    try {
      decode_container(encode_container(broken));
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(e.tensors() == std::vector<std::string>{"layer1.head1.k"});
    }
  }
}

TEST_CASE("I/O failures carry the path") {
  const fs::path missing = temp_path("does_not_exist.saiw");
  fs::remove(missing);
  try {
    read_container(missing);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("does_not_exist.saiw") != std::string::npos);
  }
  CHECK_THROWS_AS(write_container(initialize(small_config(1), InitMethod::mimetic),
                                  temp_path("no_such_dir") / "x" / "y.saiw"),
                  IoError);
}

TEST_CASE("PGM rendering") {
  const fs::path p = temp_path("identity.pgm");
  render_attention_pgm(Eigen::MatrixXd::Identity(64, 64), p,
                       ZoomSpec{0, 0, 16, temp_path("identity_zoom.pgm")});
  const std::string img = slurp(p);
  const std::string head = "P5\n64 64\n255\n";
  REQUIRE(img.size() == head.size() + 64 * 64);
  CHECK(img.substr(0, 3) == "P5\n");
  CHECK(img.substr(0, head.size()) == head);
  int white = 0;
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      const auto v = static_cast<unsigned char>(img[head.size() + r * 64 + c]);
      CHECK(v == (r == c ? 255 : 0));
      white += v == 255;
    }
  CHECK(white == 64);

  const std::string zoom = slurp(temp_path("identity_zoom.pgm"));
  CHECK(zoom.substr(0, 12) == "P5\n16 16\n255");
  CHECK(zoom.size() == std::string("P5\n16 16\n255\n").size() + 256);

  render_attention_pgm(Eigen::MatrixXd::Constant(8, 8, 1.0 / 8), p);
  const std::string flat = slurp(p);
  for (std::size_t i = std::string("P5\n8 8\n255\n").size(); i < flat.size(); ++i)
    CHECK(static_cast<unsigned char>(flat[i]) == 255);

  CHECK_THROWS_AS(render_attention_pgm(-Eigen::MatrixXd::Identity(4, 4), p), ContractError);
}
