#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "structattn/attention_init.hpp"

namespace structattn {

inline constexpr char kLibraryVersion[] = "0.1.0";

/// SAIW weight container, version 1. All integers little-endian.
///
///   offset 0   magic        "SAIW"
///   offset 4   version      u32 (= 1)
///   offset 8   header_len   u64
///   offset 16  header       UTF-8 JSON, right-padded with spaces so the
///                           payload starts on a 64-byte file boundary
///   ...        payload      raw little-endian tensors, row-major
///
/// header = {"format": "SAIW", "library_version": ..., "metadata": {...},
///           "tensors": {name: {"dtype": "f32"|"f64", "shape": [...],
///                              "byte_offset": o, "byte_len": n}}}
/// byte_offset is relative to the payload start and a multiple of 64;
/// tensors are stored pos_embed first, then layer-major q and k per head.
namespace saiw {
inline constexpr char kMagic[4] = {'S', 'A', 'I', 'W'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kFixedPrefix = 16;
inline constexpr std::size_t kAlignment = 64;
}  // namespace saiw

enum class TensorDtype { f32, f64 };

/// "layer{L}.head{H}.q" / ".k".
std::string tensor_name(int layer, int head, char which);
inline constexpr char kPosEmbedName[] = "pos_embed";

std::string encode_container(const ModelInit& init, TensorDtype dtype = TensorDtype::f32);
/// Validates framing, tensor table and payload, then the gamma-norm of
/// every impulse head. Never returns a partially decoded model.
ModelInit decode_container(const std::string& bytes);

/// Byte-identical output for identical inputs.
void write_container(const ModelInit& init, const std::filesystem::path& path,
                     TensorDtype dtype = TensorDtype::f32);
ModelInit read_container(const std::filesystem::path& path);

/// Square crop written next to the full image.
struct ZoomSpec {
  int row = 0;
  int col = 0;
  int size = 16;
  std::filesystem::path path;
};

/// Binary PGM (P5, maxval 255), pixel = round(255 * m / max(m)).
void render_attention_pgm(const Eigen::MatrixXd& attention, const std::filesystem::path& path,
                          const std::optional<ZoomSpec>& zoom = std::nullopt);

}  // namespace structattn
