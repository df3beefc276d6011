// Copyright 2026 The fvv Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FVV_CODEC_H_
#define FVV_CODEC_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fvv/common.h"
#include "fvv/decoder.h"
#include "fvv/field.h"

namespace fvv {

struct GroupModel;

struct QuantSpec {
  float lo = 0;
  float hi = 1;
  int bits = 12;

  void validate() const;
  std::uint32_t max_code() const { return (1u << bits) - 1; }
  // Half a quantization step: the worst-case round-trip error.
  double half_step() const { return (static_cast<double>(hi) - lo) / (2.0 * max_code()); }
};

inline constexpr QuantSpec kDensityQuant{-5.f, 30.f, 12};
inline constexpr QuantSpec kFeatureQuant{-20.f, 20.f, 12};

std::uint16_t quantize(float v, const QuantSpec& spec);
float dequantize(std::uint16_t q, const QuantSpec& spec);
std::vector<std::uint16_t> quantize(std::span<const float> values, const QuantSpec& spec);
std::vector<float> dequantize(std::span<const std::uint16_t> codes, const QuantSpec& spec);

// Writes code 0 wherever the mask is empty.
std::vector<std::uint16_t> cull_empty(std::span<const std::uint16_t> q_density, const Dims3& dims,
                                      const OccupancyGrid& mask);

struct MosaicLayout {
  int tile_rows = 1;
  int tile_cols = 1;

  int capacity() const { return tile_rows * tile_cols; }
  friend bool operator==(const MosaicLayout&, const MosaicLayout&) = default;
};

// Rows = largest divisor of h not above sqrt(h): 2x5 for h = 10.
MosaicLayout default_layout(int channels);

// Single-channel 16-bit image, row-major.
struct CodeImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;

  friend bool operator==(const CodeImage&, const CodeImage&) = default;
};

// plane is rows x cols x channels, channel-last. Channel k lands in tile
// (k / tile_cols, k % tile_cols); the image is (tile_rows * rows) tall and
// (tile_cols * cols) wide.
CodeImage mosaic(std::span<const std::uint16_t> plane, int rows, int cols, int channels,
                 const MosaicLayout& layout);
std::vector<std::uint16_t> demosaic(const CodeImage& img, int rows, int cols, int channels,
                                    const MosaicLayout& layout);

enum class Backend { kBuiltin, kExternal };

// How 12-bit samples reach the external encoder.
enum class PixelFormat { kGray12, kYuv420Luma12 };

struct EncoderSettings {
  Backend backend = Backend::kBuiltin;
  int crf = 28;
  int keyint = 30;
  PixelFormat pixel_format = PixelFormat::kGray12;
  // Empty: read FVV_ENCODER.
  std::string encoder_path;

  void validate() const;
};

std::string backend_name(Backend b);
Backend parse_backend(const std::string& s);

// External encoder binary: settings.encoder_path, else FVV_ENCODER. Throws
// EnvironmentError when neither names an executable file.
std::string resolve_encoder(const EncoderSettings& settings);

std::vector<std::uint8_t> encode_stream(std::span<const CodeImage> frames,
                                        const EncoderSettings& settings);
// The backend is read from the stream header; settings supply the binary.
std::vector<CodeImage> decode_stream(std::span<const std::uint8_t> bytes,
                                     const EncoderSettings& settings = {});

// 16-bit per-tensor min/max quantization of decoder weights.
struct PackedMlp {
  int feature_dim = 0;
  int posenc_levels = 0;
  int width = 0;
  std::array<float, 6> lo{};
  std::array<float, 6> hi{};
  std::array<std::vector<std::uint16_t>, 6> codes;
};

PackedMlp pack_mlp(const DecoderMLP& mlp);
DecoderMLP unpack_mlp(const PackedMlp& p);

// Occupancy of a decoded density grid: a lattice point is occupied when the
// 3x3x3 neighbourhood maximum of its code exceeds floor.
OccupancyGrid occupancy_from_codes(std::span<const std::uint16_t> codes, const Dims3& dims,
                                   const Bbox& bbox, std::uint16_t floor);

// Decoded frames, one entry per stored frame.
struct DecodedGroup {
  int group_index = 0;
  int first_frame = 0;
  std::vector<FrameField> fields;
  std::vector<OccupancyGrid> occ;
  DecoderMLP mlp;
};

struct ContainerMeta {
  Bbox bbox;
  Dims3 dims{2, 2, 2};
  int channels = 0;
  int group_size = 0;
  int frame_count = 0;
  QuantSpec density_quant = kDensityQuant;
  QuantSpec feature_quant = kFeatureQuant;
  MosaicLayout plane_layout;
  MosaicLayout density_layout;
  Backend backend = Backend::kBuiltin;
  int crf = 0;
  PixelFormat pixel_format = PixelFormat::kGray12;
  std::uint16_t occupancy_floor = 0;
  double lambda_th = 1e-4;
  double focal_ratio = 1.25;
  double orbit_radius = 3;
  double fps_hint = 30;
  double step = 1.0 / 47.0;
  Vec3 background{1, 1, 1};
  std::vector<int> group_first_frame;
};

struct Container {
  ContainerMeta meta;
  std::vector<DecodedGroup> groups;

  int frame_count() const { return meta.frame_count; }
  // (group, local frame) holding global frame f.
  std::pair<int, int> locate(int frame) const;
};

struct PackOptions {
  EncoderSettings encoder;
  double lambda_th = 1e-4;
  double focal_ratio = 1.25;
  double orbit_radius = 3;
  double fps_hint = 30;
  double step = 1.0 / 47.0;
  Vec3 background{1, 1, 1};
};

std::vector<std::uint8_t> pack_container(std::span<const GroupModel> groups,
                                         const PackOptions& opts);
Container unpack_container(std::span<const std::uint8_t> bytes,
                           const EncoderSettings& settings = {});

// The model exactly as the builtin path reproduces it: quantize, cull and
// dequantize, MLPs through 16-bit packing, occupancy from codes.
Container quantized_model(std::span<const GroupModel> groups, const PackOptions& opts);

// Byte attribution of a container file.
struct SizeBreakdown {
  std::uint64_t p_xy = 0;
  std::uint64_t p_xz = 0;
  std::uint64_t p_yz = 0;
  std::uint64_t v_sigma = 0;
  std::uint64_t mlps = 0;
  std::uint64_t metadata = 0;

  std::uint64_t total() const { return p_xy + p_xz + p_yz + v_sigma + mlps + metadata; }
};

SizeBreakdown size_breakdown(std::span<const std::uint8_t> bytes);

// Raw float tensors, used for checkpoints.
void write_raw_field(const std::filesystem::path& path, const FrameField& f);
FrameField read_raw_field(const std::filesystem::path& path);
void write_raw_mlp(const std::filesystem::path& path, const DecoderMLP& mlp);
DecoderMLP read_raw_mlp(const std::filesystem::path& path);

}  // namespace fvv

#endif  // FVV_CODEC_H_
