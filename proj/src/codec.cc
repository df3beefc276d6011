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

#include "fvv/codec.h"

#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "fvv/image.h"
#include "fvv/trainer.h"
#include "json.hpp"

namespace fvv {

using nlohmann::json;

void QuantSpec::validate() const {
  if (!(lo < hi)) throw InvalidArgument("QuantSpec: lo must be below hi");
  if (bits < 1 || bits > 16) throw InvalidArgument("QuantSpec: bits must be in [1, 16]");
}

std::uint16_t quantize(float v, const QuantSpec& spec) {
  double u = (static_cast<double>(v) - spec.lo) / (static_cast<double>(spec.hi) - spec.lo);
  if (!(u > 0)) u = 0;  // also maps NaN to the low end
  if (u > 1) u = 1;
  return static_cast<std::uint16_t>(std::floor(u * spec.max_code() + 0.5));
}

float dequantize(std::uint16_t q, const QuantSpec& spec) {
  return static_cast<float>(spec.lo + static_cast<double>(q) / spec.max_code() *
                                         (static_cast<double>(spec.hi) - spec.lo));
}

std::vector<std::uint16_t> quantize(std::span<const float> values, const QuantSpec& spec) {
  spec.validate();
  std::vector<std::uint16_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = quantize(values[i], spec);
  return out;
}

std::vector<float> dequantize(std::span<const std::uint16_t> codes, const QuantSpec& spec) {
  spec.validate();
  std::vector<float> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] > spec.max_code()) throw InvalidArgument("dequantize: code exceeds bit depth");
    out[i] = dequantize(codes[i], spec);
  }
  return out;
}

std::vector<std::uint16_t> cull_empty(std::span<const std::uint16_t> q_density, const Dims3& dims,
                                      const OccupancyGrid& mask) {
  if (mask.dims != dims || q_density.size() != static_cast<std::size_t>(volume(dims)) ||
      mask.bits.size() != q_density.size())
    throw InvalidArgument("cull_empty: grid and mask dims differ");
  std::vector<std::uint16_t> out(q_density.begin(), q_density.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!mask.bits[i]) out[i] = 0;
  return out;
}

MosaicLayout default_layout(int channels) {
  if (channels < 1) throw InvalidArgument("default_layout: channels must be >= 1");
  int rows = 1;
  for (int r = 1; r * r <= channels; ++r)
    if (channels % r == 0) rows = r;
  return {rows, channels / rows};
}

namespace {

void check_mosaic(int rows, int cols, int channels, const MosaicLayout& layout) {
  if (rows < 1 || cols < 1 || channels < 1) throw InvalidArgument("mosaic: empty plane");
  if (layout.tile_rows < 1 || layout.tile_cols < 1 || layout.capacity() < channels)
    throw InvalidArgument("mosaic: layout holds " + std::to_string(layout.capacity()) +
                          " tiles, need " + std::to_string(channels));
}

}  // namespace

CodeImage mosaic(std::span<const std::uint16_t> plane, int rows, int cols, int channels,
                 const MosaicLayout& layout) {
  check_mosaic(rows, cols, channels, layout);
  if (plane.size() != static_cast<std::size_t>(rows) * cols * channels)
    throw InvalidArgument("mosaic: plane size does not match shape");
  CodeImage img;
  img.width = layout.tile_cols * cols;
  img.height = layout.tile_rows * rows;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0);
  for (int k = 0; k < channels; ++k) {
    const int y0 = (k / layout.tile_cols) * rows;
    const int x0 = (k % layout.tile_cols) * cols;
    for (int a = 0; a < rows; ++a)
      for (int b = 0; b < cols; ++b)
        img.pixels[static_cast<std::size_t>(y0 + a) * img.width + x0 + b] =
            plane[(static_cast<std::size_t>(a) * cols + b) * channels + k];
  }
  return img;
}

std::vector<std::uint16_t> demosaic(const CodeImage& img, int rows, int cols, int channels,
                                    const MosaicLayout& layout) {
  check_mosaic(rows, cols, channels, layout);
  if (img.width != layout.tile_cols * cols || img.height != layout.tile_rows * rows ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
    throw InvalidArgument("demosaic: image does not match layout");
  std::vector<std::uint16_t> plane(static_cast<std::size_t>(rows) * cols * channels);
  for (int k = 0; k < channels; ++k) {
    const int y0 = (k / layout.tile_cols) * rows;
    const int x0 = (k % layout.tile_cols) * cols;
    for (int a = 0; a < rows; ++a)
      for (int b = 0; b < cols; ++b)
        plane[(static_cast<std::size_t>(a) * cols + b) * channels + k] =
            img.pixels[static_cast<std::size_t>(y0 + a) * img.width + x0 + b];
  }
  return plane;
}

void EncoderSettings::validate() const {
  if (backend == Backend::kExternal && (crf < 0 || crf > 51))
    throw InvalidArgument("crf must be in [0, 51]");
  if (keyint < 1) throw InvalidArgument("keyint must be >= 1");
}

std::string backend_name(Backend b) { return b == Backend::kBuiltin ? "builtin" : "external"; }

Backend parse_backend(const std::string& s) {
  if (s == "builtin") return Backend::kBuiltin;
  if (s == "external") return Backend::kExternal;
  throw InvalidArgument("unknown backend '" + s + "' (expected external or builtin)");
}

std::string resolve_encoder(const EncoderSettings& settings) {
  std::string path = settings.encoder_path;
  if (path.empty()) {
    const char* env = std::getenv("FVV_ENCODER");
    if (env != nullptr) path = env;
  }
  if (path.empty())
    throw EnvironmentError(
        "external backend needs an ffmpeg binary with libx265: set FVV_ENCODER to its path");
  if (::access(path.c_str(), X_OK) != 0)
    throw EnvironmentError("FVV_ENCODER does not name an executable ffmpeg binary: " + path);
  return path;
}

namespace {

// Little-endian byte writer/reader.
struct Writer {
  std::vector<std::uint8_t> buf;

  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  template <typename T>
  void put(T v) {
    std::uint8_t tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    bytes(tmp, sizeof(T));
  }
};

struct Reader {
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (n > buf.size() - pos) throw FormatError("truncated data");
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = buf.subspan(pos, n);
    pos += n;
    return s;
  }
  void magic(const char* m) {
    auto s = take(4);
    if (std::memcmp(s.data(), m, 4) != 0) throw FormatError(std::string("bad magic, expected ") + m);
  }
};

static_assert(std::endian::native == std::endian::little, "little-endian host required");

void check_frames(std::span<const CodeImage> frames) {
  if (frames.empty()) throw InvalidArgument("encode_stream: no frames");
  for (const CodeImage& f : frames) {
    if (f.width != frames[0].width || f.height != frames[0].height)
      throw InvalidArgument("encode_stream: frames differ in size");
    if (f.width < 1 || f.height < 1 ||
        f.pixels.size() != static_cast<std::size_t>(f.width) * f.height)
      throw InvalidArgument("encode_stream: malformed frame");
    for (std::uint16_t p : f.pixels)
      if (p > 4095) throw InvalidArgument("encode_stream: sample exceeds 12 bits");
  }
}

// Builtin: zigzag temporal deltas split into high/low byte planes, deflated.
std::vector<std::uint8_t> encode_builtin(std::span<const CodeImage> frames) {
  const std::size_t n = frames[0].pixels.size();
  std::vector<std::uint8_t> raw(2 * n * frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    std::uint8_t* hi = raw.data() + 2 * n * f;
    std::uint8_t* lo = hi + n;
    for (std::size_t i = 0; i < n; ++i) {
      const int prev = f == 0 ? 0 : frames[f - 1].pixels[i];
      const int d = frames[f].pixels[i] - prev;
      const auto z = static_cast<std::uint16_t>(d >= 0 ? 2 * d : -2 * d - 1);
      hi[i] = static_cast<std::uint8_t>(z >> 8);
      lo[i] = static_cast<std::uint8_t>(z & 0xff);
    }
  }
  uLongf len = compressBound(raw.size());
  std::vector<std::uint8_t> packed(len);
  if (compress2(packed.data(), &len, raw.data(), raw.size(), 9) != Z_OK)
    throw Error("zlib compression failed");
  packed.resize(len);
  Writer w;
  w.bytes("FVB1", 4);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(frames.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(frames[0].width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(frames[0].height));
  w.bytes(packed.data(), packed.size());
  return w.buf;
}

std::vector<CodeImage> decode_builtin(Reader& r) {
  const auto count = r.get<std::uint32_t>();
  const auto width = r.get<std::uint32_t>();
  const auto height = r.get<std::uint32_t>();
  const std::uint64_t n = static_cast<std::uint64_t>(width) * height;
  if (count == 0 || n == 0 || n * count > (1ull << 34)) throw FormatError("bad stream header");
  std::vector<std::uint8_t> raw(2 * n * count);
  uLongf len = raw.size();
  auto body = r.take(r.buf.size() - r.pos);
  if (uncompress(raw.data(), &len, body.data(), body.size()) != Z_OK || len != raw.size())
    throw FormatError("corrupt or truncated builtin stream");
  std::vector<CodeImage> frames(count);
  for (std::size_t f = 0; f < count; ++f) {
    CodeImage& img = frames[f];
    img.width = static_cast<int>(width);
    img.height = static_cast<int>(height);
    img.pixels.resize(n);
    const std::uint8_t* hi = raw.data() + 2 * n * f;
    const std::uint8_t* lo = hi + n;
    for (std::size_t i = 0; i < n; ++i) {
      const int z = (hi[i] << 8) | lo[i];
      const int d = (z & 1) ? -(z + 1) / 2 : z / 2;
      const int prev = f == 0 ? 0 : frames[f - 1].pixels[i];
      const int v = prev + d;
      if (v < 0 || v > 4095) throw FormatError("builtin stream decodes out of range");
      img.pixels[i] = static_cast<std::uint16_t>(v);
    }
  }
  return frames;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

std::filesystem::path temp_path(const char* ext) {
  static std::atomic<std::uint64_t> counter{0};
  const auto name = "fvv_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ext;
  return std::filesystem::temp_directory_path() / name;
}

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const char* ext) : path(temp_path(ext)) {}
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
};

int padded(int v) { return (v + 7) / 8 * 8; }

const char* pix_fmt_name(PixelFormat p) {
  return p == PixelFormat::kGray12 ? "gray12le" : "yuv420p12le";
}

// Bytes of one raw frame in the external pixel format.
std::size_t raw_frame_bytes(PixelFormat p, int w, int h) {
  const std::size_t luma = static_cast<std::size_t>(w) * h;
  return 2 * (p == PixelFormat::kGray12 ? luma : luma + 2 * (luma / 4));
}

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

std::vector<std::uint8_t> encode_external(std::span<const CodeImage> frames,
                                          const EncoderSettings& s) {
  const std::string bin = resolve_encoder(s);
  ignore_sigpipe();
  const int w = frames[0].width, h = frames[0].height;
  const int pw = padded(w), ph = padded(h);
  TempFile out(".hevc");
  const std::string fmt = pix_fmt_name(s.pixel_format);
  const std::string cmd = shell_quote(bin) +
                          " -hide_banner -loglevel error -nostdin -y -f rawvideo -pix_fmt " + fmt +
                          " -s " + std::to_string(pw) + "x" + std::to_string(ph) +
                          " -r 30 -i pipe:0 -c:v libx265 -crf " + std::to_string(s.crf) +
                          " -x265-params keyint=" + std::to_string(s.keyint) +
                          ":log-level=error -pix_fmt " + fmt + " -f hevc " +
                          shell_quote(out.path.string());
  FILE* pipe = ::popen(cmd.c_str(), "w");
  if (pipe == nullptr) throw EnvironmentError("could not launch encoder " + bin);
  std::vector<std::uint16_t> buf(raw_frame_bytes(s.pixel_format, pw, ph) / 2, 0);
  bool ok = true;
  for (const CodeImage& f : frames) {
    std::fill(buf.begin(), buf.end(), 0);
    for (int y = 0; y < h; ++y)
      std::copy_n(f.pixels.data() + static_cast<std::size_t>(y) * w, w,
                  buf.data() + static_cast<std::size_t>(y) * pw);
    if (s.pixel_format == PixelFormat::kYuv420Luma12)
      std::fill(buf.begin() + static_cast<std::size_t>(pw) * ph, buf.end(), 2048);
    if (std::fwrite(buf.data(), 2, buf.size(), pipe) != buf.size()) {
      ok = false;
      break;
    }
  }
  const int status = ::pclose(pipe);
  if (!ok || status != 0) throw EnvironmentError("encoder failed: " + cmd);
  const std::vector<std::uint8_t> hevc = read_file(out.path);
  Writer wr;
  wr.bytes("FVX1", 4);
  wr.put<std::uint32_t>(static_cast<std::uint32_t>(frames.size()));
  wr.put<std::uint32_t>(static_cast<std::uint32_t>(w));
  wr.put<std::uint32_t>(static_cast<std::uint32_t>(h));
  wr.put<std::uint8_t>(static_cast<std::uint8_t>(s.pixel_format));
  wr.bytes(hevc.data(), hevc.size());
  return wr.buf;
}

std::vector<CodeImage> decode_external(Reader& r, const EncoderSettings& s) {
  const auto count = r.get<std::uint32_t>();
  const int w = static_cast<int>(r.get<std::uint32_t>());
  const int h = static_cast<int>(r.get<std::uint32_t>());
  const auto pf = r.get<std::uint8_t>();
  if (count == 0 || w < 1 || h < 1 || pf > 1) throw FormatError("bad stream header");
  const auto fmt = static_cast<PixelFormat>(pf);
  auto body = r.take(r.buf.size() - r.pos);
  const std::string bin = resolve_encoder(s);
  TempFile in(".hevc");
  write_file(in.path, std::vector<std::uint8_t>(body.begin(), body.end()));
  const std::string cmd = shell_quote(bin) + " -hide_banner -loglevel error -nostdin -f hevc -i " +
                          shell_quote(in.path.string()) + " -f rawvideo -pix_fmt " +
                          pix_fmt_name(fmt) + " pipe:1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) throw EnvironmentError("could not launch decoder " + bin);
  const int pw = padded(w), ph = padded(h);
  std::vector<std::uint16_t> buf(raw_frame_bytes(fmt, pw, ph) / 2);
  std::vector<CodeImage> frames;
  while (frames.size() < count && std::fread(buf.data(), 2, buf.size(), pipe) == buf.size()) {
    CodeImage img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.pixels[static_cast<std::size_t>(y) * w + x] =
            std::min<std::uint16_t>(buf[static_cast<std::size_t>(y) * pw + x], 4095);
    frames.push_back(std::move(img));
  }
  // Drain anything left so the child can exit.
  while (std::fread(buf.data(), 1, buf.size() * 2, pipe) > 0) {
  }
  const int status = ::pclose(pipe);
  if (status != 0 || frames.size() != count)
    throw FormatError("external stream decoded " + std::to_string(frames.size()) + " of " +
                      std::to_string(count) + " frames");
  return frames;
}

}  // namespace

std::vector<std::uint8_t> encode_stream(std::span<const CodeImage> frames,
                                        const EncoderSettings& settings) {
  settings.validate();
  check_frames(frames);
  return settings.backend == Backend::kBuiltin ? encode_builtin(frames)
                                               : encode_external(frames, settings);
}

std::vector<CodeImage> decode_stream(std::span<const std::uint8_t> bytes,
                                     const EncoderSettings& settings) {
  Reader r{bytes};
  auto m = r.take(4);
  if (std::memcmp(m.data(), "FVB1", 4) == 0) return decode_builtin(r);
  if (std::memcmp(m.data(), "FVX1", 4) == 0) return decode_external(r, settings);
  throw FormatError("unknown stream magic");
}

PackedMlp pack_mlp(const DecoderMLP& mlp) {
  validate_decoder(mlp);
  PackedMlp p;
  p.feature_dim = mlp.feature_dim;
  p.posenc_levels = mlp.posenc_levels;
  p.width = mlp.width();
  const auto t = mlp.tensors();
  for (int i = 0; i < 6; ++i) {
    const auto [mn, mx] = std::minmax_element(t[i].begin(), t[i].end());
    p.lo[i] = *mn;
    p.hi[i] = *mx;
    const double range = static_cast<double>(p.hi[i]) - p.lo[i];
    p.codes[i].resize(t[i].size());
    for (std::size_t k = 0; k < t[i].size(); ++k)
      p.codes[i][k] = range > 0 ? static_cast<std::uint16_t>(
                                      std::floor((t[i][k] - p.lo[i]) / range * 65535.0 + 0.5))
                                : 0;
  }
  return p;
}

DecoderMLP unpack_mlp(const PackedMlp& p) {
  DecoderMLP mlp = make_decoder(p.feature_dim, p.posenc_levels, p.width, 0);
  auto t = mlp.tensors();
  for (int i = 0; i < 6; ++i) {
    if (p.codes[i].size() != t[i].size()) throw FormatError("packed MLP tensor size mismatch");
    const double range = static_cast<double>(p.hi[i]) - p.lo[i];
    for (std::size_t k = 0; k < t[i].size(); ++k)
      t[i][k] = static_cast<float>(p.lo[i] + p.codes[i][k] / 65535.0 * range);
  }
  return mlp;
}

OccupancyGrid occupancy_from_codes(std::span<const std::uint16_t> codes, const Dims3& dims,
                                   const Bbox& bbox, std::uint16_t floor) {
  if (codes.size() != static_cast<std::size_t>(volume(dims)))
    throw InvalidArgument("occupancy_from_codes: size mismatch");
  std::vector<std::uint16_t> a(codes.begin(), codes.end()), b(a.size());
  const std::size_t stride[3] = {static_cast<std::size_t>(dims[1]) * dims[2],
                                 static_cast<std::size_t>(dims[2]), 1};
  for (int axis = 0; axis < 3; ++axis) {
    for (int ix = 0; ix < dims[0]; ++ix)
      for (int iy = 0; iy < dims[1]; ++iy)
        for (int iz = 0; iz < dims[2]; ++iz) {
          const int coord = axis == 0 ? ix : (axis == 1 ? iy : iz);
          const std::size_t i = ix * stride[0] + iy * stride[1] + iz;
          std::uint16_t m = a[i];
          if (coord > 0) m = std::max(m, a[i - stride[axis]]);
          if (coord < dims[axis] - 1) m = std::max(m, a[i + stride[axis]]);
          b[i] = m;
        }
    std::swap(a, b);
  }
  OccupancyGrid o;
  o.dims = dims;
  o.bbox = bbox;
  o.bits.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) o.bits[i] = a[i] > floor ? 1 : 0;
  return o;
}

std::pair<int, int> Container::locate(int frame) const {
  if (frame < 0 || frame >= meta.frame_count)
    throw OutOfBounds("frame " + std::to_string(frame) + " outside [0, " +
                      std::to_string(meta.frame_count) + ")");
  for (int g = static_cast<int>(groups.size()) - 1; g >= 0; --g)
    if (frame >= groups[g].first_frame) return {g, frame - groups[g].first_frame};
  throw InvalidState("container has no group for frame " + std::to_string(frame));
}

namespace {

constexpr std::uint16_t kContainerVersion = 1;
constexpr std::uint16_t kExternalFloor = 64;

// Codes of one frame: density (culled) and the three planes.
struct FrameCodes {
  std::vector<std::uint16_t> density;
  std::array<std::vector<std::uint16_t>, 3> planes;
};

void check_groups(std::span<const GroupModel> groups) {
  if (groups.empty()) throw InvalidArgument("pack: no groups");
  const FrameField& ref = groups[0].fields.at(0);
  int next = groups[0].first_frame;
  if (next != 0) throw InvalidArgument("pack: first group must start at frame 0");
  for (const GroupModel& g : groups) {
    if (g.fields.empty()) throw InvalidArgument("pack: empty group");
    if (g.first_frame != next) throw InvalidArgument("pack: groups are not consecutive");
    next += g.size();
    for (const FrameField& f : g.fields)
      if (!same_shape(f, ref) || !(f.sigma.bbox == ref.sigma.bbox))
        throw InvalidArgument("pack: groups differ in shape");
    if (!same_shape(g.mlp, groups[0].mlp)) throw InvalidArgument("pack: decoders differ in shape");
  }
}

ContainerMeta make_meta(std::span<const GroupModel> groups, const PackOptions& opts) {
  const FrameField& f = groups[0].fields[0];
  ContainerMeta m;
  m.bbox = f.sigma.bbox;
  m.dims = f.dims();
  m.channels = f.channels();
  m.group_size = groups[0].size();
  for (const GroupModel& g : groups) {
    m.group_first_frame.push_back(g.first_frame);
    m.frame_count += g.size();
  }
  m.plane_layout = default_layout(m.channels);
  m.density_layout = default_layout(m.dims[2]);
  m.backend = opts.encoder.backend;
  m.crf = opts.encoder.backend == Backend::kExternal ? opts.encoder.crf : 0;
  m.pixel_format = opts.encoder.pixel_format;
  m.occupancy_floor = opts.encoder.backend == Backend::kExternal ? kExternalFloor : 0;
  m.lambda_th = opts.lambda_th;
  m.focal_ratio = opts.focal_ratio;
  m.orbit_radius = opts.orbit_radius;
  m.fps_hint = opts.fps_hint;
  m.step = opts.step;
  m.background = opts.background;
  return m;
}

FrameCodes frame_codes(const FrameField& f, const ContainerMeta& m) {
  FrameCodes c;
  const OccupancyGrid mask = update_occupancy(f.sigma, m.lambda_th);
  c.density = cull_empty(quantize(f.sigma.values, m.density_quant), f.dims(), mask);
  for (int p = 0; p < 3; ++p) c.planes[p] = quantize(f.planes.planes[p].values, m.feature_quant);
  return c;
}

std::array<int, 2> plane_shape(const ContainerMeta& m, int p) {
  return {kPlaneScale * m.dims[kPlaneAxes[p][0]], kPlaneScale * m.dims[kPlaneAxes[p][1]]};
}

FrameField field_from_codes(const FrameCodes& c, const ContainerMeta& m, int frame_index,
                            OccupancyGrid* occ) {
  FrameField f = make_field(m.dims, m.bbox, m.channels, 0.f, 0.f, frame_index);
  f.sigma.values = dequantize(c.density, m.density_quant);
  for (int p = 0; p < 3; ++p) {
    auto& plane = f.planes.planes[p];
    if (c.planes[p].size() != plane.values.size()) throw FormatError("plane size mismatch");
    plane.values = dequantize(c.planes[p], m.feature_quant);
  }
  *occ = occupancy_from_codes(c.density, m.dims, m.bbox, m.occupancy_floor);
  return f;
}

Container assemble(const ContainerMeta& meta, const std::vector<FrameCodes>& codes,
                   const std::vector<PackedMlp>& mlps) {
  Container c;
  c.meta = meta;
  for (std::size_t g = 0; g < meta.group_first_frame.size(); ++g) {
    DecodedGroup dg;
    dg.group_index = static_cast<int>(g);
    dg.first_frame = meta.group_first_frame[g];
    const int end = g + 1 < meta.group_first_frame.size() ? meta.group_first_frame[g + 1]
                                                          : meta.frame_count;
    for (int fi = dg.first_frame; fi < end; ++fi) {
      OccupancyGrid o;
      dg.fields.push_back(field_from_codes(codes[fi], meta, fi, &o));
      dg.occ.push_back(std::move(o));
    }
    dg.mlp = unpack_mlp(mlps[g]);
    c.groups.push_back(std::move(dg));
  }
  return c;
}

json quant_json(const QuantSpec& q) { return {{"lo", q.lo}, {"hi", q.hi}, {"bits", q.bits}}; }
QuantSpec json_quant(const json& j) {
  QuantSpec q{j.at("lo").get<float>(), j.at("hi").get<float>(), j.at("bits").get<int>()};
  q.validate();
  return q;
}
json layout_json(const MosaicLayout& l) { return {{"tile_rows", l.tile_rows}, {"tile_cols", l.tile_cols}}; }
MosaicLayout json_layout(const json& j) {
  return {j.at("tile_rows").get<int>(), j.at("tile_cols").get<int>()};
}

json meta_json(const ContainerMeta& m, const PackedMlp& mlp0) {
  json j;
  j["bbox"] = {{"min", {m.bbox.min.x, m.bbox.min.y, m.bbox.min.z}},
               {"max", {m.bbox.max.x, m.bbox.max.y, m.bbox.max.z}}};
  j["dims"] = {m.dims[0], m.dims[1], m.dims[2]};
  j["channels"] = m.channels;
  j["group_size"] = m.group_size;
  j["frame_count"] = m.frame_count;
  j["group_first_frame"] = m.group_first_frame;
  j["density_quant"] = quant_json(m.density_quant);
  j["feature_quant"] = quant_json(m.feature_quant);
  j["plane_layout"] = layout_json(m.plane_layout);
  j["density_layout"] = layout_json(m.density_layout);
  j["codec"] = m.backend == Backend::kBuiltin ? "builtin-zlib-delta" : "hevc-libx265";
  j["crf"] = m.crf;
  j["pixel_format"] = pix_fmt_name(m.pixel_format);
  j["occupancy_floor"] = m.occupancy_floor;
  j["lambda_th"] = m.lambda_th;
  j["focal_ratio"] = m.focal_ratio;
  j["orbit_radius"] = m.orbit_radius;
  j["fps_hint"] = m.fps_hint;
  j["step"] = m.step;
  j["background"] = {m.background.x, m.background.y, m.background.z};
  j["mlp"] = {{"feature_dim", mlp0.feature_dim},
              {"posenc_levels", mlp0.posenc_levels},
              {"width", mlp0.width}};
  return j;
}

ContainerMeta json_meta(const json& j, PackedMlp* shape) {
  ContainerMeta m;
  const auto mn = j.at("bbox").at("min").get<std::vector<double>>();
  const auto mx = j.at("bbox").at("max").get<std::vector<double>>();
  m.bbox = {{mn.at(0), mn.at(1), mn.at(2)}, {mx.at(0), mx.at(1), mx.at(2)}};
  const auto d = j.at("dims").get<std::vector<int>>();
  m.dims = {d.at(0), d.at(1), d.at(2)};
  m.channels = j.at("channels").get<int>();
  m.group_size = j.at("group_size").get<int>();
  m.frame_count = j.at("frame_count").get<int>();
  m.group_first_frame = j.at("group_first_frame").get<std::vector<int>>();
  m.density_quant = json_quant(j.at("density_quant"));
  m.feature_quant = json_quant(j.at("feature_quant"));
  m.plane_layout = json_layout(j.at("plane_layout"));
  m.density_layout = json_layout(j.at("density_layout"));
  m.backend = j.at("codec").get<std::string>() == "builtin-zlib-delta" ? Backend::kBuiltin
                                                                      : Backend::kExternal;
  m.crf = j.at("crf").get<int>();
  m.pixel_format =
      j.at("pixel_format").get<std::string>() == "gray12le" ? PixelFormat::kGray12
                                                            : PixelFormat::kYuv420Luma12;
  m.occupancy_floor = j.at("occupancy_floor").get<std::uint16_t>();
  m.lambda_th = j.at("lambda_th").get<double>();
  m.focal_ratio = j.at("focal_ratio").get<double>();
  m.orbit_radius = j.at("orbit_radius").get<double>();
  m.fps_hint = j.at("fps_hint").get<double>();
  m.step = j.at("step").get<double>();
  const auto bg = j.at("background").get<std::vector<double>>();
  m.background = {bg.at(0), bg.at(1), bg.at(2)};
  if (!(m.step > 0)) throw FormatError("bad render step");
  shape->feature_dim = j.at("mlp").at("feature_dim").get<int>();
  shape->posenc_levels = j.at("mlp").at("posenc_levels").get<int>();
  shape->width = j.at("mlp").at("width").get<int>();
  if (m.frame_count < 1 || m.group_first_frame.empty() || m.group_first_frame[0] != 0 ||
      !std::is_sorted(m.group_first_frame.begin(), m.group_first_frame.end()) ||
      m.group_first_frame.back() >= m.frame_count || m.channels < 1)
    throw FormatError("inconsistent container metadata");
  for (int a = 0; a < 3; ++a)
    if (m.dims[a] < 2 || m.dims[a] > 4096) throw FormatError("bad container dims");
  return m;
}

std::size_t mlp_tensor_size(const PackedMlp& shape, int t) {
  const int in = shape.feature_dim + posenc_dim(shape.posenc_levels);
  const int w = shape.width;
  switch (t) {
    case 0: return static_cast<std::size_t>(w) * in;
    case 2: return static_cast<std::size_t>(w) * w;
    case 4: return static_cast<std::size_t>(3) * w;
    case 1:
    case 3: return w;
    default: return 3;
  }
}

// Parsed container layout: spans into the file.
struct Layout {
  ContainerMeta meta;
  PackedMlp mlp_shape;
  std::size_t header_bytes = 0;  // magic, version, JSON and its length, stream prefixes
  std::array<std::span<const std::uint8_t>, 4> streams;
  std::vector<PackedMlp> mlps;
  std::size_t mlp_bytes = 0;
};

Layout parse(std::span<const std::uint8_t> bytes) {
  Layout l;
  Reader r{bytes};
  r.magic("FVVC");
  const auto version = r.get<std::uint16_t>();
  if (version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(version));
  const auto json_len = r.get<std::uint32_t>();
  auto js = r.take(json_len);
  try {
    l.meta = json_meta(json::parse(js.begin(), js.end()), &l.mlp_shape);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad container metadata: ") + e.what());
  }
  for (int s = 0; s < 4; ++s) {
    const auto len = r.get<std::uint64_t>();
    if (len > bytes.size()) throw FormatError("truncated data");
    l.streams[s] = r.take(static_cast<std::size_t>(len));
  }
  l.header_bytes = 4 + 2 + 4 + json_len + 4 * 8;
  const std::size_t mlp_start = r.pos;
  for (std::size_t g = 0; g < l.meta.group_first_frame.size(); ++g) {
    if (r.get<std::uint32_t>() != g) throw FormatError("MLP blocks out of order");
    PackedMlp p = l.mlp_shape;
    for (int t = 0; t < 6; ++t) {
      p.lo[t] = r.get<float>();
      p.hi[t] = r.get<float>();
    }
    for (int t = 0; t < 6; ++t) {
      auto raw = r.take(2 * mlp_tensor_size(p, t));
      p.codes[t].resize(raw.size() / 2);
      std::memcpy(p.codes[t].data(), raw.data(), raw.size());
    }
    l.mlps.push_back(std::move(p));
  }
  l.mlp_bytes = r.pos - mlp_start;
  if (r.pos != bytes.size()) throw FormatError("trailing bytes after container");
  return l;
}

}  // namespace

std::vector<std::uint8_t> pack_container(std::span<const GroupModel> groups,
                                         const PackOptions& opts) {
  opts.encoder.validate();
  check_groups(groups);
  const ContainerMeta meta = make_meta(groups, opts);
  std::array<std::vector<CodeImage>, 4> images;
  std::vector<PackedMlp> mlps;
  for (const GroupModel& g : groups) {
    for (const FrameField& f : g.fields) {
      const FrameCodes c = frame_codes(f, meta);
      images[0].push_back(
          mosaic(c.density, meta.dims[0], meta.dims[1], meta.dims[2], meta.density_layout));
      for (int p = 0; p < 3; ++p) {
        const auto shape = plane_shape(meta, p);
        images[p + 1].push_back(
            mosaic(c.planes[p], shape[0], shape[1], meta.channels, meta.plane_layout));
      }
    }
    mlps.push_back(pack_mlp(g.mlp));
  }
  std::array<std::vector<std::uint8_t>, 4> streams;
  std::array<std::exception_ptr, 4> errors;
  std::vector<std::thread> workers;
  for (int s = 0; s < 4; ++s)
    workers.emplace_back([&, s] {
      try {
        streams[s] = encode_stream(images[s], opts.encoder);
      } catch (...) {
        errors[s] = std::current_exception();
      }
    });
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  Writer w;
  w.bytes("FVVC", 4);
  w.put<std::uint16_t>(kContainerVersion);
  const std::string js = meta_json(meta, mlps[0]).dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(js.size()));
  w.bytes(js.data(), js.size());
  for (const auto& s : streams) {
    w.put<std::uint64_t>(s.size());
    w.bytes(s.data(), s.size());
  }
  for (std::size_t g = 0; g < mlps.size(); ++g) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(g));
    for (int t = 0; t < 6; ++t) {
      w.put<float>(mlps[g].lo[t]);
      w.put<float>(mlps[g].hi[t]);
    }
    for (int t = 0; t < 6; ++t) w.bytes(mlps[g].codes[t].data(), 2 * mlps[g].codes[t].size());
  }
  return w.buf;
}

Container unpack_container(std::span<const std::uint8_t> bytes, const EncoderSettings& settings) {
  const Layout l = parse(bytes);
  const ContainerMeta& m = l.meta;
  std::array<std::vector<CodeImage>, 4> images;
  std::array<std::exception_ptr, 4> errors;
  std::vector<std::thread> workers;
  for (int s = 0; s < 4; ++s)
    workers.emplace_back([&, s] {
      try {
        images[s] = decode_stream(l.streams[s], settings);
      } catch (...) {
        errors[s] = std::current_exception();
      }
    });
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& s : images)
    if (static_cast<int>(s.size()) != m.frame_count)
      throw FormatError("stream frame count does not match metadata");
  std::vector<FrameCodes> codes(m.frame_count);
  try {
    for (int f = 0; f < m.frame_count; ++f) {
      codes[f].density = demosaic(images[0][f], m.dims[0], m.dims[1], m.dims[2], m.density_layout);
      for (int p = 0; p < 3; ++p) {
        const auto shape = plane_shape(m, p);
        codes[f].planes[p] = demosaic(images[p + 1][f], shape[0], shape[1], m.channels, m.plane_layout);
      }
    }
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("stream does not match metadata: ") + e.what());
  }
  return assemble(m, codes, l.mlps);
}

Container quantized_model(std::span<const GroupModel> groups, const PackOptions& opts) {
  check_groups(groups);
  PackOptions builtin = opts;
  builtin.encoder.backend = Backend::kBuiltin;
  const ContainerMeta meta = make_meta(groups, builtin);
  std::vector<FrameCodes> codes;
  std::vector<PackedMlp> mlps;
  for (const GroupModel& g : groups) {
    for (const FrameField& f : g.fields) codes.push_back(frame_codes(f, meta));
    mlps.push_back(pack_mlp(g.mlp));
  }
  return assemble(meta, codes, mlps);
}

SizeBreakdown size_breakdown(std::span<const std::uint8_t> bytes) {
  const Layout l = parse(bytes);
  SizeBreakdown s;
  s.v_sigma = l.streams[0].size();
  s.p_xy = l.streams[1].size();
  s.p_xz = l.streams[2].size();
  s.p_yz = l.streams[3].size();
  s.mlps = l.mlp_bytes;
  s.metadata = l.header_bytes;
  return s;
}

namespace {

constexpr std::uint16_t kRawField = 1;
constexpr std::uint16_t kRawMlp = 2;

void put_floats(Writer& w, const std::vector<float>& v) {
  w.put<std::uint64_t>(v.size());
  w.bytes(v.data(), 4 * v.size());
}

std::vector<float> get_floats(Reader& r, std::size_t expected) {
  const auto n = r.get<std::uint64_t>();
  if (n != expected) throw FormatError("raw tensor has unexpected size");
  auto raw = r.take(4 * expected);
  std::vector<float> v(expected);
  std::memcpy(v.data(), raw.data(), raw.size());
  return v;
}

Reader open_raw(const std::vector<std::uint8_t>& data, std::uint16_t kind) {
  Reader r{data};
  r.magic("FVVR");
  if (r.get<std::uint16_t>() != 1) throw FormatError("unsupported raw tensor version");
  if (r.get<std::uint16_t>() != kind) throw FormatError("raw file holds a different kind");
  return r;
}

}  // namespace

void write_raw_field(const std::filesystem::path& path, const FrameField& f) {
  Writer w;
  w.bytes("FVVR", 4);
  w.put<std::uint16_t>(1);
  w.put<std::uint16_t>(kRawField);
  w.put<std::int32_t>(f.frame_index);
  for (int a = 0; a < 3; ++a) w.put<std::int32_t>(f.dims()[a]);
  w.put<std::int32_t>(f.channels());
  for (int a = 0; a < 3; ++a) w.put<double>(f.sigma.bbox.min[a]);
  for (int a = 0; a < 3; ++a) w.put<double>(f.sigma.bbox.max[a]);
  put_floats(w, f.sigma.values);
  for (const FeaturePlane& p : f.planes.planes) {
    w.put<std::int32_t>(p.rows);
    w.put<std::int32_t>(p.cols);
    put_floats(w, p.values);
  }
  write_file(path, w.buf);
}

FrameField read_raw_field(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> data = read_file(path);
  Reader r = open_raw(data, kRawField);
  const int frame = r.get<std::int32_t>();
  Dims3 dims;
  for (int a = 0; a < 3; ++a) {
    dims[a] = r.get<std::int32_t>();
    if (dims[a] < 2 || dims[a] > 4096) throw FormatError("raw field has bad dims");
  }
  const int channels = r.get<std::int32_t>();
  if (channels < 1 || channels > 4096) throw FormatError("raw field has bad channel count");
  Bbox box;
  for (int a = 0; a < 3; ++a) box.min[a] = r.get<double>();
  for (int a = 0; a < 3; ++a) box.max[a] = r.get<double>();
  FrameField f = make_field(dims, box, channels, 0.f, 0.f, frame);
  f.sigma.values = get_floats(r, f.sigma.values.size());
  for (FeaturePlane& p : f.planes.planes) {
    if (r.get<std::int32_t>() != p.rows || r.get<std::int32_t>() != p.cols)
      throw FormatError("raw field plane shape mismatch");
    p.values = get_floats(r, p.values.size());
  }
  if (r.pos != data.size()) throw FormatError("trailing bytes in raw field");
  return f;
}

void write_raw_mlp(const std::filesystem::path& path, const DecoderMLP& mlp) {
  Writer w;
  w.bytes("FVVR", 4);
  w.put<std::uint16_t>(1);
  w.put<std::uint16_t>(kRawMlp);
  w.put<std::int32_t>(mlp.feature_dim);
  w.put<std::int32_t>(mlp.posenc_levels);
  w.put<std::int32_t>(mlp.width());
  for (const DenseLayer& l : mlp.layers) {
    put_floats(w, l.weight);
    put_floats(w, l.bias);
  }
  write_file(path, w.buf);
}

DecoderMLP read_raw_mlp(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> data = read_file(path);
  Reader r = open_raw(data, kRawMlp);
  const int fd = r.get<std::int32_t>();
  const int levels = r.get<std::int32_t>();
  const int width = r.get<std::int32_t>();
  if (fd < 1 || fd > 4096 || levels < 0 || levels > 32 || width < 1 || width > 4096)
    throw FormatError("raw MLP has bad shape");
  DecoderMLP mlp = make_decoder(fd, levels, width, 0);
  for (DenseLayer& l : mlp.layers) {
    l.weight = get_floats(r, l.weight.size());
    l.bias = get_floats(r, l.bias.size());
  }
  if (r.pos != data.size()) throw FormatError("trailing bytes in raw MLP");
  return mlp;
}

}  // namespace fvv
