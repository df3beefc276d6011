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

#ifndef FVV_FIELD_H_
#define FVV_FIELD_H_

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "fvv/common.h"

namespace fvv {

// Lattice convention used everywhere: an axis with n samples places sample i
// at min + i * extent / (n - 1), so the outermost samples sit on the box faces.

// Explicit density logits, x-major: index = (ix * ny + iy) * nz + iz.
struct DensityGrid {
  Dims3 dims{2, 2, 2};
  std::vector<float> values;
  Bbox bbox;

  static DensityGrid filled(Dims3 dims, const Bbox& bbox, float value);
  std::size_t index(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(ix) * dims[1] + iy) * dims[2] + iz;
  }
  float at(int ix, int iy, int iz) const { return values[index(ix, iy, iz)]; }
};

// Channel-last 2D feature grid: index = (a * cols + b) * channels + c.
struct FeaturePlane {
  int rows = 2;
  int cols = 2;
  int channels = 1;
  std::vector<float> values;

  std::size_t offset(int a, int b) const {
    return (static_cast<std::size_t>(a) * cols + b) * channels;
  }
};

enum PlaneId : int { kPlaneXY = 0, kPlaneXZ = 1, kPlaneYZ = 2 };

// World axes spanned by each plane: (rows axis, cols axis).
inline constexpr std::array<std::array<int, 2>, 3> kPlaneAxes{{{0, 1}, {0, 2}, {1, 2}}};
inline constexpr std::array<const char*, 3> kPlaneNames{"xy", "xz", "yz"};

struct TriPlane {
  std::array<FeaturePlane, 3> planes;
  Bbox bbox;
  int channels = 10;

  int feature_dim() const { return 3 * channels; }
};

struct FrameField {
  DensityGrid sigma;
  TriPlane planes;
  int frame_index = 0;

  const Dims3& dims() const { return sigma.dims; }
  int channels() const { return planes.channels; }

  // Density grid followed by the xy, xz and yz planes.
  std::array<std::span<float>, 4> tensors();
  std::array<std::span<const float>, 4> tensors() const;
  std::size_t parameter_count() const;
};

// Plane resolution is three times the grid resolution along each axis.
inline constexpr int kPlaneScale = 3;

FrameField make_field(Dims3 dims, const Bbox& bbox, int channels, float density_value,
                      float feature_value, int frame_index = 0);
FrameField zeros_like(const FrameField& f);
bool same_shape(const FrameField& a, const FrameField& b);

struct OccupancyGrid {
  Dims3 dims{2, 2, 2};
  Bbox bbox;
  std::vector<std::uint8_t> bits;

  bool at(int ix, int iy, int iz) const {
    return bits[(static_cast<std::size_t>(ix) * dims[1] + iy) * dims[2] + iz] != 0;
  }
  // Occupancy of the lattice point nearest to x (x must be inside the box).
  bool occupied(Vec3 x) const;
  std::size_t count() const;

  static OccupancyGrid filled(Dims3 dims, const Bbox& bbox, bool value);
};

struct TrilinearStencil {
  std::array<std::uint32_t, 8> index;
  std::array<float, 8> weight;
};

// `offset` points at channel 0 of each corner.
struct BilinearStencil {
  std::array<std::uint32_t, 4> offset;
  std::array<float, 4> weight;
};

// Throw OutOfBounds when x is outside the box.
TrilinearStencil density_stencil(const DensityGrid& g, Vec3 x);
BilinearStencil plane_stencil(const TriPlane& p, int plane, Vec3 x);

float sample_density(const DensityGrid& g, Vec3 x);

// Writes [f_xy | f_xz | f_yz] (3h values) into out.
void sample_features(const TriPlane& p, Vec3 x, std::span<float> out);
std::vector<float> sample_features(const TriPlane& p, Vec3 x);

// Gathers via precomputed stencils; used by the renderer's inner loop.
inline float gather_density(const DensityGrid& g, const TrilinearStencil& s) {
  float v = 0;
  for (int i = 0; i < 8; ++i) v += s.weight[i] * g.values[s.index[i]];
  return v;
}
void gather_features(const TriPlane& p, const std::array<BilinearStencil, 3>& s,
                     std::span<float> out);

// Adds d_sigma * trilinear weights and d_feat * bilinear weights into accum.
// accum must have the same shape as field.
void scatter_gradients(const FrameField& field, Vec3 x, float d_sigma,
                       std::span<const float> d_feat, FrameField& accum);
void scatter_stencils(const TrilinearStencil& ds, const std::array<BilinearStencil, 3>& ps,
                      float d_sigma, std::span<const float> d_feat, FrameField& accum);

// occupied iff max over the (border-clipped) 3x3x3 neighbourhood of
// sigmoid(logit) exceeds lambda_th.
OccupancyGrid update_occupancy(const DensityGrid& g, double lambda_th);

// Resamples onto a new lattice (trilinear for density, bilinear for planes),
// plane dims become kPlaneScale * new_dims. The box is unchanged.
FrameField rescale(const FrameField& field, Dims3 new_dims);
DensityGrid resample_grid(const DensityGrid& g, Dims3 new_dims);
FeaturePlane resample_plane(const FeaturePlane& p, int rows, int cols);

// FNV-1a over the raw parameter bytes.
std::uint64_t checksum(const FrameField& f);
std::uint64_t checksum_bytes(const void* data, std::size_t n, std::uint64_t seed = 1469598103934665603ull);

}  // namespace fvv

#endif  // FVV_FIELD_H_
