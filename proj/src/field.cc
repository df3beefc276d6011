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

#include "fvv/field.h"

#include <algorithm>
#include <cstring>

namespace fvv {
namespace {

constexpr double kBoundsTol = 1e-7;

// Continuous lattice coordinate of world coordinate v along an axis with n
// samples, plus the lower corner index and fractional offset.
struct AxisCoord {
  int i0;
  float frac;
};

inline AxisCoord axis_coord(double v, double lo, double hi, int n) {
  double u = (v - lo) / (hi - lo);
  if (!(u >= -kBoundsTol && u <= 1 + kBoundsTol)) throw OutOfBounds("point outside bounding box");
  u = std::clamp(u, 0.0, 1.0) * (n - 1);
  int i0 = static_cast<int>(u);
  if (i0 > n - 2) i0 = n - 2;
  return {i0, static_cast<float>(u - i0)};
}

void check_dims(const Dims3& d) {
  for (int v : d)
    if (v < 2) throw InvalidArgument("grid dims must be >= 2 per axis");
}

FeaturePlane make_plane(int rows, int cols, int channels, float value) {
  FeaturePlane p;
  p.rows = rows;
  p.cols = cols;
  p.channels = channels;
  p.values.assign(static_cast<std::size_t>(rows) * cols * channels, value);
  return p;
}

}  // namespace

DensityGrid DensityGrid::filled(Dims3 dims, const Bbox& bbox, float value) {
  check_dims(dims);
  DensityGrid g;
  g.dims = dims;
  g.bbox = bbox;
  g.values.assign(volume(dims), value);
  return g;
}

std::array<std::span<float>, 4> FrameField::tensors() {
  return {std::span<float>(sigma.values), std::span<float>(planes.planes[0].values),
          std::span<float>(planes.planes[1].values), std::span<float>(planes.planes[2].values)};
}

std::array<std::span<const float>, 4> FrameField::tensors() const {
  return {std::span<const float>(sigma.values), std::span<const float>(planes.planes[0].values),
          std::span<const float>(planes.planes[1].values),
          std::span<const float>(planes.planes[2].values)};
}

std::size_t FrameField::parameter_count() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

FrameField make_field(Dims3 dims, const Bbox& bbox, int channels, float density_value,
                      float feature_value, int frame_index) {
  FrameField f;
  f.sigma = DensityGrid::filled(dims, bbox, density_value);
  f.planes.bbox = bbox;
  f.planes.channels = channels;
  for (int s = 0; s < 3; ++s) {
    const auto [a, b] = kPlaneAxes[s];
    f.planes.planes[s] =
        make_plane(kPlaneScale * dims[a], kPlaneScale * dims[b], channels, feature_value);
  }
  f.frame_index = frame_index;
  return f;
}

FrameField zeros_like(const FrameField& f) {
  FrameField z = f;
  for (auto t : z.tensors()) std::fill(t.begin(), t.end(), 0.f);
  return z;
}

bool same_shape(const FrameField& a, const FrameField& b) {
  if (a.sigma.dims != b.sigma.dims || a.channels() != b.channels()) return false;
  for (int s = 0; s < 3; ++s) {
    const FeaturePlane& pa = a.planes.planes[s];
    const FeaturePlane& pb = b.planes.planes[s];
    if (pa.rows != pb.rows || pa.cols != pb.cols || pa.channels != pb.channels) return false;
  }
  return true;
}

OccupancyGrid OccupancyGrid::filled(Dims3 dims, const Bbox& bbox, bool value) {
  OccupancyGrid o;
  o.dims = dims;
  o.bbox = bbox;
  o.bits.assign(volume(dims), value ? 1 : 0);
  return o;
}

bool OccupancyGrid::occupied(Vec3 x) const {
  int idx[3];
  for (int a = 0; a < 3; ++a) {
    double u = (x[a] - bbox.min[a]) / (bbox.max[a] - bbox.min[a]);
    if (!(u >= -kBoundsTol && u <= 1 + kBoundsTol)) throw OutOfBounds("point outside bounding box");
    u = std::clamp(u, 0.0, 1.0) * (dims[a] - 1);
    idx[a] = static_cast<int>(u + 0.5);
  }
  return at(idx[0], idx[1], idx[2]);
}

std::size_t OccupancyGrid::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

TrilinearStencil density_stencil(const DensityGrid& g, Vec3 x) {
  const AxisCoord cx = axis_coord(x.x, g.bbox.min.x, g.bbox.max.x, g.dims[0]);
  const AxisCoord cy = axis_coord(x.y, g.bbox.min.y, g.bbox.max.y, g.dims[1]);
  const AxisCoord cz = axis_coord(x.z, g.bbox.min.z, g.bbox.max.z, g.dims[2]);
  TrilinearStencil s;
  const std::uint32_t sy = static_cast<std::uint32_t>(g.dims[2]);
  const std::uint32_t sx = static_cast<std::uint32_t>(g.dims[1]) * sy;
  const std::uint32_t base = static_cast<std::uint32_t>(g.index(cx.i0, cy.i0, cz.i0));
  const float wx[2] = {1 - cx.frac, cx.frac};
  const float wy[2] = {1 - cy.frac, cy.frac};
  const float wz[2] = {1 - cz.frac, cz.frac};
  int n = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c, ++n) {
        s.index[n] = base + a * sx + b * sy + c;
        s.weight[n] = wx[a] * wy[b] * wz[c];
      }
  return s;
}

BilinearStencil plane_stencil(const TriPlane& p, int plane, Vec3 x) {
  const FeaturePlane& fp = p.planes[plane];
  const auto [ax, bx] = kPlaneAxes[plane];
  const AxisCoord ca = axis_coord(x[ax], p.bbox.min[ax], p.bbox.max[ax], fp.rows);
  const AxisCoord cb = axis_coord(x[bx], p.bbox.min[bx], p.bbox.max[bx], fp.cols);
  BilinearStencil s;
  const std::uint32_t row = static_cast<std::uint32_t>(fp.cols * fp.channels);
  const std::uint32_t col = static_cast<std::uint32_t>(fp.channels);
  const std::uint32_t base = static_cast<std::uint32_t>(fp.offset(ca.i0, cb.i0));
  s.offset = {base, base + col, base + row, base + row + col};
  s.weight = {(1 - ca.frac) * (1 - cb.frac), (1 - ca.frac) * cb.frac, ca.frac * (1 - cb.frac),
              ca.frac * cb.frac};
  return s;
}

float sample_density(const DensityGrid& g, Vec3 x) {
  return gather_density(g, density_stencil(g, x));
}

void gather_features(const TriPlane& p, const std::array<BilinearStencil, 3>& s,
                     std::span<float> out) {
  const int h = p.channels;
  for (int plane = 0; plane < 3; ++plane) {
    const float* v = p.planes[plane].values.data();
    const BilinearStencil& st = s[plane];
    float* dst = out.data() + plane * h;
    for (int c = 0; c < h; ++c) {
      dst[c] = st.weight[0] * v[st.offset[0] + c] + st.weight[1] * v[st.offset[1] + c] +
               st.weight[2] * v[st.offset[2] + c] + st.weight[3] * v[st.offset[3] + c];
    }
  }
}

void sample_features(const TriPlane& p, Vec3 x, std::span<float> out) {
  if (out.size() != static_cast<std::size_t>(p.feature_dim()))
    throw InvalidArgument("sample_features: output size must be 3h");
  const std::array<BilinearStencil, 3> s{plane_stencil(p, 0, x), plane_stencil(p, 1, x),
                                         plane_stencil(p, 2, x)};
  gather_features(p, s, out);
}

std::vector<float> sample_features(const TriPlane& p, Vec3 x) {
  std::vector<float> out(p.feature_dim());
  sample_features(p, x, out);
  return out;
}

void scatter_stencils(const TrilinearStencil& ds, const std::array<BilinearStencil, 3>& ps,
                      float d_sigma, std::span<const float> d_feat, FrameField& accum) {
  if (d_sigma != 0) {
    float* g = accum.sigma.values.data();
    for (int i = 0; i < 8; ++i) g[ds.index[i]] += d_sigma * ds.weight[i];
  }
  const int h = accum.planes.channels;
  for (int plane = 0; plane < 3; ++plane) {
    float* g = accum.planes.planes[plane].values.data();
    const BilinearStencil& st = ps[plane];
    const float* src = d_feat.data() + plane * h;
    for (int k = 0; k < 4; ++k) {
      const float w = st.weight[k];
      if (w == 0) continue;
      float* dst = g + st.offset[k];
      for (int c = 0; c < h; ++c) dst[c] += w * src[c];
    }
  }
}

void scatter_gradients(const FrameField& field, Vec3 x, float d_sigma,
                       std::span<const float> d_feat, FrameField& accum) {
  if (!same_shape(field, accum)) throw InvalidArgument("scatter_gradients: shape mismatch");
  if (d_feat.size() != static_cast<std::size_t>(field.planes.feature_dim()))
    throw InvalidArgument("scatter_gradients: d_feat must have 3h entries");
  const TrilinearStencil ds = density_stencil(field.sigma, x);
  const std::array<BilinearStencil, 3> ps{plane_stencil(field.planes, 0, x),
                                          plane_stencil(field.planes, 1, x),
                                          plane_stencil(field.planes, 2, x)};
  scatter_stencils(ds, ps, d_sigma, d_feat, accum);
}

OccupancyGrid update_occupancy(const DensityGrid& g, double lambda_th) {
  const Dims3& d = g.dims;
  std::vector<float> a(g.values.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<float>(sigmoid(g.values[i]));
  std::vector<float> b(a.size());
  const std::size_t stride[3] = {static_cast<std::size_t>(d[1]) * d[2],
                                 static_cast<std::size_t>(d[2]), 1};
  // Box max is separable: one clipped 3-tap pass per axis.
  for (int axis = 0; axis < 3; ++axis) {
    for (int ix = 0; ix < d[0]; ++ix)
      for (int iy = 0; iy < d[1]; ++iy)
        for (int iz = 0; iz < d[2]; ++iz) {
          const int coord = axis == 0 ? ix : (axis == 1 ? iy : iz);
          const std::size_t i = ix * stride[0] + iy * stride[1] + iz;
          float m = a[i];
          if (coord > 0) m = std::max(m, a[i - stride[axis]]);
          if (coord < d[axis] - 1) m = std::max(m, a[i + stride[axis]]);
          b[i] = m;
        }
    std::swap(a, b);
  }
  OccupancyGrid o;
  o.dims = d;
  o.bbox = g.bbox;
  o.bits.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) o.bits[i] = a[i] > lambda_th ? 1 : 0;
  return o;
}

DensityGrid resample_grid(const DensityGrid& g, Dims3 new_dims) {
  check_dims(new_dims);
  DensityGrid out = DensityGrid::filled(new_dims, g.bbox, 0.f);
  if (new_dims == g.dims) {
    out.values = g.values;
    return out;
  }
  std::vector<AxisCoord> coords[3];
  for (int a = 0; a < 3; ++a) {
    coords[a].resize(new_dims[a]);
    for (int i = 0; i < new_dims[a]; ++i) {
      const double u = static_cast<double>(i) * (g.dims[a] - 1) / (new_dims[a] - 1);
      int i0 = std::min(static_cast<int>(u), g.dims[a] - 2);
      coords[a][i] = {i0, static_cast<float>(u - i0)};
    }
  }
  for (int ix = 0; ix < new_dims[0]; ++ix)
    for (int iy = 0; iy < new_dims[1]; ++iy)
      for (int iz = 0; iz < new_dims[2]; ++iz) {
        const AxisCoord cx = coords[0][ix], cy = coords[1][iy], cz = coords[2][iz];
        double v = 0;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) {
              const double w = (a ? cx.frac : 1 - cx.frac) * (b ? cy.frac : 1 - cy.frac) *
                               (c ? cz.frac : 1 - cz.frac);
              if (w != 0) v += w * g.at(cx.i0 + a, cy.i0 + b, cz.i0 + c);
            }
        out.values[out.index(ix, iy, iz)] = static_cast<float>(v);
      }
  return out;
}

FeaturePlane resample_plane(const FeaturePlane& p, int rows, int cols) {
  if (rows < 2 || cols < 2) throw InvalidArgument("plane dims must be >= 2");
  if (rows == p.rows && cols == p.cols) return p;
  FeaturePlane out = make_plane(rows, cols, p.channels, 0.f);
  auto coord = [](int i, int n_old, int n_new) {
    const double u = static_cast<double>(i) * (n_old - 1) / (n_new - 1);
    const int i0 = std::min(static_cast<int>(u), n_old - 2);
    return AxisCoord{i0, static_cast<float>(u - i0)};
  };
  for (int a = 0; a < rows; ++a) {
    const AxisCoord ca = coord(a, p.rows, rows);
    for (int b = 0; b < cols; ++b) {
      const AxisCoord cb = coord(b, p.cols, cols);
      const double w[4] = {(1.0 - ca.frac) * (1.0 - cb.frac), (1.0 - ca.frac) * cb.frac,
                           ca.frac * (1.0 - cb.frac), static_cast<double>(ca.frac) * cb.frac};
      const float* src[4] = {&p.values[p.offset(ca.i0, cb.i0)],
                             &p.values[p.offset(ca.i0, cb.i0 + 1)],
                             &p.values[p.offset(ca.i0 + 1, cb.i0)],
                             &p.values[p.offset(ca.i0 + 1, cb.i0 + 1)]};
      float* dst = &out.values[out.offset(a, b)];
      for (int c = 0; c < p.channels; ++c) {
        double v = 0;
        for (int k = 0; k < 4; ++k)
          if (w[k] != 0) v += w[k] * src[k][c];
        dst[c] = static_cast<float>(v);
      }
    }
  }
  return out;
}

FrameField rescale(const FrameField& field, Dims3 new_dims) {
  check_dims(new_dims);
  FrameField out;
  out.frame_index = field.frame_index;
  out.sigma = resample_grid(field.sigma, new_dims);
  out.planes.bbox = field.planes.bbox;
  out.planes.channels = field.planes.channels;
  for (int s = 0; s < 3; ++s) {
    const auto [a, b] = kPlaneAxes[s];
    out.planes.planes[s] = resample_plane(field.planes.planes[s], kPlaneScale * new_dims[a],
                                          kPlaneScale * new_dims[b]);
  }
  return out;
}

std::uint64_t checksum_bytes(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t checksum(const FrameField& f) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto t : f.tensors()) h = checksum_bytes(t.data(), t.size_bytes(), h);
  return h;
}

}  // namespace fvv
