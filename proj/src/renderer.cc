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

#include "fvv/renderer.h"

#include <algorithm>
#include <limits>
#include <thread>

namespace fvv {

Ray clip_ray(Vec3 origin, Vec3 dir, const Bbox& box) {
  Ray r;
  r.origin = origin;
  r.dir = dir;
  double t0 = 0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0) {
      if (origin[a] < box.min[a] || origin[a] > box.max[a]) return r;
      continue;
    }
    const double inv = 1 / dir[a];
    double ta = (box.min[a] - origin[a]) * inv;
    double tb = (box.max[a] - origin[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 > t0) {
    r.t_near = t0;
    r.t_far = t1;
    r.hit = true;
  }
  return r;
}

Ray generate_ray(const Camera& cam, double px, double py, const Bbox& box) {
  if (!(px >= 0 && px <= cam.width && py >= 0 && py <= cam.height))
    throw InvalidArgument("generate_ray: pixel outside image");
  const Vec3 d_cam{(px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0};
  return clip_ray(cam.translation, normalized(cam.rotation * d_cam), box);
}

int sample_count(const Ray& ray, double step) {
  if (!ray.hit) return 0;
  const double n = (ray.t_far - ray.t_near) / step - 0.5;
  if (n < 0) return 0;
  int k = static_cast<int>(std::floor(n)) + 1;
  // Guard against rounding: the last midpoint must stay strictly inside.
  while (k > 0 && ray.t_near + (k - 0.5) * step >= ray.t_far) --k;
  return k;
}

void MarchResult::reset(int feature_dim) {
  f_tilde.assign(feature_dim, 0.f);
  acc = 0;
  transmittance = 1;
  samples.clear();
  terminated = false;
}

void march_range(const Ray& ray, const FrameField& field, const OccupancyGrid& occ,
                 const RenderOptions& opts, int k_begin, int k_end, MarchResult& state) {
  if (!(opts.step > 0)) throw InvalidArgument("render step must be > 0");
  const int fdim = field.planes.feature_dim();
  if (state.f_tilde.size() != static_cast<std::size_t>(fdim)) state.reset(fdim);
  if (!ray.hit) return;
  std::vector<float> feat(fdim);
  // Double accumulator so chunked and single-pass marching agree.
  std::vector<double> f_acc(state.f_tilde.begin(), state.f_tilde.end());
  for (int k = k_begin; k < k_end && !state.terminated; ++k) {
    const Vec3 x = ray.origin + ray.dir * (ray.t_near + (k + 0.5) * opts.step);
    if (!occ.occupied(x)) continue;
    const TrilinearStencil ds = density_stencil(field.sigma, x);
    const float logit = gather_density(field.sigma, ds);
    const double alpha =
        1 - std::exp(-density_activation(logit, opts.density_shift) * opts.step);
    const double w = state.transmittance * alpha;
    if (w > 0) {
      const std::array<BilinearStencil, 3> ps{plane_stencil(field.planes, 0, x),
                                              plane_stencil(field.planes, 1, x),
                                              plane_stencil(field.planes, 2, x)};
      gather_features(field.planes, ps, feat);
      for (int c = 0; c < fdim; ++c) f_acc[c] += w * feat[c];
    }
    state.samples.push_back({x, logit, static_cast<float>(alpha), state.transmittance});
    state.acc += w;
    state.transmittance *= 1 - alpha;
    if (state.transmittance < opts.stop_transmittance) state.terminated = true;
  }
  for (int c = 0; c < fdim; ++c) state.f_tilde[c] = static_cast<float>(f_acc[c]);
}

MarchResult march_ray(const Ray& ray, const FrameField& field, const OccupancyGrid& occ,
                      const RenderOptions& opts) {
  MarchResult m;
  m.reset(field.planes.feature_dim());
  march_range(ray, field, occ, opts, 0, sample_count(ray, opts.step), m);
  return m;
}

void backward_march(const MarchResult& march, std::span<const double> d_f_tilde, double d_acc,
                    const FrameField& field, const RenderOptions& opts, FrameField& field_grad) {
  const int fdim = field.planes.feature_dim();
  if (d_f_tilde.size() != static_cast<std::size_t>(fdim))
    throw InvalidArgument("backward_march: d_f_tilde must have 3h entries");
  std::vector<float> feat(fdim);
  std::vector<float> d_feat(fdim);
  // Walk back to front; `rest` = sum_{j>k} g_j w_j / T_{k+1}.
  double rest = 0;
  for (auto it = march.samples.rbegin(); it != march.samples.rend(); ++it) {
    const RaySample& s = *it;
    const double alpha = s.alpha;
    const double w = s.transmittance * alpha;
    const TrilinearStencil ds = density_stencil(field.sigma, s.position);
    const std::array<BilinearStencil, 3> ps{plane_stencil(field.planes, 0, s.position),
                                            plane_stencil(field.planes, 1, s.position),
                                            plane_stencil(field.planes, 2, s.position)};
    gather_features(field.planes, ps, feat);
    double g = d_acc;
    for (int c = 0; c < fdim; ++c) g += d_f_tilde[c] * feat[c];
    const double d_alpha = s.transmittance * (g - rest);
    rest = g * alpha + (1 - alpha) * rest;
    const double z = s.logit + opts.density_shift;
    const double d_logit = d_alpha * (1 - alpha) * opts.step * sigmoid(z);
    for (int c = 0; c < fdim; ++c) d_feat[c] = static_cast<float>(w * d_f_tilde[c]);
    scatter_stencils(ds, ps, static_cast<float>(d_logit), d_feat, field_grad);
  }
}

RayRender render_ray(const Ray& ray, const FrameField& field, const OccupancyGrid& occ,
                     const DecoderMLP& mlp, const RenderOptions& opts) {
  RayRender rr;
  rr.ray = ray;
  if (!ray.hit) {
    rr.march.reset(field.planes.feature_dim());
    rr.rgb = opts.background;
    return rr;
  }
  rr.march = march_ray(ray, field, occ, opts);
  rr.encoding = posenc(ray.dir, mlp.posenc_levels);
  rr.decoded = mlp_forward(mlp, rr.march.f_tilde, rr.encoding);
  const double acc = rr.march.acc;
  rr.rgb = rr.decoded * acc + opts.background * (1 - acc);
  rr.has_record = true;
  return rr;
}

void backward_ray(const RayRender& rr, Vec3 d_rgb, const FrameField& field, const DecoderMLP& mlp,
                  const RenderOptions& opts, FrameField& field_grad, DecoderMLP& mlp_grad) {
  if (!rr.has_record) throw InvalidState("backward_ray: ray carries no sample record");
  if (!same_shape(field, field_grad)) throw InvalidArgument("backward_ray: gradient shape mismatch");
  const double acc = rr.march.acc;
  const double d_acc = dot(d_rgb, rr.decoded - opts.background);
  const MlpInputGrad g = mlp_backward(mlp, rr.march.f_tilde, rr.encoding, d_rgb * acc, mlp_grad);
  backward_march(rr.march, g.d_f_tilde, d_acc, field, opts, field_grad);
}

Image render_image(const Camera& cam, const FrameField& field, const OccupancyGrid& occ,
                   const DecoderMLP& mlp, const RenderOptions& opts) {
  const int w = cam.width, h = cam.height;
  const int fdim = field.planes.feature_dim();
  const int edim = posenc_dim(mlp.posenc_levels);
  if (mlp.feature_dim != fdim) throw InvalidArgument("render_image: decoder/field mismatch");
  Image img(w, h);
  const std::size_t n_pix = static_cast<std::size_t>(w) * h;
  constexpr std::size_t kChunk = 4096;
  auto work = [&](std::size_t chunk_begin, std::size_t chunk_end) {
    MlpBatch batch;
    std::vector<float> enc(edim);
    std::vector<double> acc;
    for (std::size_t c0 = chunk_begin; c0 < chunk_end; c0 += kChunk) {
      const std::size_t c1 = std::min(chunk_end, c0 + kChunk);
      const int b = static_cast<int>(c1 - c0);
      batch.resize(mlp, b);
      acc.assign(b, 0.0);
      for (std::size_t p = c0; p < c1; ++p) {
        const int k = static_cast<int>(p - c0);
        const int px = static_cast<int>(p % w), py = static_cast<int>(p / w);
        const Ray ray = generate_ray(cam, px + 0.5, py + 0.5, field.sigma.bbox);
        posenc(ray.dir, mlp.posenc_levels, enc);
        if (ray.hit) {
          const MarchResult m = march_ray(ray, field, occ, opts);
          for (int c = 0; c < fdim; ++c) batch.input[static_cast<std::size_t>(c) * b + k] = m.f_tilde[c];
          acc[k] = m.acc;
        }
        for (int c = 0; c < edim; ++c)
          batch.input[static_cast<std::size_t>(fdim + c) * b + k] = enc[c];
      }
      mlp_forward_batch(mlp, batch);
      for (std::size_t p = c0; p < c1; ++p) {
        const int k = static_cast<int>(p - c0);
        float* dst = img.rgb.data() + p * 3;
        for (int c = 0; c < 3; ++c) {
          const double v = batch.output[static_cast<std::size_t>(c) * b + k] * acc[k] +
                           opts.background[c] * (1 - acc[k]);
          dst[c] = static_cast<float>(v);
        }
      }
    }
  };
  const int threads = std::max(1, opts.threads);
  if (threads == 1 || n_pix < 2 * kChunk) {
    work(0, n_pix);
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (n_pix + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::size_t b = t * per, e = std::min(n_pix, b + per);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return img;
}

}  // namespace fvv
