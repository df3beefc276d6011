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

#ifndef FVV_RENDERER_H_
#define FVV_RENDERER_H_

#include <span>
#include <vector>

#include "fvv/common.h"
#include "fvv/decoder.h"
#include "fvv/field.h"
#include "fvv/image.h"
#include "fvv/scene.h"

namespace fvv {

// World-space ray clipped to the scene box. `hit` is false when the ray
// misses the box; t_near/t_far are then meaningless.
struct Ray {
  Vec3 origin;
  Vec3 dir{0, 0, 1};
  double t_near = 0;
  double t_far = 0;
  bool hit = false;
};

Ray clip_ray(Vec3 origin, Vec3 dir, const Bbox& box);
// (px, py) are continuous pixel coordinates; pixel centers sit at i + 0.5.
Ray generate_ray(const Camera& cam, double px, double py, const Bbox& box);

struct RenderOptions {
  double step = 1.0 / 47.0;  // world units; half the voxel edge of a 48^3 grid on [-1,1]^3
  Vec3 background{1, 1, 1};
  // Marching stops once transmittance falls below this value (0 disables).
  double stop_transmittance = 1e-4;
  // Added to the logit before softplus.
  double density_shift = 0;
  int threads = 1;
};

// Number of midpoint samples t_near + (k + 1/2) * step inside [t_near, t_far).
int sample_count(const Ray& ray, double step);

inline double density_activation(double logit, double shift) { return softplus(logit + shift); }

struct RaySample {
  Vec3 position;
  float logit = 0;
  float alpha = 0;
  double transmittance = 1;  // before this sample
};

// Running state of deferred accumulation along one ray. Only occupied
// samples are recorded.
struct MarchResult {
  std::vector<float> f_tilde;
  double acc = 0;
  double transmittance = 1;
  std::vector<RaySample> samples;
  bool terminated = false;

  void reset(int feature_dim);
};

// Accumulates samples k in [k_begin, k_end) into `state`. Calling it over
// consecutive chunks is equivalent to one call over the union.
void march_range(const Ray& ray, const FrameField& field, const OccupancyGrid& occ,
                 const RenderOptions& opts, int k_begin, int k_end, MarchResult& state);
MarchResult march_ray(const Ray& ray, const FrameField& field, const OccupancyGrid& occ,
                      const RenderOptions& opts);

// Reverse-mode pass through the alpha/transmittance chain, softplus and the
// interpolation stencils. Adds into field_grad.
void backward_march(const MarchResult& march, std::span<const double> d_f_tilde, double d_acc,
                    const FrameField& field, const RenderOptions& opts, FrameField& field_grad);

struct RayRender {
  Ray ray;
  Vec3 rgb;
  Vec3 decoded;  // decoder output before background compositing
  MarchResult march;
  std::vector<float> encoding;
  bool has_record = false;
};

// Composites decoded * acc + background * (1 - acc).
RayRender render_ray(const Ray& ray, const FrameField& field, const OccupancyGrid& occ,
                     const DecoderMLP& mlp, const RenderOptions& opts);

// Throws InvalidState if `rr` carries no sample record.
void backward_ray(const RayRender& rr, Vec3 d_rgb, const FrameField& field, const DecoderMLP& mlp,
                  const RenderOptions& opts, FrameField& field_grad, DecoderMLP& mlp_grad);

// Deferred shading: the decoder runs exactly once per pixel.
Image render_image(const Camera& cam, const FrameField& field, const OccupancyGrid& occ,
                   const DecoderMLP& mlp, const RenderOptions& opts);

}  // namespace fvv

#endif  // FVV_RENDERER_H_
