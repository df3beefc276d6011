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

#include <gtest/gtest.h>

#include <cmath>

#include "fvv/scene.h"
#include "test_util.h"

namespace fvv {
namespace {

using testing::random_field;
using testing::unit_box;

Camera ring_camera(int index = 0, int size = 16) {
  RingSpec spec;
  spec.n_views = 6;
  spec.radius = 3;
  spec.height = 0.7;
  spec.width = spec.height_px = size;
  spec.focal = size * 1.2;
  return build_camera_ring(spec)[index];
}

bool on_face(Vec3 p, const Bbox& b, double tol) {
  bool inside = true, face = false;
  for (int a = 0; a < 3; ++a) {
    inside = inside && p[a] >= b.min[a] - tol && p[a] <= b.max[a] + tol;
    face = face || std::abs(p[a] - b.min[a]) < tol || std::abs(p[a] - b.max[a]) < tol;
  }
  return inside && face;
}

TEST(GenerateRay, PrincipalPointAlongForward) {
  const Camera cam = ring_camera(2);
  const Ray r = generate_ray(cam, cam.cx, cam.cy, unit_box());
  EXPECT_LT(norm(r.dir - cam.forward()), 1e-6);
  EXPECT_TRUE(r.hit);
}

TEST(GenerateRay, LookingAwayMisses) {
  Camera cam = ring_camera(0);
  cam.rotation = look_at(cam.translation, cam.translation * 2.0);
  EXPECT_FALSE(generate_ray(cam, cam.cx, cam.cy, unit_box()).hit);
}

TEST(GenerateRay, EndpointsOnBoxFaces) {
  const Bbox box{{-1, -0.5, -0.8}, {0.9, 1.2, 1.1}};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 16);
  int hits = 0;
  for (int n = 0; n < 500; ++n) {
    const Camera cam = ring_camera(n % 6);
    const Ray r = generate_ray(cam, u(rng), u(rng), box);
    if (!r.hit) continue;
    ++hits;
    EXPECT_NEAR(norm(r.dir), 1.0, 1e-12);
    EXPECT_LT(r.t_near, r.t_far);
    EXPECT_TRUE(on_face(r.origin + r.dir * r.t_near, box, 1e-5));
    EXPECT_TRUE(on_face(r.origin + r.dir * r.t_far, box, 1e-5));
  }
  EXPECT_GT(hits, 100);
}

TEST(GenerateRay, PixelOutsideImageThrows) {
  const Camera cam = ring_camera();
  EXPECT_THROW(generate_ray(cam, -0.1, 3, unit_box()), InvalidArgument);
  EXPECT_THROW(generate_ray(cam, 3, 16.5, unit_box()), InvalidArgument);
}

TEST(SampleCount, MidpointsStayInside) {
  Ray r;
  r.hit = true;
  r.t_near = 1;
  r.t_far = 1.3;
  EXPECT_EQ(sample_count(r, 0.1), 3);
  r.t_far = 1.34;
  EXPECT_EQ(sample_count(r, 0.1), 3);
  r.t_far = 1.36;
  EXPECT_EQ(sample_count(r, 0.1), 4);
  r.hit = false;
  EXPECT_EQ(sample_count(r, 0.1), 0);
}

struct Scene {
  FrameField field;
  OccupancyGrid occ;
  DecoderMLP mlp;
};

Scene random_scene(std::uint64_t seed, float dlo = -3, float dhi = 2) {
  Scene s{random_field({6, 6, 6}, unit_box(), 2, seed, dlo, dhi), {}, make_decoder(6, 2, 16, seed)};
  s.occ = OccupancyGrid::filled({6, 6, 6}, unit_box(), true);
  return s;
}

TEST(RenderRay, EmptyOccupancyGivesBackground) {
  Scene s = random_scene(2);
  s.occ = OccupancyGrid::filled({6, 6, 6}, unit_box(), false);
  RenderOptions o;
  o.step = 0.05;
  o.background = {0.1, 0.6, 0.9};
  const Ray ray = generate_ray(ring_camera(), 8, 8, unit_box());
  const RayRender rr = render_ray(ray, s.field, s.occ, s.mlp, o);
  EXPECT_EQ(rr.march.acc, 0.0);
  for (float f : rr.march.f_tilde) EXPECT_EQ(f, 0.f);
  EXPECT_EQ(rr.rgb, o.background);
  EXPECT_TRUE(rr.march.samples.empty());
}

TEST(RenderRay, OpaqueFirstSampleTakesAllWeight) {
  Scene s = random_scene(3);
  for (float& v : s.field.sigma.values) v = 80.f;  // softplus(80) * step >> 40
  RenderOptions o;
  o.step = 0.5;
  const Ray ray = clip_ray({-3, 0.05, 0.02}, {1, 0, 0}, unit_box());
  const RayRender rr = render_ray(ray, s.field, s.occ, s.mlp, o);
  ASSERT_FALSE(rr.march.samples.empty());
  EXPECT_DOUBLE_EQ(rr.march.acc, 1.0);
  const auto f1 = sample_features(s.field.planes, rr.march.samples[0].position);
  for (std::size_t c = 0; c < f1.size(); ++c) EXPECT_FLOAT_EQ(rr.march.f_tilde[c], f1[c]);
  EXPECT_TRUE(rr.march.terminated);
  EXPECT_EQ(rr.march.samples.size(), 1u);
}

TEST(RenderRay, WeightInvariants) {
  Scene s = random_scene(4, -2, 3);
  RenderOptions o;
  o.step = 0.03;
  o.stop_transmittance = 0;
  std::mt19937_64 rng(5);
  for (int n = 0; n < 50; ++n) {
    const Vec3 d = testing::random_unit(rng);
    const Ray ray = clip_ray(d * -3.0, d, unit_box());
    const RayRender rr = render_ray(ray, s.field, s.occ, s.mlp, o);
    double sum = 0, last_t = 1;
    for (const RaySample& k : rr.march.samples) {
      const double w = k.transmittance * k.alpha;
      EXPECT_GE(w, 0);
      EXPECT_LE(w, 1);
      EXPECT_LE(k.transmittance, last_t);
      last_t = k.transmittance;
      sum += w;
    }
    EXPECT_LE(sum, 1 + 1e-9);
    EXPECT_NEAR(sum, rr.march.acc, 1e-6);
  }
}

TEST(RenderRay, MatchesDirectQuadrature) {
  Scene s = random_scene(6);
  RenderOptions o;
  o.step = 0.04;
  o.stop_transmittance = 0;
  o.background = {0.3, 0.3, 0.3};
  const Ray ray = clip_ray({-3, 0.1, -0.2}, normalized({1, 0.05, 0.1}), unit_box());
  const RayRender rr = render_ray(ray, s.field, s.occ, s.mlp, o);
  // Independent loop straight from the emission-absorption sum.
  double T = 1, acc = 0;
  std::vector<double> f(6, 0.0);
  const int n = sample_count(ray, o.step);
  for (int k = 0; k < n; ++k) {
    const Vec3 x = ray.origin + ray.dir * (ray.t_near + (k + 0.5) * o.step);
    const double sigma = std::log1p(std::exp(double(sample_density(s.field.sigma, x))));
    const double a = 1 - std::exp(-sigma * o.step);
    const auto fk = sample_features(s.field.planes, x);
    for (int c = 0; c < 6; ++c) f[c] += T * a * fk[c];
    acc += T * a;
    T *= 1 - a;
  }
  std::vector<float> ff(f.begin(), f.end());
  const Vec3 dec = mlp_forward(s.mlp, ff, posenc(ray.dir, 2));
  const Vec3 want = dec * acc + o.background * (1 - acc);
  EXPECT_NEAR(rr.rgb.x, want.x, 1e-5);
  EXPECT_NEAR(rr.rgb.y, want.y, 1e-5);
  EXPECT_NEAR(rr.rgb.z, want.z, 1e-5);
  EXPECT_NEAR(rr.march.acc, acc, 1e-6);
}

TEST(RenderRay, SkippedSamplesContributeNothing) {
  Scene s = random_scene(7);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      for (int k = 0; k < 6; ++k) s.occ.bits[s.field.sigma.index(i, j, k)] = i < 3;
  RenderOptions o;
  o.step = 0.05;
  Scene t = s;
  // Change the field where nothing is sampled: nearest lattice index >= 4.
  for (int i = 4; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      for (int k = 0; k < 6; ++k) t.field.sigma.values[t.field.sigma.index(i, j, k)] += 5;
  std::mt19937_64 rng(8);
  for (int n = 0; n < 30; ++n) {
    const Vec3 d = testing::random_unit(rng);
    const Ray ray = clip_ray(d * -3.0, d, unit_box());
    const RayRender a = render_ray(ray, s.field, s.occ, s.mlp, o);
    const RayRender b = render_ray(ray, t.field, t.occ, t.mlp, o);
    EXPECT_EQ(a.rgb, b.rgb);
    for (const RaySample& k : a.march.samples) EXPECT_TRUE(s.occ.occupied(k.position));
    if (!a.has_record) continue;
    FrameField g = zeros_like(s.field);
    DecoderMLP gm = zeros_like(s.mlp);
    backward_ray(a, {1, 1, 1}, s.field, s.mlp, o, g, gm);
    for (int i = 5; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        for (int k = 0; k < 6; ++k) EXPECT_EQ(g.sigma.values[g.sigma.index(i, j, k)], 0.f);
  }
}

TEST(RenderRay, ChunkedMarchMatchesSinglePass) {
  Scene s = random_scene(9);
  RenderOptions o;
  o.step = 0.02;
  const Ray ray = clip_ray({-3, 0.2, 0.1}, normalized({1, -0.1, 0.05}), unit_box());
  const MarchResult whole = march_ray(ray, s.field, s.occ, o);
  MarchResult parts;
  parts.reset(6);
  const int n = sample_count(ray, o.step);
  for (int k = 0; k < n; k += 7) march_range(ray, s.field, s.occ, o, k, std::min(n, k + 7), parts);
  EXPECT_NEAR(parts.acc, whole.acc, 1e-6);
  for (int c = 0; c < 6; ++c) EXPECT_NEAR(parts.f_tilde[c], whole.f_tilde[c], 1e-6);
}

TEST(RenderRay, EarlyTerminationThreshold) {
  Scene s = random_scene(10, 4, 6);
  RenderOptions o;
  o.step = 0.05;
  const Ray ray = clip_ray({-3, 0, 0}, {1, 0, 0}, unit_box());
  const MarchResult m = march_ray(ray, s.field, s.occ, o);
  EXPECT_TRUE(m.terminated);
  EXPECT_LT(m.transmittance, o.stop_transmittance);
  EXPECT_LT(static_cast<int>(m.samples.size()), sample_count(ray, o.step));
  o.stop_transmittance = 0;
  EXPECT_EQ(static_cast<int>(march_ray(ray, s.field, s.occ, o).samples.size()),
            sample_count(ray, o.step));
}

TEST(RenderImage, EmptyFieldIsUniformBackground) {
  Scene s = random_scene(11);
  for (float& v : s.field.sigma.values) v = -30.f;
  s.occ = update_occupancy(s.field.sigma, 1e-4);
  RenderOptions o;
  o.background = {0.25, 0.5, 0.75};
  const Image img = render_image(ring_camera(1), s.field, s.occ, s.mlp, o);
  for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
    EXPECT_FLOAT_EQ(img.rgb[i], 0.25f);
    EXPECT_FLOAT_EQ(img.rgb[i + 1], 0.5f);
  }
}

TEST(RenderImage, DeterministicAndThreadInvariant) {
  Scene s = random_scene(12);
  RenderOptions o;
  o.step = 0.04;
  const Camera cam = ring_camera(3, 100);
  const Image a = render_image(cam, s.field, s.occ, s.mlp, o);
  const Image b = render_image(cam, s.field, s.occ, s.mlp, o);
  EXPECT_EQ(a, b);
  o.threads = 3;
  EXPECT_EQ(render_image(cam, s.field, s.occ, s.mlp, o), a);
}

TEST(RenderImage, AgreesWithRenderRay) {
  Scene s = random_scene(13);
  RenderOptions o;
  o.step = 0.05;
  const Camera cam = ring_camera(4, 12);
  const Image img = render_image(cam, s.field, s.occ, s.mlp, o);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) {
      const RayRender rr =
          render_ray(generate_ray(cam, x + 0.5, y + 0.5, unit_box()), s.field, s.occ, s.mlp, o);
      EXPECT_EQ(img.pixel(x, y)[0], static_cast<float>(rr.rgb.x));
      EXPECT_EQ(img.pixel(x, y)[2], static_cast<float>(rr.rgb.z));
    }
}

TEST(RenderImage, OneDecoderEvaluationPerPixel) {
  Scene s = random_scene(14);
  RenderOptions o;
  o.step = 0.02;
  const Camera cam = ring_camera(0, 40);
  reset_mlp_evaluations();
  render_image(cam, s.field, s.occ, s.mlp, o);
  EXPECT_EQ(mlp_evaluations(), 1600u);
}

TEST(BackwardRay, ZeroUpstreamGivesZeroGradients) {
  Scene s = random_scene(15);
  RenderOptions o;
  o.step = 0.05;
  const RayRender rr =
      render_ray(clip_ray({-3, 0, 0.1}, {1, 0, 0}, unit_box()), s.field, s.occ, s.mlp, o);
  FrameField g = zeros_like(s.field);
  DecoderMLP gm = zeros_like(s.mlp);
  backward_ray(rr, {0, 0, 0}, s.field, s.mlp, o, g, gm);
  for (auto t : g.tensors())
    for (float v : t) EXPECT_EQ(v, 0.f);
  for (auto t : gm.tensors())
    for (float v : t) EXPECT_EQ(v, 0.f);
}

TEST(BackwardRay, MissingRecordIsInvalidState) {
  Scene s = random_scene(16);
  RayRender rr;
  FrameField g = zeros_like(s.field);
  DecoderMLP gm = zeros_like(s.mlp);
  EXPECT_THROW(backward_ray(rr, {1, 0, 0}, s.field, s.mlp, {}, g, gm), InvalidState);
}

// Loss over a handful of rays; finite differences perturb the stored floats.
struct ChainProbe {
  Scene s;
  RenderOptions o;
  std::vector<Ray> rays;
  Vec3 c{0.7, -0.4, 0.9};

  double loss() const {
    double l = 0;
    for (const Ray& r : rays) l += dot(render_ray(r, s.field, s.occ, s.mlp, o).rgb, c);
    return l;
  }
  void grads(FrameField& g, DecoderMLP& gm) const {
    for (const Ray& r : rays)
      backward_ray(render_ray(r, s.field, s.occ, s.mlp, o), c, s.field, s.mlp, o, g, gm);
  }
};

ChainProbe make_probe() {
  ChainProbe p{random_scene(17, -1.5, 1.5), {}, {}};
  p.o.step = 0.05;
  p.o.stop_transmittance = 0;
  std::mt19937_64 rng(18);
  for (int n = 0; n < 6; ++n) {
    const Vec3 d = testing::random_unit(rng);
    p.rays.push_back(clip_ray(d * -3.0 + Vec3{0.05, 0.02, -0.03}, d, unit_box()));
  }
  return p;
}

double central_difference(ChainProbe& p, float& value, float h) {
  const float keep = value;
  const float up = keep + h, dn = keep - h;
  value = up;
  const double lu = p.loss();
  value = dn;
  const double ld = p.loss();
  value = keep;
  return (lu - ld) / (double(up) - dn);
}

TEST(BackwardRay, FullChainFiniteDifferences) {
  ChainProbe p = make_probe();
  FrameField g = zeros_like(p.s.field);
  DecoderMLP gm = zeros_like(p.s.mlp);
  p.grads(g, gm);
  std::mt19937_64 rng(19);
  auto pick_large = [&](std::span<const float> grad) {
    for (int tries = 0; tries < 10000; ++tries) {
      const std::size_t i = rng() % grad.size();
      if (std::abs(grad[i]) > 1e-3) return i;
    }
    return std::size_t{0};
  };
  for (int t = 0; t < 4; ++t) {
    auto params = p.s.field.tensors()[t];
    auto grad = g.tensors()[t];
    for (int probe = 0; probe < 5; ++probe) {
      const std::size_t i = pick_large(grad);
      const double fd = central_difference(p, params[i], 1e-3f);
      EXPECT_LT(std::abs(fd - grad[i]) / std::max(std::abs(fd), 1e-6), 1e-2) << "tensor " << t;
    }
  }
  for (int t = 0; t < 6; ++t) {
    auto params = p.s.mlp.tensors()[t];
    auto grad = gm.tensors()[t];
    for (int probe = 0; probe < 5; ++probe) {
      const std::size_t i = pick_large(grad);
      const double fd = central_difference(p, params[i], 1e-3f);
      EXPECT_LT(std::abs(fd - grad[i]) / std::max(std::abs(fd), 1e-6), 1e-3) << "mlp tensor " << t;
    }
  }
}

}  // namespace
}  // namespace fvv
