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

#include "fvv/trainer.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fvv/scene.h"
#include "test_util.h"

namespace fvv {
namespace {

using A = ScheduleAction;
using testing::random_field;
using testing::unit_box;

TEST(Schedule, ReferenceExamples) {
  const TrainConfig cfg;
  EXPECT_EQ(schedule_action(1000, cfg), make_actions({A::kUpscaleX2, A::kUpdateOccupancy}));
  EXPECT_EQ(schedule_action(7000, cfg), make_actions({A::kDownscaleToBase, A::kUpdateOccupancy}));
  EXPECT_EQ(schedule_action(13000, cfg), make_actions({A::kUpscaleX2, A::kRayFilter}));
  EXPECT_EQ(schedule_action(1, cfg), make_actions({A::kDownscaleToBase}));
  EXPECT_TRUE(schedule_action(1234, cfg).empty());
  EXPECT_EQ(schedule_action(20000, cfg), make_actions({A::kUpdateOccupancy}));
}

TEST(Schedule, PureFunctionOfIteration) {
  const TrainConfig cfg;
  for (int it = 1; it <= cfg.iters_per_group; it += 997)
    EXPECT_EQ(schedule_action(it, cfg), schedule_action(it, cfg));
}

TEST(Schedule, ScaledToFourThousand) {
  const TrainConfig cfg = scale_schedule(TrainConfig{}, 4000);
  EXPECT_EQ(cfg.iters_per_group, 4000);
  EXPECT_EQ(cfg.upscale_pass1, (std::vector<int>{100, 200, 300, 400}));
  EXPECT_EQ(cfg.upscale_pass2, (std::vector<int>{900, 1100, 1300}));
  EXPECT_EQ(cfg.downscale_at, (std::vector<int>{1, 700}));
  EXPECT_EQ(cfg.rayfilter_at, 1300);
  EXPECT_EQ(cfg.occ_every, 100);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_THROW(scale_schedule(TrainConfig{}, 10), InvalidArgument);
}

TEST(Schedule, ConfigValidation) {
  TrainConfig cfg;
  cfg.upscale_pass1 = {3, 2};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = TrainConfig{};
  cfg.group_size = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = TrainConfig{};
  cfg.upscale_pass2 = {3500, 5000};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(Schedule, LevelsDoubleVoxelCount) {
  const Dims3 full{120, 120, 120};
  EXPECT_EQ(dims_at_level(full, 0), full);
  EXPECT_EQ(dims_at_level(full, 3), (Dims3{60, 60, 60}));
  EXPECT_EQ(dims_at_level(full, 4), (Dims3{48, 48, 48}));
  for (int l = 0; l < 5; ++l) {
    const Dims3 a = dims_at_level({96, 64, 80}, l), b = dims_at_level({96, 64, 80}, l + 1);
    const double ratio = double(a[0]) * a[1] * a[2] / (double(b[0]) * b[1] * b[2]);
    EXPECT_NEAR(ratio, 2.0, 0.15);
  }
  EXPECT_EQ(dims_at_level({4, 4, 4}, 20), (Dims3{2, 2, 2}));
  const TrainConfig cfg;
  EXPECT_EQ(downscale_level(cfg, 1), 4);
  EXPECT_EQ(downscale_level(cfg, 7000), 3);
}

TEST(Schedule, FullResolutionAtEndOfEachPass) {
  // Walk the schedule the way the trainer does and track the level.
  const TrainConfig cfg;
  int level = downscale_level(cfg, 1);
  for (int it = 1; it <= cfg.iters_per_group; ++it) {
    const ActionSet a = schedule_action(it, cfg);
    if (a.has(A::kDownscaleToBase)) level = downscale_level(cfg, it);
    if (a.has(A::kUpscaleX2)) --level;
    if (it == 4000 || it == 13000) {
      EXPECT_EQ(level, 0) << it;
    }
    if (it == 7000) {
      EXPECT_EQ(level, 3);
    }
  }
  EXPECT_EQ(level, 0);
  EXPECT_EQ(to_string(make_actions({A::kUpscaleX2, A::kRayFilter})), "{UpscaleX2, RayFilter}");
}

TEST(TrainConfigJson, RoundTrip) {
  TrainConfig cfg = fixture_train_config();
  cfg.seed = 77;
  cfg.views = {0, 2, 5};
  cfg.lambda_intra = 0;
  const TrainConfig back = train_config_from_json(train_config_to_json(cfg));
  EXPECT_EQ(train_config_to_json(back), train_config_to_json(cfg));
  EXPECT_EQ(back.views, cfg.views);
  EXPECT_EQ(back.full_dims, cfg.full_dims);
  EXPECT_THROW(train_config_from_json("{\"group_size\": \"x\"}"), FormatError);
}

TEST(TemporalL1, IdenticalFramesAreZero) {
  const FrameField a = random_field({5, 6, 7}, unit_box(), 3, 1);
  EXPECT_EQ(temporal_l1(a, a, nullptr, nullptr, 1), 0.0);
}

TEST(TemporalL1, ConstantDensityOffset) {
  const FrameField a = random_field({5, 6, 7}, unit_box(), 3, 2);
  FrameField b = a;
  for (float& v : b.sigma.values) v += 0.75f;
  EXPECT_NEAR(temporal_l1(a, b, nullptr, nullptr, 1), 0.75, 1e-6);
}

TEST(TemporalL1, GradientIsScaledSign) {
  const FrameField a = random_field({3, 3, 3}, unit_box(), 2, 3);
  const FrameField b = random_field({3, 3, 3}, unit_box(), 2, 4);
  FrameField ga = zeros_like(a), gb = zeros_like(b);
  temporal_l1(a, b, &ga, &gb, 2.0);
  const std::size_t n = a.sigma.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    const float s = a.sigma.values[i] > b.sigma.values[i] ? 1.f : -1.f;
    EXPECT_FLOAT_EQ(ga.sigma.values[i], 2.f * s / n);
    EXPECT_FLOAT_EQ(gb.sigma.values[i], -2.f * s / n);
  }
  // Perturbing a single plane value moves the loss by the analytic slope.
  FrameField c = a;
  const float h = 1e-3f;
  c.tensors()[1][5] += h;
  const double d = temporal_l1(c, b, nullptr, nullptr, 2.0) - temporal_l1(a, b, nullptr, nullptr, 2.0);
  EXPECT_NEAR(2.0 * d / h, ga.tensors()[1][5], 1e-3);
}

TEST(TemporalL1, ShapeMismatchThrows) {
  EXPECT_THROW(temporal_l1(random_field({3, 3, 3}, unit_box(), 2, 1),
                           random_field({4, 3, 3}, unit_box(), 2, 1), nullptr, nullptr, 1),
               InvalidArgument);
}

TrainConfig tiny_config() {
  TrainConfig cfg = scale_schedule(TrainConfig{}, 80);
  cfg.group_size = 2;
  cfg.batch_rays = 96;
  cfg.full_dims = {10, 10, 10};
  cfg.channels = 3;
  cfg.posenc_levels = 2;
  cfg.mlp_width = 16;
  cfg.render.step = 2.0 / 9 / 2;
  cfg.seed = 5;
  return cfg;
}

SynthSpec toy_spec(int frames, int views, int size, bool moving = true) {
  SynthSpec spec;
  spec.scene.bbox = unit_box();
  spec.scene.n_frames = frames;
  Blob b;
  b.base = {0.05, -0.05, 0.0};
  b.amplitude = moving ? Vec3{0.2, 0.1, 0} : Vec3{};
  b.frequency = 0.05;
  b.radius = 0.35;
  b.peak = 25;
  b.albedo = {0.8, 0.4, 0.2};
  spec.scene.blobs = {b};
  spec.ring.n_views = views;
  spec.ring.radius = 3;
  spec.ring.height = 0.6;
  spec.ring.width = spec.ring.height_px = size;
  spec.ring.focal = size * 1.25;
  spec.oracle_step = 0.01;
  return spec;
}

const Dataset& tiny_dataset() {
  static const Dataset ds = synthesize(toy_spec(4, 4, 16));
  return ds;
}

TEST(InitGroup, FirstGroupUsesDocumentedInit) {
  const TrainConfig cfg = fixture_train_config();
  const GroupModel g = init_group(nullptr, cfg, unit_box(), 0, 0, 4);
  ASSERT_EQ(g.size(), 4);
  EXPECT_EQ(g.dims(), dims_at_level(cfg.full_dims, downscale_level(cfg, 1)));
  for (const FrameField& f : g.fields) {
    for (float v : f.sigma.values) EXPECT_EQ(v, -4.f);
    for (int p = 1; p < 4; ++p)
      for (float v : f.tensors()[p]) ASSERT_EQ(v, 0.f);
  }
  EXPECT_EQ(g.mlp.input_dim(), 3 * cfg.channels + 3 + 6 * cfg.posenc_levels);
  EXPECT_EQ(g.occ.size(), 4u);
  // sigmoid(-4) is far above the threshold, so the whole box starts occupied.
  EXPECT_EQ(g.occ[0].count(), g.occ[0].bits.size());
}

TEST(InitGroup, CopiesPreviousTailAndDecoder) {
  TrainConfig cfg = tiny_config();
  GroupModel prev = init_group(nullptr, cfg, unit_box(), 0, 0, 2);
  prev.fields[1] = random_field(cfg.full_dims, unit_box(), cfg.channels, 9);
  prev.fields[1].frame_index = 1;
  prev.mlp = make_decoder(9, 2, 16, 123);
  const GroupModel g = init_group(&prev, cfg, unit_box(), 1, 2, 2);
  const FrameField want = rescale(prev.fields[1], dims_at_level(cfg.full_dims, downscale_level(cfg, 1)));
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(g.fields[i].frame_index, 2 + i);
    for (int t = 0; t < 4; ++t) {
      const auto got = g.fields[i].tensors()[t], exp = want.tensors()[t];
      ASSERT_TRUE(std::equal(got.begin(), got.end(), exp.begin(), exp.end()));
    }
  }
  EXPECT_EQ(checksum(g.mlp), checksum(prev.mlp));
  const Bbox other{{-1, -1, -1}, {2, 1, 1}};
  EXPECT_THROW(init_group(&prev, cfg, other, 1, 2, 2), InvalidState);
}

std::vector<TrainRay> some_rays(const Dataset& ds, int frames, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainRay> out;
  const Camera& c0 = ds.cameras[0];
  std::uniform_real_distribution<double> ux(0, c0.width), uy(0, c0.height);
  while (static_cast<int>(out.size()) < count) {
    TrainRay r;
    r.frame = static_cast<int>(rng() % frames);
    r.view = static_cast<int>(rng() % ds.cameras.size());
    r.ray = generate_ray(ds.cameras[r.view], ux(rng), uy(rng), ds.bbox);
    r.target = {0.5, 0.5, 0.5};
    if (r.ray.hit) out.push_back(r);
  }
  return out;
}

TEST(ComputeLosses, InterZeroWhenTailMatchesAndMismatchThrows) {
  const TrainConfig cfg = tiny_config();
  GroupModel g = init_group(nullptr, cfg, unit_box(), 1, 2, 2);
  g.fields[0] = random_field(g.dims(), unit_box(), cfg.channels, 4);
  g.fields[1] = g.fields[0];
  g.refresh_occupancy(cfg.lambda_th);
  const auto rays = some_rays(tiny_dataset(), 2, 32, 1);
  const FrameField tail = g.fields[0];
  const Losses l = compute_losses(g, rays, &tail, cfg);
  EXPECT_EQ(l.inter, 0.0);
  EXPECT_EQ(l.intra, 0.0);
  EXPECT_GT(l.color, 0.0);
  EXPECT_NEAR(l.total, l.color, 1e-12);
  const Losses none = compute_losses(g, rays, nullptr, cfg);
  EXPECT_EQ(none.inter, 0.0);
  FrameField hi = rescale(tail, cfg.full_dims);
  EXPECT_NEAR(compute_losses(g, rays, &hi, cfg).inter,
              temporal_l1(rescale(hi, g.dims()), g.fields[0], nullptr, nullptr, 1), 1e-12);
  FrameField shifted = tail;
  shifted.sigma.bbox.max.x = 2;
  EXPECT_THROW(compute_losses(g, rays, &shifted, cfg), InvalidState);
}

TEST(ComputeLosses, WeightedTotal) {
  const TrainConfig cfg = tiny_config();
  GroupModel g = init_group(nullptr, cfg, unit_box(), 0, 0, 2);
  g.fields[0] = random_field(g.dims(), unit_box(), cfg.channels, 5);
  g.fields[1] = random_field(g.dims(), unit_box(), cfg.channels, 6);
  g.refresh_occupancy(cfg.lambda_th);
  const FrameField tail = random_field(g.dims(), unit_box(), cfg.channels, 7);
  const auto rays = some_rays(tiny_dataset(), 2, 32, 2);
  const Losses l = compute_losses(g, rays, &tail, cfg);
  EXPECT_NEAR(l.intra, temporal_l1(g.fields[0], g.fields[1], nullptr, nullptr, 1), 1e-12);
  EXPECT_NEAR(l.inter, temporal_l1(tail, g.fields[0], nullptr, nullptr, 1), 1e-12);
  EXPECT_NEAR(l.total, l.color + cfg.lambda_intra * l.intra + cfg.lambda_inter * l.inter, 1e-12);
  // Color term is the mean squared error against the targets.
  double se = 0;
  RenderOptions o = cfg.render;
  for (const TrainRay& r : rays) {
    const Vec3 c = render_ray(r.ray, g.fields[r.frame], g.occ[r.frame], g.mlp, o).rgb - r.target;
    se += dot(c, c);
  }
  EXPECT_NEAR(l.color, se / (3.0 * rays.size()), 1e-9);
}

// Independent slab test of the segment against the cell cube of lattice point (i, j, k).
bool segment_hits_cell(const Ray& r, const OccupancyGrid& occ, int i, int j, int k) {
  const int idx[3] = {i, j, k};
  double t0 = r.t_near, t1 = r.t_far;
  for (int a = 0; a < 3; ++a) {
    const double h = (occ.bbox.max[a] - occ.bbox.min[a]) / (occ.dims[a] - 1);
    const double lo = occ.bbox.min[a] + (idx[a] - 0.5) * h, hi = lo + h;
    if (r.dir[a] == 0) {
      if (r.origin[a] < lo || r.origin[a] > hi) return false;
      continue;
    }
    double ta = (lo - r.origin[a]) / r.dir[a], tb = (hi - r.origin[a]) / r.dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 <= t1;
}

TEST(FilterRays, AllOccupiedKeepsEverything) {
  const auto rays = some_rays(tiny_dataset(), 2, 200, 3);
  const std::vector<OccupancyGrid> occ(2, OccupancyGrid::filled({7, 7, 7}, unit_box(), true));
  EXPECT_EQ(filter_rays(rays, occ).size(), rays.size());
}

TEST(FilterRays, AllEmptyKeepsNothing) {
  const auto rays = some_rays(tiny_dataset(), 2, 200, 4);
  const std::vector<OccupancyGrid> occ(2, OccupancyGrid::filled({7, 7, 7}, unit_box(), false));
  EXPECT_TRUE(filter_rays(rays, occ).empty());
}

TEST(FilterRays, SingleVoxelMatchesSlabOracle) {
  std::mt19937_64 rng(6);
  int kept = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Dims3 d{5 + int(rng() % 5), 5 + int(rng() % 5), 5 + int(rng() % 5)};
    std::vector<OccupancyGrid> occ(1, OccupancyGrid::filled(d, unit_box(), false));
    const int i = rng() % d[0], j = rng() % d[1], k = rng() % d[2];
    occ[0].bits[(std::size_t(i) * d[1] + j) * d[2] + k] = 1;
    auto rays = some_rays(tiny_dataset(), 1, 300, 100 + trial);
    for (int n = 0; n < 100; ++n) {
      // Rays aimed near the voxel so both outcomes occur.
      const Vec3 tgt = {-1 + 2.0 * i / (d[0] - 1), -1 + 2.0 * j / (d[1] - 1), -1 + 2.0 * k / (d[2] - 1)};
      const Vec3 from = testing::random_unit(rng) * 3.0;
      TrainRay r;
      r.ray = clip_ray(from, normalized(tgt + testing::random_unit(rng) * 0.4 - from), unit_box());
      if (r.ray.hit) rays.push_back(r);
    }
    const auto out = filter_rays(rays, occ);
    std::size_t oracle = 0;
    for (const TrainRay& r : rays) {
      const bool want = segment_hits_cell(r.ray, occ[0], i, j, k);
      EXPECT_EQ(ray_hits_occupied(r.ray, occ[0]), want);
      oracle += want;
    }
    EXPECT_EQ(out.size(), oracle);
    kept += static_cast<int>(oracle);
  }
  EXPECT_GT(kept, 100);
}

TEST(TrainGroup, DeterministicWithSeed) {
  const TrainConfig cfg = tiny_config();
  const GroupModel a = train_group(tiny_dataset(), 0, nullptr, cfg);
  const GroupModel b = train_group(tiny_dataset(), 0, nullptr, cfg);
  EXPECT_EQ(checksum(a), checksum(b));
  TrainConfig other = cfg;
  other.seed = 6;
  EXPECT_NE(checksum(train_group(tiny_dataset(), 0, nullptr, other)), checksum(a));
}

TEST(TrainGroup, ReachesFullResolutionAndLogsSchedule) {
  const TrainConfig cfg = tiny_config();
  TrainLog log;
  const GroupModel g = train_group(tiny_dataset(), 0, nullptr, cfg, &log);
  EXPECT_EQ(g.dims(), cfg.full_dims);
  EXPECT_EQ(static_cast<int>(log.entries.size()), cfg.iters_per_group);
  ASSERT_FALSE(log.resolution_changes.empty());
  EXPECT_EQ(log.resolution_changes.back().second, cfg.full_dims);
  EXPECT_LE(log.resolution_changes.back().first,
            std::max(cfg.upscale_pass2.back(), cfg.rayfilter_at));
  EXPECT_GT(log.rays_after_filter, 0u);
  EXPECT_EQ(g.occ.size(), 2u);
}

TEST(TrainGroup, PreviousGroupUntouched) {
  const TrainConfig cfg = tiny_config();
  const GroupModel g0 = train_group(tiny_dataset(), 0, nullptr, cfg);
  const std::uint64_t before = checksum(g0);
  TrainLog log;
  const GroupModel g1 = train_group(tiny_dataset(), 1, &g0, cfg, &log);
  EXPECT_EQ(checksum(g0), before);
  EXPECT_EQ(g1.first_frame, 2);
  EXPECT_EQ(g1.group_index, 1);
  EXPECT_GT(log.entries.front().losses.inter, -1.0);
  EXPECT_THROW(train_group(tiny_dataset(), 2, &g1, cfg), InvalidArgument);
}

TEST(TrainGroup, CheckpointRoundTrip) {
  const TrainConfig cfg = tiny_config();
  std::vector<GroupModel> trained;
  std::vector<TrainLog> logs;
  train_sequence(tiny_dataset(), cfg, [&](const GroupModel& g, const TrainLog& l) {
    trained.push_back(g);
    logs.push_back(l);
  });
  ASSERT_EQ(trained.size(), 2u);
  testing::TempDir dir("ckpt");
  for (std::size_t i = 0; i < trained.size(); ++i) save_group_checkpoint(dir.path(), trained[i], logs[i]);
  CheckpointInfo info;
  info.config = cfg;
  info.bbox = unit_box();
  info.frame_count = 4;
  info.focal_ratio = 1.5;
  save_checkpoint_manifest(dir.path(), info, 2);
  CheckpointInfo back;
  const auto loaded = load_checkpoint(dir.path(), &back);
  ASSERT_EQ(loaded.size(), 2u);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(checksum(loaded[i]), checksum(trained[i]));
    EXPECT_EQ(loaded[i].first_frame, trained[i].first_frame);
    for (int f = 0; f < 2; ++f) EXPECT_EQ(loaded[i].occ[f].bits, trained[i].occ[f].bits);
  }
  EXPECT_EQ(back.frame_count, 4);
  EXPECT_EQ(back.focal_ratio, 1.5);
  EXPECT_EQ(train_config_to_json(back.config), train_config_to_json(cfg));
  std::filesystem::remove(dir.path() / "group_001" / "mlp.fvvr");
  EXPECT_THROW(load_checkpoint(dir.path()), Error);
}

double window_mean(const TrainLog& log, std::size_t from, std::size_t to) {
  double s = 0;
  for (std::size_t i = from; i < to; ++i) s += log.entries[i].losses.color;
  return s / (to - from);
}

TEST(TrainGroupSlow, ToySceneConverges) {
  TrainConfig cfg = scale_schedule(TrainConfig{}, 2000);
  cfg.group_size = 4;
  cfg.batch_rays = 512;
  cfg.full_dims = {32, 32, 32};
  cfg.render.step = 2.0 / 31 / 2;
  cfg.render.background = {1, 1, 1};
  cfg.seed = 11;
  const Dataset ds = synthesize(toy_spec(4, 8, 64));
  TrainLog log;
  train_group(ds, 0, nullptr, cfg, &log);
  const double first = log.entries.front().losses.color;
  const double last = window_mean(log, log.entries.size() - 50, log.entries.size());
  EXPECT_LT(last, 0.25 * first) << first << " -> " << last;
  EXPECT_LT(window_mean(log, 1500, 2000), window_mean(log, 0, 500));
}

TEST(TrainGroupSlow, IntraRegularizerTiesIdenticalFrames) {
  TrainConfig cfg = scale_schedule(TrainConfig{}, 600);
  cfg.group_size = 4;
  cfg.batch_rays = 384;
  cfg.full_dims = {16, 16, 16};
  cfg.render.step = 2.0 / 15 / 2;
  cfg.render.background = {1, 1, 1};
  cfg.seed = 12;
  const Dataset ds = synthesize(toy_spec(4, 6, 32, false));
  auto max_pair = [](const GroupModel& g) {
    double m = 0;
    for (int i = 0; i + 1 < g.size(); ++i)
      m = std::max(m, temporal_l1(g.fields[i], g.fields[i + 1], nullptr, nullptr, 1));
    return m;
  };
  const double with_reg = max_pair(train_group(ds, 0, nullptr, cfg));
  cfg.lambda_intra = 0;
  const double without = max_pair(train_group(ds, 0, nullptr, cfg));
  EXPECT_LT(with_reg, 0.1 * without) << with_reg << " vs " << without;
}

}  // namespace
}  // namespace fvv
