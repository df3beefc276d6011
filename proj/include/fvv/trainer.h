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

#ifndef FVV_TRAINER_H_
#define FVV_TRAINER_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fvv/common.h"
#include "fvv/decoder.h"
#include "fvv/field.h"
#include "fvv/renderer.h"
#include "fvv/scene.h"

namespace fvv {

struct TrainConfig {
  int group_size = 20;
  int iters_per_group = 40000;
  int batch_rays = 17800;
  double lr_field = 1.5e-1;
  double lr_mlp = 1e-3;
  double lambda_intra = 1e-3;
  double lambda_inter = 2e-3;
  // Iterations at which the representation doubles its voxel count.
  std::vector<int> upscale_pass1{1000, 2000, 3000, 4000};
  std::vector<int> upscale_pass2{9000, 11000, 13000};
  // Iterations at which the representation drops to the base of the pass
  // that follows (the resolution from which that pass's upscales reach
  // full_dims).
  std::vector<int> downscale_at{1, 7000};
  int rayfilter_at = 13000;
  int occ_every = 1000;
  double lambda_th = 1e-4;
  Dims3 full_dims{120, 120, 120};
  int channels = 10;
  int posenc_levels = 4;
  int mlp_width = 128;
  float density_init = -4.f;
  float feature_init = 0.f;
  RenderOptions render;
  std::uint64_t seed = 1;
  int threads = 1;
  // Views used for training; empty selects every non-held-out view.
  std::vector<int> views;

  void validate() const;
};

inline constexpr int kReferenceIters = 40000;

// Copy of cfg with every schedule list (and occ_every) multiplied by
// iters / kReferenceIters and rounded, keeping the lists strictly increasing.
TrainConfig scale_schedule(const TrainConfig& cfg, int iters);

// Desk-scale defaults used by tests and the acceptance suite: N = 4,
// 4000 iterations per group, 48^3 grid, 144^2 planes.
TrainConfig fixture_train_config();

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// Per-axis dims after `level` halvings of the voxel count below full_dims.
Dims3 dims_at_level(const Dims3& full_dims, int level);
// Number of halvings applied by the downscale at `iter` (upscales that
// follow it before the next downscale).
int downscale_level(const TrainConfig& cfg, int iter);

enum class ScheduleAction : std::uint8_t {
  kUpscaleX2 = 1,
  kDownscaleToBase = 2,
  kUpdateOccupancy = 4,
  kRayFilter = 8,
};

struct ActionSet {
  std::uint8_t bits = 0;

  bool has(ScheduleAction a) const { return (bits & static_cast<std::uint8_t>(a)) != 0; }
  ActionSet& add(ScheduleAction a) {
    bits |= static_cast<std::uint8_t>(a);
    return *this;
  }
  bool empty() const { return bits == 0; }
  friend bool operator==(ActionSet, ActionSet) = default;
};

ActionSet make_actions(std::initializer_list<ScheduleAction> actions);
std::string to_string(ActionSet a);

// Pure function of (iter, cfg). Occupancy refreshes every occ_every
// iterations except at the ray-filter iteration, whose upscale already
// rebuilds occupancy for the new lattice.
ActionSet schedule_action(int iter, const TrainConfig& cfg);

// N consecutive frames sharing one decoder.
struct GroupModel {
  int group_index = 0;
  int first_frame = 0;
  std::vector<FrameField> fields;
  std::vector<OccupancyGrid> occ;
  DecoderMLP mlp;

  int size() const { return static_cast<int>(fields.size()); }
  const Dims3& dims() const { return fields.front().dims(); }
  const Bbox& bbox() const { return fields.front().sigma.bbox; }
  void refresh_occupancy(double lambda_th);
};

std::uint64_t checksum(const GroupModel& g);

// With prev: every frame starts from prev's last frame at the first pass's
// base resolution, and the decoder is copied. Without prev: logits
// density_init, features feature_init, decoder randomly initialized.
GroupModel init_group(const GroupModel* prev, const TrainConfig& cfg, const Bbox& bbox,
                      int group_index, int first_frame, int n_frames);

// One training ray: frame is group-local.
struct TrainRay {
  int frame = 0;
  int view = 0;
  int pixel = 0;
  Ray ray;
  Vec3 target;
};

struct Losses {
  double color = 0;
  double intra = 0;
  double inter = 0;
  double total = 0;
};

// Mean absolute difference per tensor, summed over density and the three
// planes. Optionally adds scale * d/d(a) into grad_a and scale * d/d(b)
// into grad_b (sign subgradient, zero at ties).
double temporal_l1(const FrameField& a, const FrameField& b, FrameField* grad_a,
                   FrameField* grad_b, double scale);

// prev_tail is rescaled to the group's resolution if needed; bbox mismatch
// is InvalidState.
Losses compute_losses(const GroupModel& group, std::span<const TrainRay> batch,
                      const FrameField* prev_tail, const TrainConfig& cfg);

// True when the segment [t_near, t_far] crosses the cell of any occupied
// lattice point (cells are the voxel-edge cubes centred on lattice points).
bool ray_hits_occupied(const Ray& ray, const OccupancyGrid& occ);
std::vector<TrainRay> filter_rays(std::span<const TrainRay> rays,
                                  std::span<const OccupancyGrid> occ);

struct TrainLogEntry {
  int iter = 0;
  Losses losses;
};

struct TrainLog {
  int group_index = 0;
  std::vector<TrainLogEntry> entries;
  std::vector<std::pair<int, Dims3>> resolution_changes;
  std::size_t rays_after_filter = 0;
  double seconds = 0;

  std::string to_json() const;
};

// Frames [g * N, min((g + 1) * N, n_frames)) of the dataset.
GroupModel train_group(const Dataset& ds, int group_index, const GroupModel* prev,
                       const TrainConfig& cfg, TrainLog* log = nullptr);

// Trains consecutive groups over the whole dataset, one group at a time.
// on_group is invoked after each group finishes (e.g. to checkpoint).
std::vector<GroupModel> train_sequence(
    const Dataset& ds, const TrainConfig& cfg,
    const std::function<void(const GroupModel&, const TrainLog&)>& on_group = {});

// Checkpoint layout: dir/manifest.json plus one group_XXX directory per
// group holding frame_XXX.fvvr, mlp.fvvr and train_log.json.
struct CheckpointInfo {
  TrainConfig config;
  Bbox bbox;
  int frame_count = 0;
  double focal_ratio = 1.25;
  double orbit_radius = 3;
};

void save_group_checkpoint(const std::filesystem::path& dir, const GroupModel& g,
                           const TrainLog& log);
void save_checkpoint_manifest(const std::filesystem::path& dir, const CheckpointInfo& info,
                              int n_groups);
std::vector<GroupModel> load_checkpoint(const std::filesystem::path& dir,
                                        CheckpointInfo* info = nullptr);

}  // namespace fvv

#endif  // FVV_TRAINER_H_
