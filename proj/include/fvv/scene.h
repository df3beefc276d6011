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

#ifndef FVV_SCENE_H_
#define FVV_SCENE_H_

#include <filesystem>
#include <string>
#include <vector>

#include "fvv/common.h"
#include "fvv/image.h"

namespace fvv {

// Pinhole camera. Camera frame follows the x-right, y-down, z-forward
// convention; rotation is world-from-camera and translation is the camera
// center in world coordinates. Pixel (i, j) covers [i, i+1) x [j, j+1), so
// its center is (i + 0.5, j + 0.5).
struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  Mat3 rotation;
  Vec3 translation;
  int width = 1, height = 1;

  Vec3 forward() const { return rotation.column(2); }
  friend bool operator==(const Camera&, const Camera&) = default;
};

// Throws InvalidArgument when a camera invariant is violated.
void validate_camera(const Camera& cam);

// Builds a look-at rotation whose optical axis points from `eye` to `target`.
Mat3 look_at(Vec3 eye, Vec3 target, Vec3 world_up = {0, 1, 0});

struct RingSpec {
  int n_views = 8;
  double radius = 3;
  Vec3 target;
  double height = 0;
  int width = 64;
  int height_px = 64;
  double focal = 64;
};

// Cameras evenly spaced on a horizontal circle, all looking at the target.
std::vector<Camera> build_camera_ring(const RingSpec& spec);

// Gaussian emitter whose center follows base + amplitude * sin(2*pi*freq*t + phase).
struct Blob {
  Vec3 base;
  Vec3 amplitude;
  double frequency = 0;  // cycles per frame
  double phase = 0;
  double radius = 0.25;
  double peak = 10;
  Vec3 albedo{1, 1, 1};

  Vec3 center(double t) const;
};

struct AnalyticScene {
  std::vector<Blob> blobs;
  Bbox bbox;
  int n_frames = 1;
};

// Throws InvalidArgument if a trajectory leaves the box or a blob is malformed.
void validate_scene(const AnalyticScene& scene);

struct ScenePoint {
  double density = 0;
  Vec3 rgb;
};

ScenePoint eval_scene(const AnalyticScene& scene, Vec3 x, int t);

struct OracleRay {
  Vec3 rgb;
  double acc = 0;
  std::vector<double> weights;
};

// Brute-force emission-absorption quadrature along one ray (midpoint rule),
// composited over `bg`. Independent of the trainable renderer.
OracleRay integrate_oracle_ray(const AnalyticScene& scene, Vec3 origin, Vec3 dir, int t,
                               double step, Vec3 bg, bool keep_weights = false);

Image render_oracle(const AnalyticScene& scene, const Camera& cam, int t, double step,
                    Vec3 bg = {1, 1, 1});

struct Dataset {
  std::vector<Camera> cameras;
  std::vector<std::vector<Image>> frames;  // [frame][view]
  Bbox bbox;
  std::vector<int> heldout_views;

  int n_frames() const { return static_cast<int>(frames.size()); }
  int n_views() const { return static_cast<int>(cameras.size()); }
  std::vector<int> train_views() const;
};

// Throws InvalidArgument/FormatError on frame/view/size mismatches.
void validate_dataset(const Dataset& ds);

// Directory of PNGs plus manifest.json.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Everything `fvv synth` needs to produce a dataset.
struct SynthSpec {
  AnalyticScene scene;
  RingSpec ring;
  std::vector<int> heldout_views;
  double oracle_step = 0.0106;
  Vec3 background{1, 1, 1};
};

Dataset synthesize(const SynthSpec& spec);

SynthSpec synth_spec_from_json(const std::string& text);
std::string synth_spec_to_json(const SynthSpec& spec);

// Reference fixture: two sinusoidally moving blobs, 14 ring views at 64x64,
// views 3 and 10 held out. Trajectories depend only on the frame index, so
// the first k frames agree for every n_frames >= k.
SynthSpec fixture_spec(int n_frames = 8);

}  // namespace fvv

#endif  // FVV_SCENE_H_
