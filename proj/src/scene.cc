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

#include "fvv/scene.h"

#include <algorithm>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace fvv {

using nlohmann::json;

double orthonormality_error(const Mat3& r) {
  const Mat3 rtr = r.transposed() * r;
  double err = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) err = std::max(err, std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)));
  return err;
}

void validate_camera(const Camera& cam) {
  if (!(cam.fx > 0 && cam.fy > 0)) throw InvalidArgument("camera focal lengths must be > 0");
  if (cam.width <= 0 || cam.height <= 0) throw InvalidArgument("camera image size must be > 0");
  if (!(cam.cx >= 0 && cam.cx < cam.width && cam.cy >= 0 && cam.cy < cam.height))
    throw InvalidArgument("camera principal point outside image");
  if (orthonormality_error(cam.rotation) > 1e-6 ||
      std::abs(cam.rotation.determinant() - 1) > 1e-6)
    throw InvalidArgument("camera rotation is not a proper rotation");
}

Mat3 look_at(Vec3 eye, Vec3 target, Vec3 world_up) {
  const Vec3 z = normalized(target - eye);
  Vec3 x = cross(z, world_up);
  if (norm(x) < 1e-12) throw InvalidArgument("look_at: view direction parallel to up vector");
  x = normalized(x);
  const Vec3 y = cross(z, x);
  return Mat3::from_columns(x, y, z);
}

std::vector<Camera> build_camera_ring(const RingSpec& spec) {
  if (spec.n_views < 2) throw InvalidArgument("build_camera_ring: n_views must be >= 2");
  if (!(spec.radius > 0)) throw InvalidArgument("build_camera_ring: radius must be > 0");
  std::vector<Camera> cams;
  cams.reserve(spec.n_views);
  for (int i = 0; i < spec.n_views; ++i) {
    const double theta = 2 * std::numbers::pi * i / spec.n_views;
    Camera cam;
    cam.translation = spec.target + Vec3{spec.radius * std::cos(theta), spec.height,
                                         spec.radius * std::sin(theta)};
    cam.rotation = look_at(cam.translation, spec.target);
    cam.fx = cam.fy = spec.focal;
    cam.width = spec.width;
    cam.height = spec.height_px;
    cam.cx = spec.width / 2.0;
    cam.cy = spec.height_px / 2.0;
    validate_camera(cam);
    cams.push_back(cam);
  }
  return cams;
}

Vec3 Blob::center(double t) const {
  const double s = std::sin(2 * std::numbers::pi * frequency * t + phase);
  return base + amplitude * s;
}

void validate_scene(const AnalyticScene& scene) {
  if (scene.n_frames < 1) throw InvalidArgument("scene needs at least one frame");
  for (const Blob& b : scene.blobs) {
    if (!(b.peak > 0)) throw InvalidArgument("blob peak density must be > 0");
    if (!(b.radius > 0)) throw InvalidArgument("blob radius must be > 0");
    for (int c = 0; c < 3; ++c)
      if (b.albedo[c] < 0 || b.albedo[c] > 1) throw InvalidArgument("blob albedo outside [0,1]");
    for (int t = 0; t < scene.n_frames; ++t)
      if (!scene.bbox.contains(b.center(t)))
        throw InvalidArgument("blob trajectory leaves the bounding box at frame " +
                              std::to_string(t));
  }
}

ScenePoint eval_scene(const AnalyticScene& scene, Vec3 x, int t) {
  ScenePoint out;
  if (!scene.bbox.contains(x)) return out;
  Vec3 weighted;
  for (const Blob& b : scene.blobs) {
    const Vec3 d = x - b.center(t);
    const double rho = b.peak * std::exp(-dot(d, d) / (2 * b.radius * b.radius));
    out.density += rho;
    weighted = weighted + b.albedo * rho;
  }
  if (out.density > 0) out.rgb = weighted / out.density;
  return out;
}

namespace {

// Plain slab test, kept separate from the renderer's ray setup.
bool clip_to_box(const Bbox& box, Vec3 o, Vec3 d, double& t0, double& t1) {
  t0 = 0;
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < box.min[a] || o[a] > box.max[a]) return false;
      continue;
    }
    double ta = (box.min[a] - o[a]) / d[a];
    double tb = (box.max[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t1 > t0;
}

}  // namespace

OracleRay integrate_oracle_ray(const AnalyticScene& scene, Vec3 origin, Vec3 dir, int t,
                               double step, Vec3 bg, bool keep_weights) {
  if (!(step > 0)) throw InvalidArgument("oracle step must be > 0");
  OracleRay out;
  double t0, t1;
  double transmittance = 1;
  if (clip_to_box(scene.bbox, origin, dir, t0, t1) && !scene.blobs.empty()) {
    for (double s = t0 + 0.5 * step; s < t1; s += step) {
      const ScenePoint p = eval_scene(scene, origin + dir * s, t);
      const double alpha = 1 - std::exp(-p.density * step);
      const double w = transmittance * alpha;
      out.rgb = out.rgb + p.rgb * w;
      out.acc += w;
      if (keep_weights) out.weights.push_back(w);
      transmittance *= 1 - alpha;
    }
  }
  out.rgb = out.rgb + bg * transmittance;
  return out;
}

Image render_oracle(const AnalyticScene& scene, const Camera& cam, int t, double step, Vec3 bg) {
  Image img(cam.width, cam.height);
  for (int j = 0; j < cam.height; ++j) {
    for (int i = 0; i < cam.width; ++i) {
      const Vec3 d_cam{(i + 0.5 - cam.cx) / cam.fx, (j + 0.5 - cam.cy) / cam.fy, 1.0};
      const Vec3 dir = normalized(cam.rotation * d_cam);
      const OracleRay r = integrate_oracle_ray(scene, cam.translation, dir, t, step, bg);
      float* px = img.pixel(i, j);
      for (int c = 0; c < 3; ++c) px[c] = static_cast<float>(r.rgb[c]);
    }
  }
  return img;
}

std::vector<int> Dataset::train_views() const {
  std::vector<int> out;
  for (int v = 0; v < n_views(); ++v)
    if (std::find(heldout_views.begin(), heldout_views.end(), v) == heldout_views.end())
      out.push_back(v);
  return out;
}

void validate_dataset(const Dataset& ds) {
  for (const Camera& cam : ds.cameras) validate_camera(cam);
  for (int v : ds.heldout_views)
    if (v < 0 || v >= ds.n_views()) throw InvalidArgument("held-out view index out of range");
  for (int f = 0; f < ds.n_frames(); ++f) {
    if (static_cast<int>(ds.frames[f].size()) != ds.n_views())
      throw InvalidArgument("frame " + std::to_string(f) + " does not have one image per camera");
    for (int v = 0; v < ds.n_views(); ++v) {
      const Image& img = ds.frames[f][v];
      if (img.width != ds.cameras[v].width || img.height != ds.cameras[v].height)
        throw InvalidArgument("image size mismatch at frame " + std::to_string(f) + ", view " +
                              std::to_string(v));
    }
  }
}

namespace {

json vec_json(Vec3 v) { return json::array({v.x, v.y, v.z}); }

Vec3 json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json camera_json(const Camera& cam) {
  json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  j["rotation"] = cam.rotation.m;
  j["translation"] = vec_json(cam.translation);
  return j;
}

Camera json_camera(const json& j) {
  Camera cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  const auto rot = j.at("rotation").get<std::vector<double>>();
  if (rot.size() != 9) throw FormatError("camera rotation must have 9 entries");
  std::copy(rot.begin(), rot.end(), cam.rotation.m.begin());
  cam.translation = json_vec(j.at("translation"));
  return cam;
}

std::string image_name(int f, int v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "f%04d_v%03d.png", f, v);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  validate_dataset(ds);
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["cameras"] = json::array();
  for (const Camera& cam : ds.cameras) manifest["cameras"].push_back(camera_json(cam));
  manifest["bbox"] = {{"min", vec_json(ds.bbox.min)}, {"max", vec_json(ds.bbox.max)}};
  manifest["heldout_views"] = ds.heldout_views;
  manifest["frames"] = json::array();
  for (int f = 0; f < ds.n_frames(); ++f) {
    json row = json::array();
    for (int v = 0; v < ds.n_views(); ++v) {
      const std::string name = image_name(f, v);
      write_png(dir / name, ds.frames[f][v]);
      row.push_back(name);
    }
    manifest["frames"].push_back(row);
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("missing manifest: " + manifest_path.string());
  Dataset ds;
  try {
    const json manifest = json::parse(in);
    for (const json& c : manifest.at("cameras")) ds.cameras.push_back(json_camera(c));
    ds.bbox.min = json_vec(manifest.at("bbox").at("min"));
    ds.bbox.max = json_vec(manifest.at("bbox").at("max"));
    if (manifest.contains("heldout_views"))
      ds.heldout_views = manifest["heldout_views"].get<std::vector<int>>();
    for (const json& row : manifest.at("frames")) {
      std::vector<std::string> names = row.get<std::vector<std::string>>();
      ds.frames.emplace_back();
      for (const std::string& name : names) {
        const auto path = dir / name;
        if (!std::filesystem::exists(path))
          throw FormatError("manifest references missing image " + path.string());
        ds.frames.back().push_back(read_png(path));
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("corrupt manifest " + manifest_path.string() + ": " + e.what());
  }
  validate_dataset(ds);
  return ds;
}

Dataset synthesize(const SynthSpec& spec) {
  validate_scene(spec.scene);
  Dataset ds;
  ds.cameras = build_camera_ring(spec.ring);
  ds.bbox = spec.scene.bbox;
  ds.heldout_views = spec.heldout_views;
  for (int f = 0; f < spec.scene.n_frames; ++f) {
    ds.frames.emplace_back();
    for (const Camera& cam : ds.cameras)
      ds.frames.back().push_back(
          render_oracle(spec.scene, cam, f, spec.oracle_step, spec.background));
  }
  validate_dataset(ds);
  return ds;
}

SynthSpec fixture_spec(int n_frames) {
  SynthSpec spec;
  spec.scene.bbox = Bbox{{-1, -1, -1}, {1, 1, 1}};
  spec.scene.n_frames = n_frames;
  Blob a;
  a.base = {-0.25, 0.0, 0.0};
  a.amplitude = {0.075, 0.025, 0.0};
  a.frequency = 0.04;
  a.phase = 0.0;
  a.radius = 0.28;
  a.peak = 30;
  a.albedo = {0.9, 0.3, 0.2};
  Blob b;
  b.base = {0.30, 0.05, 0.10};
  b.amplitude = {0.0, 0.0375, 0.05};
  b.frequency = 0.03;
  b.phase = 1.0;
  b.radius = 0.22;
  b.peak = 40;
  b.albedo = {0.2, 0.5, 0.9};
  spec.scene.blobs = {a, b};
  spec.ring.n_views = 14;
  spec.ring.radius = 3.2;
  spec.ring.height = 0.8;
  spec.ring.width = 64;
  spec.ring.height_px = 64;
  spec.ring.focal = 80;
  spec.heldout_views = {3, 10};
  spec.oracle_step = (2.0 / 47.0) / 4.0;
  return spec;
}

SynthSpec synth_spec_from_json(const std::string& text) {
  SynthSpec spec;
  try {
    const json j = json::parse(text);
    const json& sc = j.at("scene");
    spec.scene.bbox.min = json_vec(sc.at("bbox").at("min"));
    spec.scene.bbox.max = json_vec(sc.at("bbox").at("max"));
    spec.scene.n_frames = sc.at("n_frames").get<int>();
    for (const json& b : sc.at("blobs")) {
      Blob blob;
      blob.base = json_vec(b.at("base"));
      blob.amplitude = json_vec(b.value("amplitude", json::array({0, 0, 0})));
      blob.frequency = b.value("frequency", 0.0);
      blob.phase = b.value("phase", 0.0);
      blob.radius = b.at("radius").get<double>();
      blob.peak = b.at("peak").get<double>();
      blob.albedo = json_vec(b.at("albedo"));
      spec.scene.blobs.push_back(blob);
    }
    const json& r = j.at("ring");
    spec.ring.n_views = r.at("n_views").get<int>();
    spec.ring.radius = r.at("radius").get<double>();
    spec.ring.target = json_vec(r.value("target", json::array({0, 0, 0})));
    spec.ring.height = r.value("height", 0.0);
    spec.ring.width = r.at("width").get<int>();
    spec.ring.height_px = r.at("height_px").get<int>();
    spec.ring.focal = r.at("focal").get<double>();
    spec.heldout_views = j.value("heldout_views", std::vector<int>{});
    spec.oracle_step = j.value("oracle_step", spec.oracle_step);
    if (j.contains("background")) spec.background = json_vec(j["background"]);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad scene spec: ") + e.what());
  }
  return spec;
}

std::string synth_spec_to_json(const SynthSpec& spec) {
  json j;
  json blobs = json::array();
  for (const Blob& b : spec.scene.blobs) {
    blobs.push_back({{"base", vec_json(b.base)},
                     {"amplitude", vec_json(b.amplitude)},
                     {"frequency", b.frequency},
                     {"phase", b.phase},
                     {"radius", b.radius},
                     {"peak", b.peak},
                     {"albedo", vec_json(b.albedo)}});
  }
  j["scene"] = {{"bbox", {{"min", vec_json(spec.scene.bbox.min)},
                          {"max", vec_json(spec.scene.bbox.max)}}},
                {"n_frames", spec.scene.n_frames},
                {"blobs", blobs}};
  j["ring"] = {{"n_views", spec.ring.n_views}, {"radius", spec.ring.radius},
               {"target", vec_json(spec.ring.target)}, {"height", spec.ring.height},
               {"width", spec.ring.width}, {"height_px", spec.ring.height_px},
               {"focal", spec.ring.focal}};
  j["heldout_views"] = spec.heldout_views;
  j["oracle_step"] = spec.oracle_step;
  j["background"] = vec_json(spec.background);
  return j.dump(2);
}

}  // namespace fvv
