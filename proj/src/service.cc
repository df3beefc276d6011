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

#include "fvv/service.h"

#include <charconv>
#include <cmath>
#include <chrono>
#include <thread>
#include <sstream>

#include "fvv/evalkit.h"
#include "fvv/renderer.h"
#include "httplib.h"
#include "json.hpp"

namespace fvv {

using nlohmann::json;

namespace {

constexpr int kMaxSide = 4096;

double parse_number(const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw HttpError(400, "malformed number '" + s + "'");
  }
  while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
  if (used != s.size() || !std::isfinite(v)) throw HttpError(400, "malformed number '" + s + "'");
  return v;
}

int parse_int(const std::string& s, const char* name) {
  int v = 0;
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw HttpError(400, std::string("malformed ") + name);
  return v;
}

}  // namespace

ServeState load_serve_state(const std::filesystem::path& container_path, int threads) {
  ServeState s;
  s.container = unpack_container(read_file(container_path));
  s.threads = threads;
  return s;
}

Pose parse_pose(const std::string& text) {
  Pose p{};
  std::stringstream ss(text);
  std::string item;
  int n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == 12) throw HttpError(400, "pose has more than 12 values");
    p[n++] = parse_number(item);
  }
  if (n != 12) throw HttpError(400, "pose needs 12 comma-separated values");
  return p;
}

Pose parse_pose_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw HttpError(400, std::string("pose is not JSON: ") + e.what());
  }
  if (j.is_object()) j = j.value("pose", json());
  if (!j.is_array() || j.size() != 12) throw HttpError(400, "pose JSON needs 12 numbers");
  Pose p{};
  for (int i = 0; i < 12; ++i) {
    if (!j[i].is_number()) throw HttpError(400, "pose JSON needs 12 numbers");
    p[i] = j[i].get<double>();
  }
  return p;
}

Camera camera_from_pose(const Pose& pose, int width, int height, double focal_ratio) {
  if (width < 1 || height < 1 || width > kMaxSide || height > kMaxSide)
    throw HttpError(400, "image size must be in [1, 4096]");
  Camera c;
  for (int i = 0; i < 9; ++i) c.rotation.m[i] = pose[i];
  c.translation = {pose[9], pose[10], pose[11]};
  c.width = width;
  c.height = height;
  c.fx = c.fy = focal_ratio * width;
  c.cx = width / 2.0;
  c.cy = height / 2.0;
  if (orthonormality_error(c.rotation) > 1e-4 || c.rotation.determinant() < 0)
    throw HttpError(400, "pose rotation is not orthonormal");
  try {
    validate_camera(c);
  } catch (const Error& e) {
    throw HttpError(400, e.what());
  }
  return c;
}

Image render_frame(const ServeState& state, int frame, const Camera& cam) {
  const Container& c = state.container;
  if (frame < 0 || frame >= c.frame_count())
    throw HttpError(404, "frame " + std::to_string(frame) + " out of range");
  const auto [g, local] = c.locate(frame);
  const DecodedGroup& grp = c.groups[g];
  return render_image(cam, grp.fields[local], grp.occ[local], grp.mlp,
                      render_options(c.meta, state.threads));
}

std::vector<std::uint8_t> handle_render_request(const ServeState& state, int frame,
                                                const Pose& pose, int width, int height) {
  if (frame < 0 || frame >= state.container.frame_count())
    throw HttpError(404, "frame " + std::to_string(frame) + " out of range");
  const Camera cam = camera_from_pose(pose, width, height, state.container.meta.focal_ratio);
  return encode_png(render_frame(state, frame, cam));
}

std::string meta_response(const ServeState& state) {
  const ContainerMeta& m = state.container.meta;
  json j;
  j["frame_count"] = m.frame_count;
  j["bbox"] = {{"min", {m.bbox.min.x, m.bbox.min.y, m.bbox.min.z}},
               {"max", {m.bbox.max.x, m.bbox.max.y, m.bbox.max.z}}};
  j["fps_hint"] = m.fps_hint;
  j["orbit_radius"] = m.orbit_radius;
  return j.dump();
}

HttpResponse handle_http(const ServeState& state, const std::string& path,
                         const std::map<std::string, std::string>& params) {
  try {
    if (path == "/meta") return {200, "application/json", meta_response(state)};
    if (path == "/render") {
      auto get = [&](const char* key) -> const std::string& {
        auto it = params.find(key);
        if (it == params.end()) throw HttpError(400, std::string("missing parameter ") + key);
        return it->second;
      };
      const int frame = parse_int(get("frame"), "frame");
      const Pose pose = parse_pose(get("pose"));
      const int w = parse_int(get("w"), "w");
      const int h = parse_int(get("h"), "h");
      const auto png = handle_render_request(state, frame, pose, w, h);
      return {200, "image/png", std::string(png.begin(), png.end())};
    }
    return {404, "text/plain", "not found"};
  } catch (const HttpError& e) {
    return {e.status(), "text/plain", e.what()};
  } catch (const Error& e) {
    return {500, "text/plain", e.what()};
  }
}

void run_server(const ServeState& state, const std::string& host, int port,
                const std::function<void(int, const std::function<void()>&)>& on_ready) {
  httplib::Server server;
  auto route = [&state](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> params;
    for (const auto& [k, v] : req.params) params.emplace(k, v);
    const HttpResponse r = handle_http(state, req.path, params);
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body, r.content_type);
  };
  server.Get("/meta", route);
  server.Get("/render", route);
  int bound = port;
  if (port == 0)
    bound = server.bind_to_any_port(host);
  else if (!server.bind_to_port(host, port))
    bound = -1;
  if (bound <= 0) throw EnvironmentError("cannot bind " + host + ":" + std::to_string(port));
  std::thread notifier;
  if (on_ready) {
    notifier = std::thread([&server, &on_ready, bound] {
      while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
      on_ready(bound, [&server] { server.stop(); });
    });
  }
  server.listen_after_bind();
  if (notifier.joinable()) notifier.join();
}

}  // namespace fvv
