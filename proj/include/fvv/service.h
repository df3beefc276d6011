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

#ifndef FVV_SERVICE_H_
#define FVV_SERVICE_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fvv/codec.h"
#include "fvv/image.h"
#include "fvv/scene.h"

namespace fvv {

// Error carrying an HTTP status code.
class HttpError : public Error {
 public:
  HttpError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

// Loaded once; read-only afterwards.
struct ServeState {
  Container container;
  int threads = 1;
};

ServeState load_serve_state(const std::filesystem::path& container_path, int threads = 1);

// Row-major rotation (world-from-camera) then camera centre.
using Pose = std::array<double, 12>;

// 12 comma-separated numbers; anything else is a 400.
Pose parse_pose(const std::string& text);
// Accepts a JSON array of 12 numbers or an object with a "pose" array.
Pose parse_pose_json(const std::string& text);

// Intrinsics fx = fy = focal_ratio * width, principal point at the centre.
Camera camera_from_pose(const Pose& pose, int width, int height, double focal_ratio);

Image render_frame(const ServeState& state, int frame, const Camera& cam);
std::vector<std::uint8_t> handle_render_request(const ServeState& state, int frame,
                                                const Pose& pose, int width, int height);

std::string meta_response(const ServeState& state);

struct HttpResponse {
  int status = 200;
  std::string content_type;
  std::string body;
};

// Routing without sockets: GET /meta and GET /render.
HttpResponse handle_http(const ServeState& state, const std::string& path,
                         const std::map<std::string, std::string>& params);

// Blocks until the server stops. Port 0 picks a free port; on_ready gets
// the bound port and a callback that stops the server.
void run_server(const ServeState& state, const std::string& host, int port,
                const std::function<void(int, const std::function<void()>&)>& on_ready = {});

}  // namespace fvv

#endif  // FVV_SERVICE_H_
