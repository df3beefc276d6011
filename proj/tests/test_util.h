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

#ifndef FVV_TESTS_TEST_UTIL_H_
#define FVV_TESTS_TEST_UTIL_H_

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>

#include "fvv/field.h"

namespace fvv::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("fvv_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Bbox unit_box() { return {{-1, -1, -1}, {1, 1, 1}}; }

inline void fill_uniform(std::span<float> v, std::mt19937_64& rng, float lo, float hi) {
  std::uniform_real_distribution<float> u(lo, hi);
  for (float& x : v) x = u(rng);
}

inline FrameField random_field(Dims3 dims, const Bbox& box, int channels, std::uint64_t seed,
                               float dlo = -3, float dhi = 3, float flo = -1, float fhi = 1) {
  std::mt19937_64 rng(seed);
  FrameField f = make_field(dims, box, channels, 0.f, 0.f, 0);
  fill_uniform(f.sigma.values, rng, dlo, dhi);
  for (auto& p : f.planes.planes) fill_uniform(p.values, rng, flo, fhi);
  return f;
}

inline Vec3 random_point(const Bbox& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  return {box.min.x + u(rng) * (box.max.x - box.min.x), box.min.y + u(rng) * (box.max.y - box.min.y),
          box.min.z + u(rng) * (box.max.z - box.min.z)};
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  return normalized(Vec3{n(rng), n(rng), n(rng)});
}

}  // namespace fvv::testing

#endif  // FVV_TESTS_TEST_UTIL_H_
