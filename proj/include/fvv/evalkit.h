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

#ifndef FVV_EVALKIT_H_
#define FVV_EVALKIT_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fvv/codec.h"
#include "fvv/image.h"
#include "fvv/renderer.h"
#include "fvv/scene.h"

namespace fvv {

// -10 log10(MSE) over every pixel and channel; +infinity for identical images.
double psnr(const Image& img, const Image& ref);
double mse(const Image& img, const Image& ref);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Gaussian-window SSIM on the channel-mean grayscale image, averaged over
// window positions that fit entirely inside the image.
double ssim(const Image& img, const Image& ref);

struct MetricRecord {
  int frame = 0;
  int view = 0;
  double psnr = 0;
  double ssim = 0;
};

struct RdRow {
  int crf = 0;
  std::uint64_t bytes = 0;
  double psnr = 0;
  double ssim = 0;
};

// CSV sorted by bytes ascending, with a derived KB/frame column.
std::string rd_report(std::span<const RdRow> rows, int frame_count);

// Table of storage components in bytes plus the file total.
std::string breakdown_csv(const SizeBreakdown& s);

RenderOptions render_options(const ContainerMeta& meta, int threads = 1);

// Renders every (frame, view) pair from the container and scores it
// against the dataset image.
std::vector<MetricRecord> evaluate_container(const Container& c, const Dataset& ds,
                                             std::span<const int> views, int threads = 1);

std::string metrics_csv(std::span<const MetricRecord> records);

double mean_psnr(std::span<const MetricRecord> records);
double mean_ssim(std::span<const MetricRecord> records);

}  // namespace fvv

#endif  // FVV_EVALKIT_H_
