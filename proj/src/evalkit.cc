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

#include "fvv/evalkit.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace fvv {

namespace {

void check_pair(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.rgb.size() != b.rgb.size())
    throw InvalidArgument("image dimensions differ");
  if (a.width < 1 || a.height < 1) throw InvalidArgument("empty image");
}

std::vector<double> gray(const Image& img) {
  std::vector<double> g(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = (static_cast<double>(img.rgb[3 * i]) + img.rgb[3 * i + 1] + img.rgb[3 * i + 2]) / 3.0;
  return g;
}

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kSsimWindow);
  const int r = kSsimWindow / 2;
  double sum = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - r;
    k[i] = std::exp(-x * x / (2 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable "valid" correlation with the window kernel.
std::vector<double> filter_valid(const std::vector<double>& src, int w, int h,
                                 const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double mse(const Image& img, const Image& ref) {
  check_pair(img, ref);
  double s = 0;
  for (std::size_t i = 0; i < img.rgb.size(); ++i) {
    const double d = static_cast<double>(img.rgb[i]) - ref.rgb[i];
    s += d * d;
  }
  return s / img.rgb.size();
}

double psnr(const Image& img, const Image& ref) {
  const double m = mse(img, ref);
  if (m == 0) return std::numeric_limits<double>::infinity();
  return -10 * std::log10(m);
}

double ssim(const Image& img, const Image& ref) {
  check_pair(img, ref);
  if (img.width < kSsimWindow || img.height < kSsimWindow)
    throw InvalidArgument("ssim: image smaller than the 11x11 window");
  const int w = img.width, h = img.height;
  const std::vector<double> x = gray(img), y = gray(ref);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto k = gaussian_kernel();
  const auto mx = filter_valid(x, w, h, k), my = filter_valid(y, w, h, k);
  const auto sxx = filter_valid(xx, w, h, k), syy = filter_valid(yy, w, h, k),
             sxy = filter_valid(xy, w, h, k);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cxy = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / mx.size();
}

std::string rd_report(std::span<const RdRow> rows, int frame_count) {
  if (frame_count < 1) throw InvalidArgument("rd_report: frame_count must be >= 1");
  std::vector<RdRow> sorted(rows.begin(), rows.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const RdRow& a, const RdRow& b) { return a.bytes < b.bytes; });
  std::ostringstream out;
  out << "crf,bytes,kb_per_frame,psnr,ssim\n";
  char buf[256];
  for (const RdRow& r : sorted) {
    std::snprintf(buf, sizeof(buf), "%d,%llu,%.4f,%.4f,%.6f\n", r.crf,
                  static_cast<unsigned long long>(r.bytes),
                  static_cast<double>(r.bytes) / frame_count / 1024.0, r.psnr, r.ssim);
    out << buf;
  }
  return out.str();
}

std::string breakdown_csv(const SizeBreakdown& s) {
  std::ostringstream out;
  out << "component,bytes\n";
  out << "P_xy," << s.p_xy << "\n";
  out << "P_xz," << s.p_xz << "\n";
  out << "P_yz," << s.p_yz << "\n";
  out << "V_sigma," << s.v_sigma << "\n";
  out << "MLPs," << s.mlps << "\n";
  out << "metadata," << s.metadata << "\n";
  out << "total," << s.total() << "\n";
  return out.str();
}

RenderOptions render_options(const ContainerMeta& meta, int threads) {
  RenderOptions o;
  o.step = meta.step;
  o.background = meta.background;
  o.threads = threads;
  return o;
}

std::vector<MetricRecord> evaluate_container(const Container& c, const Dataset& ds,
                                             std::span<const int> views, int threads) {
  if (ds.n_frames() < c.frame_count())
    throw InvalidArgument("evaluate_container: dataset has fewer frames than the container");
  const RenderOptions opts = render_options(c.meta, threads);
  std::vector<MetricRecord> out;
  for (int f = 0; f < c.frame_count(); ++f) {
    const auto [g, local] = c.locate(f);
    const DecodedGroup& grp = c.groups[g];
    for (int v : views) {
      if (v < 0 || v >= ds.n_views()) throw InvalidArgument("evaluate_container: bad view");
      const Image img = render_image(ds.cameras[v], grp.fields[local], grp.occ[local], grp.mlp, opts);
      const Image& ref = ds.frames[f][v];
      out.push_back({f, v, psnr(img, ref), ssim(img, ref)});
    }
  }
  return out;
}

std::string metrics_csv(std::span<const MetricRecord> records) {
  std::ostringstream out;
  out << "frame,view,psnr,ssim\n";
  char buf[128];
  for (const MetricRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.4f,%.6f\n", r.frame, r.view, r.psnr, r.ssim);
    out << buf;
  }
  return out.str();
}

double mean_psnr(std::span<const MetricRecord> records) {
  if (records.empty()) return 0;
  double s = 0;
  for (const MetricRecord& r : records) s += r.psnr;
  return s / records.size();
}

double mean_ssim(std::span<const MetricRecord> records) {
  if (records.empty()) return 0;
  double s = 0;
  for (const MetricRecord& r : records) s += r.ssim;
  return s / records.size();
}

}  // namespace fvv
