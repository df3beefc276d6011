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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fvv/trainer.h"
#include "test_util.h"

namespace fvv {
namespace {

Image pattern(int w, int h, int k, bool perturbed) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = 0.5 + 0.4 * std::sin(0.21 * (k + 1) * x + 0.13 * y + c) * std::cos(0.05 * (k + 2) * y);
        if (perturbed) v += 0.15 * std::sin(0.9 * x * (c + 1) + 0.4 * y * k) + 0.05 * k - 0.1;
        img.pixel(x, y)[c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return img;
}

TEST(Psnr, KnownValues) {
  Image a(8, 8, 0.5f), b(8, 8, 0.6f);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-5);
  EXPECT_NEAR(mse(a, b), 0.01, 1e-8);
  Image c(8, 8, 0.51f);
  EXPECT_NEAR(psnr(a, c), 40.0, 1e-4);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
}

TEST(Psnr, SymmetricAndMonotoneInNoise) {
  std::mt19937_64 rng(1);
  const Image ref = pattern(32, 32, 1, false);
  double last = std::numeric_limits<double>::infinity();
  for (double sigma : {0.01, 0.03, 0.1, 0.3}) {
    Image noisy = ref;
    std::normal_distribution<double> n(0, sigma);
    std::mt19937_64 r2(7);
    for (float& v : noisy.rgb) v = static_cast<float>(v + n(r2));
    const double p = psnr(noisy, ref);
    EXPECT_EQ(p, psnr(ref, noisy));
    EXPECT_LT(p, last);
    last = p;
  }
  EXPECT_THROW(psnr(Image(4, 4), Image(4, 5)), InvalidArgument);
}

TEST(Ssim, IdenticalIsOne) {
  const Image a = pattern(30, 20, 2, false);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, ConstantImagesFollowLuminanceTerm) {
  // Zero variance leaves only (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1).
  const double a = 0.3, b = 0.7, c1 = 1e-4;
  const double want = (2 * a * b + c1) / (a * a + b * b + c1);
  EXPECT_NEAR(ssim(Image(16, 16, float(a)), Image(16, 16, float(b))), want, 1e-6);
}

TEST(Ssim, MatchesReferenceImplementation) {
  // Structural similarity from scikit-image 0.25 (gaussian_weights, sigma 1.5,
  // population covariance, data_range 1) on the channel-mean images.
  const struct {
    int w, h;
    double value;
  } cases[] = {{16, 16, 0.6220944175968444},
               {23, 17, 0.6537935730798446},
               {40, 32, 0.8085398526004269},
               {64, 48, 0.8652357416009911},
               {11, 11, 0.7846662695063847}};
  for (int k = 0; k < 5; ++k) {
    const Image ref = pattern(cases[k].w, cases[k].h, k, false);
    const Image img = pattern(cases[k].w, cases[k].h, k, true);
    EXPECT_NEAR(ssim(img, ref), cases[k].value, 1e-4) << k;
  }
}

TEST(Ssim, SymmetricBoundedAndSizeChecked) {
  const Image a = pattern(24, 24, 3, false), b = pattern(24, 24, 3, true);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LE(ssim(a, b), 1.0);
  EXPECT_THROW(ssim(Image(10, 30), Image(10, 30)), InvalidArgument);
  EXPECT_THROW(ssim(Image(20, 20), Image(20, 21)), InvalidArgument);
}

TEST(Reports, RdSortedWithKbPerFrame) {
  const std::vector<RdRow> rows{{20, 40960, 31.5, 0.95}, {33, 10240, 29.0, 0.9}, {28, 20480, 30.25, 0.93}};
  const std::string csv = rd_report(rows, 4);
  EXPECT_EQ(csv,
            "crf,bytes,kb_per_frame,psnr,ssim\n"
            "33,10240,2.5000,29.0000,0.900000\n"
            "28,20480,5.0000,30.2500,0.930000\n"
            "20,40960,10.0000,31.5000,0.950000\n");
  EXPECT_THROW(rd_report(rows, 0), InvalidArgument);
}

TEST(Reports, BreakdownListsComponentsAndTotal) {
  SizeBreakdown s;
  s.p_xy = 10;
  s.p_xz = 20;
  s.p_yz = 30;
  s.v_sigma = 40;
  s.mlps = 5;
  s.metadata = 1;
  const std::string csv = breakdown_csv(s);
  EXPECT_NE(csv.find("V_sigma,40\n"), std::string::npos);
  EXPECT_NE(csv.find("total,106\n"), std::string::npos);
}

TEST(Evaluate, ScoresEveryFrameViewPair) {
  SynthSpec spec = fixture_spec(3);
  spec.ring.n_views = 4;
  spec.ring.width = spec.ring.height_px = 24;
  spec.ring.focal = 30;
  spec.heldout_views = {1};
  const Dataset ds = synthesize(spec);
  TrainConfig cfg = scale_schedule(TrainConfig{}, 40);
  cfg.group_size = 2;
  cfg.batch_rays = 64;
  cfg.full_dims = {8, 8, 8};
  cfg.channels = 2;
  cfg.posenc_levels = 1;
  cfg.mlp_width = 8;
  cfg.render.step = 0.1;
  const auto groups = train_sequence(ds, cfg);
  PackOptions po;
  po.step = 0.1;
  const Container c = unpack_container(pack_container(groups, po));
  const std::vector<int> views{1, 3};
  const auto recs = evaluate_container(c, ds, views, 2);
  ASSERT_EQ(recs.size(), 6u);
  EXPECT_EQ(recs[5].frame, 2);
  EXPECT_EQ(recs[5].view, 3);
  const auto [g, l] = c.locate(2);
  const Image img = render_image(ds.cameras[3], c.groups[g].fields[l], c.groups[g].occ[l],
                                 c.groups[g].mlp, render_options(c.meta));
  EXPECT_EQ(recs[5].psnr, psnr(img, ds.frames[2][3]));
  EXPECT_EQ(recs[5].ssim, ssim(img, ds.frames[2][3]));
  double sum = 0;
  for (const auto& r : recs) sum += r.psnr;
  EXPECT_NEAR(mean_psnr(recs), sum / 6, 1e-12);
  EXPECT_EQ(metrics_csv(recs).substr(0, 21), "frame,view,psnr,ssim\n");
  const std::vector<int> bad{9};
  EXPECT_THROW(evaluate_container(c, ds, bad), InvalidArgument);
}

}  // namespace
}  // namespace fvv
