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

#ifndef FVV_DECODER_H_
#define FVV_DECODER_H_

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fvv/common.h"

namespace fvv {

inline constexpr int posenc_dim(int levels) { return 3 + 6 * levels; }

// [d, sin(2^0 pi d), cos(2^0 pi d), ..., sin(2^{L-1} pi d), cos(2^{L-1} pi d)].
// Throws InvalidArgument if |d| deviates from 1 by more than 1e-6.
void posenc(Vec3 d, int levels, std::span<float> out);
std::vector<float> posenc(Vec3 d, int levels);

// out = weight * in + bias, weight is out x in row-major.
struct DenseLayer {
  int in = 0;
  int out = 0;
  std::vector<float> weight;
  std::vector<float> bias;
};

// Three dense layers: ReLU, ReLU, sigmoid. Input is [f_tilde | posenc(dir)].
struct DecoderMLP {
  std::array<DenseLayer, 3> layers;
  int feature_dim = 30;
  int posenc_levels = 4;

  int input_dim() const { return feature_dim + posenc_dim(posenc_levels); }
  int width() const { return layers[0].out; }
  std::size_t parameter_count() const;
  // weight0, bias0, weight1, bias1, weight2, bias2.
  std::array<std::span<float>, 6> tensors();
  std::array<std::span<const float>, 6> tensors() const;
};

// Xavier-uniform weights, zero biases.
DecoderMLP make_decoder(int feature_dim, int posenc_levels, int width, std::uint64_t seed);
DecoderMLP zeros_like(const DecoderMLP& mlp);
bool same_shape(const DecoderMLP& a, const DecoderMLP& b);
void validate_decoder(const DecoderMLP& mlp);
std::uint64_t checksum(const DecoderMLP& mlp);

// Feature-major activations for a batch of B inputs: entry (i, b) lives at
// i * B + b. Column results do not depend on B.
struct MlpBatch {
  int batch = 0;
  std::vector<double> input;   // input_dim x B
  std::vector<double> hidden1;  // width x B, post-ReLU
  std::vector<double> hidden2;  // width x B, post-ReLU
  std::vector<double> output;   // 3 x B, post-sigmoid

  void resize(const DecoderMLP& mlp, int b);
};

void mlp_forward_batch(const DecoderMLP& mlp, MlpBatch& batch);

// d_output is 3 x B. Accumulates parameter gradients into grads (shaped like
// mlp) and, if d_input is non-empty, writes input_dim x B input gradients.
void mlp_backward_batch(const DecoderMLP& mlp, const MlpBatch& batch,
                        std::span<const double> d_output, DecoderMLP& grads,
                        std::span<double> d_input);

Vec3 mlp_forward(const DecoderMLP& mlp, std::span<const float> f_tilde,
                 std::span<const float> enc);

struct MlpInputGrad {
  std::vector<double> d_f_tilde;
  std::vector<double> d_enc;
};

MlpInputGrad mlp_backward(const DecoderMLP& mlp, std::span<const float> f_tilde,
                          std::span<const float> enc, Vec3 d_rgb, DecoderMLP& grads);

// Number of decoder column evaluations since the last reset.
std::uint64_t mlp_evaluations();
void reset_mlp_evaluations();

// Adam with bias correction (PyTorch placement of epsilon).
template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void reset(std::size_t n) {
    m.assign(n, T(0));
    v.assign(n, T(0));
    step = 0;
  }
};

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& st, double lr) {
  if (params.size() != grads.size()) throw InvalidArgument("adam_step: shape mismatch");
  if (st.m.empty() && st.step == 0) st.reset(params.size());
  if (st.m.size() != params.size() || st.v.size() != params.size())
    throw InvalidArgument("adam_step: state shape mismatch");
  ++st.step;
  const double b1 = st.beta1, b2 = st.beta2;
  const double bc1 = 1 - std::pow(b1, static_cast<double>(st.step));
  const double bc2 = 1 - std::pow(b2, static_cast<double>(st.step));
  const double step_size = lr / bc1;
  const double inv_sqrt_bc2 = 1 / std::sqrt(bc2);
  T* p = params.data();
  const T* g = grads.data();
  T* m = st.m.data();
  T* v = st.v.data();
  const std::size_t n = params.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = g[i];
    const double mi = b1 * m[i] + (1 - b1) * gi;
    const double vi = b2 * v[i] + (1 - b2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    p[i] = static_cast<T>(p[i] - step_size * mi / (std::sqrt(vi) * inv_sqrt_bc2 + st.eps));
  }
}

}  // namespace fvv

#endif  // FVV_DECODER_H_
