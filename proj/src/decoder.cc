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

#include "fvv/decoder.h"

#include <algorithm>
#include <numbers>

#include "fvv/field.h"

namespace fvv {
namespace {

std::atomic<std::uint64_t> g_evaluations{0};

DenseLayer make_layer(int in, int out) {
  DenseLayer l;
  l.in = in;
  l.out = out;
  l.weight.assign(static_cast<std::size_t>(in) * out, 0.f);
  l.bias.assign(out, 0.f);
  return l;
}

// y (out x B) = W x (in x B) + b, with the input-index loop outermost per
// output so each column's summation order is independent of B.
void dense_forward(const DenseLayer& l, const double* x, double* y, int batch) {
  for (int o = 0; o < l.out; ++o) {
    double* yo = y + static_cast<std::size_t>(o) * batch;
    const double b = l.bias[o];
    for (int k = 0; k < batch; ++k) yo[k] = b;
    const float* w = &l.weight[static_cast<std::size_t>(o) * l.in];
    for (int i = 0; i < l.in; ++i) {
      const double wi = w[i];
      if (wi == 0) continue;
      const double* xi = x + static_cast<std::size_t>(i) * batch;
      for (int k = 0; k < batch; ++k) yo[k] += wi * xi[k];
    }
  }
}

// Accumulates dW, db and (optionally) dx for one layer given dy.
void dense_backward(const DenseLayer& l, const double* x, const double* dy, int batch,
                    DenseLayer& grad, double* dx) {
  for (int o = 0; o < l.out; ++o) {
    const double* dyo = dy + static_cast<std::size_t>(o) * batch;
    double db = 0;
    for (int k = 0; k < batch; ++k) db += dyo[k];
    grad.bias[o] += static_cast<float>(db);
    float* gw = &grad.weight[static_cast<std::size_t>(o) * l.in];
    for (int i = 0; i < l.in; ++i) {
      const double* xi = x + static_cast<std::size_t>(i) * batch;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      int k = 0;
      for (; k + 4 <= batch; k += 4) {
        s0 += dyo[k] * xi[k];
        s1 += dyo[k + 1] * xi[k + 1];
        s2 += dyo[k + 2] * xi[k + 2];
        s3 += dyo[k + 3] * xi[k + 3];
      }
      for (; k < batch; ++k) s0 += dyo[k] * xi[k];
      gw[i] += static_cast<float>((s0 + s1) + (s2 + s3));
    }
  }
  if (dx == nullptr) return;
  std::fill(dx, dx + static_cast<std::size_t>(l.in) * batch, 0.0);
  for (int o = 0; o < l.out; ++o) {
    const double* dyo = dy + static_cast<std::size_t>(o) * batch;
    const float* w = &l.weight[static_cast<std::size_t>(o) * l.in];
    for (int i = 0; i < l.in; ++i) {
      const double wi = w[i];
      if (wi == 0) continue;
      double* dxi = dx + static_cast<std::size_t>(i) * batch;
      for (int k = 0; k < batch; ++k) dxi[k] += wi * dyo[k];
    }
  }
}

}  // namespace

void posenc(Vec3 d, int levels, std::span<float> out) {
  if (levels < 0) throw InvalidArgument("posenc: negative level count");
  if (std::abs(norm(d) - 1) > 1e-6) throw InvalidArgument("posenc: direction must be unit length");
  if (out.size() != static_cast<std::size_t>(posenc_dim(levels)))
    throw InvalidArgument("posenc: output size must be 3 + 6L");
  for (int a = 0; a < 3; ++a) out[a] = static_cast<float>(d[a]);
  for (int l = 0; l < levels; ++l) {
    const double freq = std::ldexp(std::numbers::pi, l);
    for (int a = 0; a < 3; ++a) {
      out[3 + 6 * l + a] = static_cast<float>(std::sin(freq * d[a]));
      out[3 + 6 * l + 3 + a] = static_cast<float>(std::cos(freq * d[a]));
    }
  }
}

std::vector<float> posenc(Vec3 d, int levels) {
  std::vector<float> out(posenc_dim(levels));
  posenc(d, levels, out);
  return out;
}

std::size_t DecoderMLP::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

std::array<std::span<float>, 6> DecoderMLP::tensors() {
  return {std::span<float>(layers[0].weight), std::span<float>(layers[0].bias),
          std::span<float>(layers[1].weight), std::span<float>(layers[1].bias),
          std::span<float>(layers[2].weight), std::span<float>(layers[2].bias)};
}

std::array<std::span<const float>, 6> DecoderMLP::tensors() const {
  return {std::span<const float>(layers[0].weight), std::span<const float>(layers[0].bias),
          std::span<const float>(layers[1].weight), std::span<const float>(layers[1].bias),
          std::span<const float>(layers[2].weight), std::span<const float>(layers[2].bias)};
}

DecoderMLP make_decoder(int feature_dim, int posenc_levels, int width, std::uint64_t seed) {
  if (feature_dim < 1 || posenc_levels < 0 || width < 1)
    throw InvalidArgument("make_decoder: bad architecture");
  DecoderMLP mlp;
  mlp.feature_dim = feature_dim;
  mlp.posenc_levels = posenc_levels;
  const int in = mlp.input_dim();
  mlp.layers = {make_layer(in, width), make_layer(width, width), make_layer(width, 3)};
  std::mt19937_64 rng(seed);
  for (DenseLayer& l : mlp.layers) {
    const double bound = std::sqrt(6.0 / (l.in + l.out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (float& w : l.weight) w = static_cast<float>(dist(rng));
  }
  return mlp;
}

DecoderMLP zeros_like(const DecoderMLP& mlp) {
  DecoderMLP z = mlp;
  for (auto t : z.tensors()) std::fill(t.begin(), t.end(), 0.f);
  return z;
}

bool same_shape(const DecoderMLP& a, const DecoderMLP& b) {
  for (int i = 0; i < 3; ++i)
    if (a.layers[i].in != b.layers[i].in || a.layers[i].out != b.layers[i].out) return false;
  return a.feature_dim == b.feature_dim && a.posenc_levels == b.posenc_levels;
}

void validate_decoder(const DecoderMLP& mlp) {
  const auto& L = mlp.layers;
  if (L[0].in != mlp.input_dim() || L[1].in != L[0].out || L[2].in != L[1].out || L[2].out != 3)
    throw InvalidArgument("decoder layer shapes are inconsistent");
  for (const DenseLayer& l : L)
    if (l.weight.size() != static_cast<std::size_t>(l.in) * l.out ||
        l.bias.size() != static_cast<std::size_t>(l.out))
      throw InvalidArgument("decoder weight count does not match architecture");
}

std::uint64_t checksum(const DecoderMLP& mlp) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto t : mlp.tensors()) h = checksum_bytes(t.data(), t.size_bytes(), h);
  return h;
}

void MlpBatch::resize(const DecoderMLP& mlp, int b) {
  batch = b;
  input.assign(static_cast<std::size_t>(mlp.input_dim()) * b, 0.0);
  hidden1.assign(static_cast<std::size_t>(mlp.layers[0].out) * b, 0.0);
  hidden2.assign(static_cast<std::size_t>(mlp.layers[1].out) * b, 0.0);
  output.assign(static_cast<std::size_t>(3) * b, 0.0);
}

void mlp_forward_batch(const DecoderMLP& mlp, MlpBatch& batch) {
  const int b = batch.batch;
  if (batch.input.size() != static_cast<std::size_t>(mlp.input_dim()) * b)
    throw InvalidArgument("mlp_forward: input dimension mismatch");
  dense_forward(mlp.layers[0], batch.input.data(), batch.hidden1.data(), b);
  for (double& v : batch.hidden1) v = v > 0 ? v : 0;
  dense_forward(mlp.layers[1], batch.hidden1.data(), batch.hidden2.data(), b);
  for (double& v : batch.hidden2) v = v > 0 ? v : 0;
  dense_forward(mlp.layers[2], batch.hidden2.data(), batch.output.data(), b);
  for (double& v : batch.output) v = 1 / (1 + std::exp(-v));
  g_evaluations.fetch_add(static_cast<std::uint64_t>(b), std::memory_order_relaxed);
}

void mlp_backward_batch(const DecoderMLP& mlp, const MlpBatch& batch,
                        std::span<const double> d_output, DecoderMLP& grads,
                        std::span<double> d_input) {
  const int b = batch.batch;
  if (!same_shape(mlp, grads)) throw InvalidArgument("mlp_backward: gradient shape mismatch");
  if (d_output.size() != static_cast<std::size_t>(3) * b)
    throw InvalidArgument("mlp_backward: d_output must be 3 x B");
  if (!d_input.empty() && d_input.size() != static_cast<std::size_t>(mlp.input_dim()) * b)
    throw InvalidArgument("mlp_backward: d_input must be input_dim x B");
  const std::size_t width1 = mlp.layers[0].out, width2 = mlp.layers[1].out;
  std::vector<double> d_pre(3 * static_cast<std::size_t>(b));
  for (std::size_t i = 0; i < d_pre.size(); ++i) {
    const double s = batch.output[i];
    d_pre[i] = d_output[i] * s * (1 - s);
  }
  std::vector<double> d_h2(width2 * b);
  dense_backward(mlp.layers[2], batch.hidden2.data(), d_pre.data(), b, grads.layers[2],
                 d_h2.data());
  for (std::size_t i = 0; i < d_h2.size(); ++i)
    if (batch.hidden2[i] <= 0) d_h2[i] = 0;
  std::vector<double> d_h1(width1 * b);
  dense_backward(mlp.layers[1], batch.hidden1.data(), d_h2.data(), b, grads.layers[1],
                 d_h1.data());
  for (std::size_t i = 0; i < d_h1.size(); ++i)
    if (batch.hidden1[i] <= 0) d_h1[i] = 0;
  dense_backward(mlp.layers[0], batch.input.data(), d_h1.data(), b, grads.layers[0],
                 d_input.empty() ? nullptr : d_input.data());
}

namespace {

void fill_single_input(const DecoderMLP& mlp, std::span<const float> f_tilde,
                       std::span<const float> enc, MlpBatch& batch) {
  if (f_tilde.size() != static_cast<std::size_t>(mlp.feature_dim) ||
      enc.size() != static_cast<std::size_t>(posenc_dim(mlp.posenc_levels)))
    throw InvalidArgument("decoder input dimension mismatch");
  batch.resize(mlp, 1);
  std::copy(f_tilde.begin(), f_tilde.end(), batch.input.begin());
  std::copy(enc.begin(), enc.end(), batch.input.begin() + f_tilde.size());
}

}  // namespace

Vec3 mlp_forward(const DecoderMLP& mlp, std::span<const float> f_tilde,
                 std::span<const float> enc) {
  MlpBatch batch;
  fill_single_input(mlp, f_tilde, enc, batch);
  mlp_forward_batch(mlp, batch);
  return {batch.output[0], batch.output[1], batch.output[2]};
}

MlpInputGrad mlp_backward(const DecoderMLP& mlp, std::span<const float> f_tilde,
                          std::span<const float> enc, Vec3 d_rgb, DecoderMLP& grads) {
  MlpBatch batch;
  fill_single_input(mlp, f_tilde, enc, batch);
  mlp_forward_batch(mlp, batch);
  const double d_out[3] = {d_rgb.x, d_rgb.y, d_rgb.z};
  std::vector<double> d_in(mlp.input_dim());
  mlp_backward_batch(mlp, batch, d_out, grads, d_in);
  MlpInputGrad g;
  g.d_f_tilde.assign(d_in.begin(), d_in.begin() + mlp.feature_dim);
  g.d_enc.assign(d_in.begin() + mlp.feature_dim, d_in.end());
  return g;
}

std::uint64_t mlp_evaluations() { return g_evaluations.load(std::memory_order_relaxed); }
void reset_mlp_evaluations() { g_evaluations.store(0, std::memory_order_relaxed); }

}  // namespace fvv
