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

#include "fvv/trainer.h"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "fvv/codec.h"
#include "json.hpp"

namespace fvv {

using nlohmann::json;

namespace {

bool strictly_increasing(const std::vector<int>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] <= v[i - 1]) return false;
  return true;
}

bool contains(const std::vector<int>& v, int x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

std::vector<int> scale_list(const std::vector<int>& v, double factor) {
  std::vector<int> out;
  for (int x : v) {
    int s = std::max(1, static_cast<int>(std::lround(x * factor)));
    if (!out.empty() && s <= out.back()) s = out.back() + 1;
    out.push_back(s);
  }
  return out;
}

// Upscales in [begin, end).
int upscales_between(const TrainConfig& cfg, int begin, int end) {
  int n = 0;
  for (int u : cfg.upscale_pass1) n += (u >= begin && u < end);
  for (int u : cfg.upscale_pass2) n += (u >= begin && u < end);
  return n;
}

int next_downscale_after(const TrainConfig& cfg, int iter) {
  for (int d : cfg.downscale_at)
    if (d > iter) return d;
  return std::numeric_limits<int>::max();
}

int initial_level(const TrainConfig& cfg) {
  return upscales_between(cfg, 1, next_downscale_after(cfg, 1));
}

}  // namespace

void TrainConfig::validate() const {
  if (group_size < 1) throw InvalidArgument("group_size must be >= 1");
  if (iters_per_group < 1) throw InvalidArgument("iters_per_group must be >= 1");
  if (batch_rays < 1) throw InvalidArgument("batch_rays must be >= 1");
  if (!strictly_increasing(upscale_pass1) || !strictly_increasing(upscale_pass2) ||
      !strictly_increasing(downscale_at))
    throw InvalidArgument("schedules must be strictly increasing");
  if (!upscale_pass1.empty() && !upscale_pass2.empty() &&
      upscale_pass2.front() <= upscale_pass1.back())
    throw InvalidArgument("second pass must follow the first");
  if (occ_every < 1) throw InvalidArgument("occ_every must be >= 1");
  for (int d : full_dims)
    if (d < 2) throw InvalidArgument("full_dims must be >= 2");
  if (channels < 1 || mlp_width < 1 || posenc_levels < 0)
    throw InvalidArgument("bad model dimensions");
  if (!(render.step > 0)) throw InvalidArgument("render step must be > 0");
}

TrainConfig scale_schedule(const TrainConfig& cfg, int iters) {
  TrainConfig out = cfg;
  const double f = static_cast<double>(iters) / kReferenceIters;
  out.iters_per_group = iters;
  out.upscale_pass1 = scale_list(cfg.upscale_pass1, f);
  out.upscale_pass2 = scale_list(cfg.upscale_pass2, f);
  out.downscale_at = scale_list(cfg.downscale_at, f);
  out.rayfilter_at = std::max(1, static_cast<int>(std::lround(cfg.rayfilter_at * f)));
  out.occ_every = std::max(1, static_cast<int>(std::lround(cfg.occ_every * f)));
  if (!out.upscale_pass1.empty() && !out.upscale_pass2.empty() &&
      out.upscale_pass2.front() <= out.upscale_pass1.back())
    throw InvalidArgument("scale_schedule: iteration budget too small for the schedule");
  return out;
}

TrainConfig fixture_train_config() {
  TrainConfig cfg;
  cfg.group_size = 4;
  cfg.batch_rays = 1024;
  cfg.full_dims = {48, 48, 48};
  cfg.render.step = 1.0 / 47.0;
  cfg = scale_schedule(cfg, 4000);
  return cfg;
}

Dims3 dims_at_level(const Dims3& full_dims, int level) {
  Dims3 d;
  const double f = std::exp2(-level / 3.0);
  for (int a = 0; a < 3; ++a) d[a] = std::max(2, static_cast<int>(std::lround(full_dims[a] * f)));
  return d;
}

int downscale_level(const TrainConfig& cfg, int iter) {
  return upscales_between(cfg, iter, next_downscale_after(cfg, iter));
}

ActionSet make_actions(std::initializer_list<ScheduleAction> actions) {
  ActionSet s;
  for (ScheduleAction a : actions) s.add(a);
  return s;
}

std::string to_string(ActionSet a) {
  std::string s = "{";
  auto put = [&](ScheduleAction x, const char* name) {
    if (!a.has(x)) return;
    if (s.size() > 1) s += ", ";
    s += name;
  };
  put(ScheduleAction::kUpscaleX2, "UpscaleX2");
  put(ScheduleAction::kDownscaleToBase, "DownscaleToBase");
  put(ScheduleAction::kUpdateOccupancy, "UpdateOccupancy");
  put(ScheduleAction::kRayFilter, "RayFilter");
  if (s.size() == 1) s += "None";
  return s + "}";
}

ActionSet schedule_action(int iter, const TrainConfig& cfg) {
  if (iter < 1 || iter > cfg.iters_per_group)
    throw InvalidArgument("schedule_action: iteration out of range");
  ActionSet s;
  if (contains(cfg.upscale_pass1, iter) || contains(cfg.upscale_pass2, iter))
    s.add(ScheduleAction::kUpscaleX2);
  if (contains(cfg.downscale_at, iter)) s.add(ScheduleAction::kDownscaleToBase);
  if (iter == cfg.rayfilter_at) s.add(ScheduleAction::kRayFilter);
  if (iter % cfg.occ_every == 0 && iter != cfg.rayfilter_at)
    s.add(ScheduleAction::kUpdateOccupancy);
  return s;
}

void GroupModel::refresh_occupancy(double lambda_th) {
  occ.clear();
  for (const FrameField& f : fields) occ.push_back(update_occupancy(f.sigma, lambda_th));
}

std::uint64_t checksum(const GroupModel& g) {
  std::uint64_t h = checksum(g.mlp);
  for (const FrameField& f : g.fields) h = h * 1099511628211ull ^ checksum(f);
  return h;
}

GroupModel init_group(const GroupModel* prev, const TrainConfig& cfg, const Bbox& bbox,
                      int group_index, int first_frame, int n_frames) {
  if (n_frames < 1) throw InvalidArgument("init_group: empty group");
  const Dims3 base = dims_at_level(cfg.full_dims, initial_level(cfg));
  GroupModel g;
  g.group_index = group_index;
  g.first_frame = first_frame;
  if (prev != nullptr) {
    if (prev->fields.empty()) throw InvalidState("init_group: previous group is empty");
    if (!(prev->bbox() == bbox)) throw InvalidState("init_group: bounding box mismatch");
    const FrameField seed = rescale(prev->fields.back(), base);
    for (int i = 0; i < n_frames; ++i) {
      g.fields.push_back(seed);
      g.fields.back().frame_index = first_frame + i;
    }
    g.mlp = prev->mlp;
  } else {
    for (int i = 0; i < n_frames; ++i)
      g.fields.push_back(make_field(base, bbox, cfg.channels, cfg.density_init, cfg.feature_init,
                                    first_frame + i));
    g.mlp = make_decoder(3 * cfg.channels, cfg.posenc_levels, cfg.mlp_width, cfg.seed + 7919);
  }
  g.refresh_occupancy(cfg.lambda_th);
  return g;
}

double temporal_l1(const FrameField& a, const FrameField& b, FrameField* grad_a,
                   FrameField* grad_b, double scale) {
  if (!same_shape(a, b)) throw InvalidArgument("temporal_l1: shape mismatch");
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  double total = 0;
  for (int t = 0; t < 4; ++t) {
    const std::size_t n = ta[t].size();
    const float* pa = ta[t].data();
    const float* pb = tb[t].data();
    float* ga = grad_a ? grad_a->tensors()[t].data() : nullptr;
    float* gb = grad_b ? grad_b->tensors()[t].data() : nullptr;
    const float g = static_cast<float>(scale / n);
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const float d = pa[i] - pb[i];
      sum += std::abs(d);
      const float s = d > 0 ? g : (d < 0 ? -g : 0.f);
      if (ga) ga[i] += s;
      if (gb) gb[i] -= s;
    }
    total += sum / n;
  }
  return total;
}

namespace {

// Scratch buffers reused across iterations.
struct Workspace {
  std::vector<MarchResult> marches;
  MlpBatch batch;
  std::vector<double> d_out;
  std::vector<double> d_in;
  std::vector<std::vector<FrameField>> worker_grads;  // [worker][frame]
  DecoderMLP mlp_grad;
};

FrameField tail_at_resolution(const FrameField& tail, const GroupModel& g) {
  if (!(tail.sigma.bbox == g.bbox())) throw InvalidState("previous tail has a different bbox");
  if (tail.dims() == g.dims() && same_shape(tail, g.fields.front())) return tail;
  return rescale(tail, g.dims());
}

// Photometric forward (and optionally backward) over one batch. Gradients
// land in ws.worker_grads[0] and ws.mlp_grad.
double photometric_pass(const GroupModel& g, std::span<const TrainRay> batch,
                        const TrainConfig& cfg, Workspace& ws, bool want_grads) {
  const int b = static_cast<int>(batch.size());
  if (b == 0) return 0;
  const DecoderMLP& mlp = g.mlp;
  const int fdim = mlp.feature_dim;
  const int edim = posenc_dim(mlp.posenc_levels);
  const RenderOptions& ro = cfg.render;
  const int workers = std::clamp(cfg.threads, 1, b);

  ws.marches.resize(b);
  ws.batch.resize(mlp, b);
  auto march_chunk = [&](int begin, int end) {
    std::vector<float> enc(edim);
    for (int k = begin; k < end; ++k) {
      const TrainRay& tr = batch[k];
      if (tr.frame < 0 || tr.frame >= g.size())
        throw InvalidArgument("batch ray references a frame outside the group");
      ws.marches[k] = march_ray(tr.ray, g.fields[tr.frame], g.occ[tr.frame], ro);
      const MarchResult& m = ws.marches[k];
      for (int c = 0; c < fdim; ++c) ws.batch.input[static_cast<std::size_t>(c) * b + k] = m.f_tilde[c];
      posenc(tr.ray.dir, mlp.posenc_levels, enc);
      for (int c = 0; c < edim; ++c)
        ws.batch.input[static_cast<std::size_t>(fdim + c) * b + k] = enc[c];
    }
  };
  auto run_parallel = [&](const std::function<void(int, int, int)>& fn) {
    if (workers == 1) {
      fn(0, 0, b);
      return;
    }
    std::vector<std::thread> pool;
    const int per = (b + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int begin = w * per, end = std::min(b, begin + per);
      if (begin < end) pool.emplace_back(fn, w, begin, end);
    }
    for (auto& t : pool) t.join();
  };
  run_parallel([&](int, int begin, int end) { march_chunk(begin, end); });
  mlp_forward_batch(mlp, ws.batch);

  double loss = 0;
  ws.d_out.assign(static_cast<std::size_t>(3) * b, 0.0);
  std::vector<double> d_acc(b, 0.0);
  const double norm = 1.0 / (3.0 * b);
  for (int k = 0; k < b; ++k) {
    const double acc = ws.marches[k].acc;
    for (int c = 0; c < 3; ++c) {
      const double dec = ws.batch.output[static_cast<std::size_t>(c) * b + k];
      const double out = dec * acc + ro.background[c] * (1 - acc);
      const double err = out - batch[k].target[c];
      loss += err * err;
      const double d = 2 * err * norm;
      ws.d_out[static_cast<std::size_t>(c) * b + k] = d * acc;
      d_acc[k] += d * (dec - ro.background[c]);
    }
  }
  loss *= norm;
  if (!want_grads) return loss;

  ws.d_in.assign(static_cast<std::size_t>(mlp.input_dim()) * b, 0.0);
  mlp_backward_batch(mlp, ws.batch, ws.d_out, ws.mlp_grad, ws.d_in);

  if (static_cast<int>(ws.worker_grads.size()) < workers) ws.worker_grads.resize(workers);
  for (int w = 1; w < workers; ++w) {
    auto& wg = ws.worker_grads[w];
    if (wg.size() != g.fields.size() || !same_shape(wg.front(), g.fields.front())) {
      wg.clear();
      for (const FrameField& f : g.fields) wg.push_back(zeros_like(f));
    }
  }
  run_parallel([&](int w, int begin, int end) {
    std::vector<double> d_f(fdim);
    for (int k = begin; k < end; ++k) {
      if (ws.marches[k].samples.empty()) continue;
      for (int c = 0; c < fdim; ++c) d_f[c] = ws.d_in[static_cast<std::size_t>(c) * b + k];
      const int frame = batch[k].frame;
      backward_march(ws.marches[k], d_f, d_acc[k], g.fields[frame], ro,
                     ws.worker_grads[w][frame]);
    }
  });
  for (int w = 1; w < workers; ++w) {
    for (std::size_t f = 0; f < g.fields.size(); ++f) {
      auto dst = ws.worker_grads[0][f].tensors();
      auto src = ws.worker_grads[w][f].tensors();
      for (int t = 0; t < 4; ++t) {
        for (std::size_t i = 0; i < dst[t].size(); ++i) dst[t][i] += src[t][i];
        std::fill(src[t].begin(), src[t].end(), 0.f);
      }
    }
  }
  return loss;
}

Losses regularizers(const GroupModel& g, const FrameField* tail, const TrainConfig& cfg,
                    std::vector<FrameField>* grads) {
  Losses l;
  for (int i = 0; i + 1 < g.size(); ++i)
    l.intra += temporal_l1(g.fields[i], g.fields[i + 1], grads ? &(*grads)[i] : nullptr,
                           grads ? &(*grads)[i + 1] : nullptr, cfg.lambda_intra);
  if (tail != nullptr)
    l.inter = temporal_l1(g.fields[0], *tail, grads ? &(*grads)[0] : nullptr, nullptr,
                          cfg.lambda_inter);
  return l;
}

}  // namespace

Losses compute_losses(const GroupModel& group, std::span<const TrainRay> batch,
                      const FrameField* prev_tail, const TrainConfig& cfg) {
  std::optional<FrameField> tail;
  if (prev_tail != nullptr) tail = tail_at_resolution(*prev_tail, group);
  Workspace ws;
  Losses l = regularizers(group, tail ? &*tail : nullptr, cfg, nullptr);
  TrainConfig single = cfg;
  single.threads = 1;
  l.color = photometric_pass(group, batch, single, ws, false);
  l.total = l.color + cfg.lambda_intra * l.intra + cfg.lambda_inter * l.inter;
  return l;
}

bool ray_hits_occupied(const Ray& ray, const OccupancyGrid& occ) {
  if (!ray.hit) return false;
  const Bbox& box = occ.bbox;
  int idx[3], step[3];
  double t_max[3], t_delta[3];
  const double t0 = ray.t_near;
  const Vec3 p = ray.origin + ray.dir * t0;
  for (int a = 0; a < 3; ++a) {
    const double e = (box.max[a] - box.min[a]) / (occ.dims[a] - 1);
    const double u = std::clamp((p[a] - box.min[a]) / e, 0.0, static_cast<double>(occ.dims[a] - 1));
    // Cell i spans lattice coordinates [i - 0.5, i + 0.5).
    idx[a] = std::clamp(static_cast<int>(std::floor(u + 0.5)), 0, occ.dims[a] - 1);
    const double d = ray.dir[a];
    if (d > 0) {
      step[a] = 1;
      t_max[a] = t0 + (idx[a] + 0.5 - u) * e / d;
      t_delta[a] = e / d;
    } else if (d < 0) {
      step[a] = -1;
      t_max[a] = t0 + (idx[a] - 0.5 - u) * e / d;
      t_delta[a] = -e / d;
    } else {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }
  while (true) {
    if (occ.at(idx[0], idx[1], idx[2])) return true;
    int a = 0;
    if (t_max[1] < t_max[a]) a = 1;
    if (t_max[2] < t_max[a]) a = 2;
    if (t_max[a] > ray.t_far) return false;
    idx[a] += step[a];
    if (idx[a] < 0 || idx[a] >= occ.dims[a]) return false;
    t_max[a] += t_delta[a];
  }
}

std::vector<TrainRay> filter_rays(std::span<const TrainRay> rays,
                                  std::span<const OccupancyGrid> occ) {
  std::vector<TrainRay> out;
  for (const TrainRay& r : rays) {
    if (r.frame < 0 || r.frame >= static_cast<int>(occ.size()))
      throw InvalidArgument("filter_rays: frame without occupancy grid");
    if (ray_hits_occupied(r.ray, occ[r.frame])) out.push_back(r);
  }
  return out;
}

std::string TrainLog::to_json() const {
  json j;
  j["group_index"] = group_index;
  j["seconds"] = seconds;
  j["rays_after_filter"] = rays_after_filter;
  json changes = json::array();
  for (const auto& [iter, d] : resolution_changes) changes.push_back({{"iter", iter}, {"dims", d}});
  j["resolution_changes"] = changes;
  json it = json::array();
  for (const TrainLogEntry& e : entries)
    it.push_back({{"iter", e.iter},
                  {"color", e.losses.color},
                  {"intra", e.losses.intra},
                  {"inter", e.losses.inter},
                  {"total", e.losses.total}});
  j["iterations"] = it;
  return j.dump();
}

GroupModel train_group(const Dataset& ds, int group_index, const GroupModel* prev,
                       const TrainConfig& cfg, TrainLog* log) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const int first = group_index * cfg.group_size;
  if (group_index < 0 || first >= ds.n_frames())
    throw InvalidArgument("train_group: dataset does not cover group " +
                          std::to_string(group_index));
  const int n = std::min(cfg.group_size, ds.n_frames() - first);
  const std::vector<int> views = cfg.views.empty() ? ds.train_views() : cfg.views;
  if (views.empty()) throw InvalidArgument("train_group: no training views");
  for (int v : views)
    if (v < 0 || v >= ds.n_views()) throw InvalidArgument("train_group: bad view index");

  GroupModel g = init_group(prev, cfg, ds.bbox, group_index, first, n);
  std::optional<FrameField> tail;
  if (prev != nullptr) tail = tail_at_resolution(prev->fields.back(), g);

  // Rays are shared by all frames; index = view slot * pixels + pixel.
  std::vector<Ray> view_rays;
  std::vector<int> view_offset;
  for (int v : views) {
    const Camera& cam = ds.cameras[v];
    view_offset.push_back(static_cast<int>(view_rays.size()));
    for (int p = 0; p < cam.width * cam.height; ++p)
      view_rays.push_back(generate_ray(cam, p % cam.width + 0.5, p / cam.width + 0.5, ds.bbox));
  }
  auto make_train_ray = [&](int frame, int slot, int pixel) {
    TrainRay r;
    r.frame = frame;
    r.view = views[slot];
    r.pixel = pixel;
    r.ray = view_rays[view_offset[slot] + pixel];
    const float* px = ds.frames[first + frame][r.view].rgb.data() + static_cast<std::size_t>(pixel) * 3;
    r.target = {px[0], px[1], px[2]};
    return r;
  };
  struct RayRef {
    int frame, slot, pixel;
  };
  std::vector<RayRef> pool;
  for (int f = 0; f < n; ++f)
    for (int s = 0; s < static_cast<int>(views.size()); ++s) {
      const Camera& cam = ds.cameras[views[s]];
      for (int p = 0; p < cam.width * cam.height; ++p) pool.push_back({f, s, p});
    }

  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(group_index));
  Workspace ws;
  ws.worker_grads.resize(1);
  auto reset_field_grads = [&]() {
    ws.worker_grads[0].clear();
    for (const FrameField& f : g.fields) ws.worker_grads[0].push_back(zeros_like(f));
    for (std::size_t w = 1; w < ws.worker_grads.size(); ++w) ws.worker_grads[w].clear();
  };
  reset_field_grads();
  ws.mlp_grad = zeros_like(g.mlp);

  std::vector<std::array<AdamState<float>, 4>> field_adam(n);
  std::array<AdamState<float>, 6> mlp_adam;
  int level = initial_level(cfg);
  if (log) {
    *log = TrainLog{};
    log->group_index = group_index;
    log->resolution_changes.push_back({0, g.dims()});
  }

  auto set_level = [&](int new_level, int iter) {
    new_level = std::max(0, new_level);
    const Dims3 d = dims_at_level(cfg.full_dims, new_level);
    level = new_level;
    if (d == g.dims()) return;
    for (FrameField& f : g.fields) f = rescale(f, d);
    g.refresh_occupancy(cfg.lambda_th);
    for (auto& st : field_adam)
      for (auto& s : st) s = AdamState<float>{};
    reset_field_grads();
    if (prev != nullptr) tail = tail_at_resolution(prev->fields.back(), g);
    if (log) log->resolution_changes.push_back({iter, d});
  };

  std::vector<TrainRay> batch(cfg.batch_rays);
  for (int iter = 1; iter <= cfg.iters_per_group; ++iter) {
    const ActionSet act = schedule_action(iter, cfg);
    if (act.has(ScheduleAction::kDownscaleToBase)) set_level(downscale_level(cfg, iter), iter);
    if (act.has(ScheduleAction::kUpscaleX2)) set_level(level - 1, iter);
    if (act.has(ScheduleAction::kUpdateOccupancy)) g.refresh_occupancy(cfg.lambda_th);
    if (act.has(ScheduleAction::kRayFilter)) {
      std::vector<RayRef> kept;
      for (const RayRef& r : pool)
        if (ray_hits_occupied(view_rays[view_offset[r.slot] + r.pixel], g.occ[r.frame]))
          kept.push_back(r);
      // An empty filter result would stall training; keep the old pool.
      if (!kept.empty()) pool = std::move(kept);
      if (log) log->rays_after_filter = pool.size();
    }

    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (TrainRay& r : batch) {
      const RayRef& ref = pool[pick(rng)];
      r = make_train_ray(ref.frame, ref.slot, ref.pixel);
    }

    Losses l = regularizers(g, tail ? &*tail : nullptr, cfg, &ws.worker_grads[0]);
    l.color = photometric_pass(g, batch, cfg, ws, true);
    l.total = l.color + cfg.lambda_intra * l.intra + cfg.lambda_inter * l.inter;
    if (log) log->entries.push_back({iter, l});

    for (int f = 0; f < n; ++f) {
      auto params = g.fields[f].tensors();
      auto grads = ws.worker_grads[0][f].tensors();
      for (int t = 0; t < 4; ++t) {
        adam_step<float>(params[t], grads[t], field_adam[f][t], cfg.lr_field);
        std::fill(grads[t].begin(), grads[t].end(), 0.f);
      }
    }
    auto mp = g.mlp.tensors();
    auto mg = ws.mlp_grad.tensors();
    for (int t = 0; t < 6; ++t) {
      adam_step<float>(mp[t], mg[t], mlp_adam[t], cfg.lr_mlp);
      std::fill(mg[t].begin(), mg[t].end(), 0.f);
    }
  }
  g.refresh_occupancy(cfg.lambda_th);
  if (log) {
    log->seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }
  return g;
}

std::vector<GroupModel> train_sequence(
    const Dataset& ds, const TrainConfig& cfg,
    const std::function<void(const GroupModel&, const TrainLog&)>& on_group) {
  std::vector<GroupModel> groups;
  const int n_groups = (ds.n_frames() + cfg.group_size - 1) / cfg.group_size;
  for (int gi = 0; gi < n_groups; ++gi) {
    TrainLog log;
    GroupModel g = train_group(ds, gi, groups.empty() ? nullptr : &groups.back(), cfg, &log);
    if (on_group) on_group(g, log);
    groups.push_back(std::move(g));
  }
  return groups;
}

namespace {

json dims_json(const Dims3& d) { return json::array({d[0], d[1], d[2]}); }

Dims3 json_dims(const json& j) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() != 3) throw FormatError("dims must have three entries");
  return {v[0], v[1], v[2]};
}

json config_json(const TrainConfig& c) {
  json j;
  j["group_size"] = c.group_size;
  j["iters_per_group"] = c.iters_per_group;
  j["batch_rays"] = c.batch_rays;
  j["lr_field"] = c.lr_field;
  j["lr_mlp"] = c.lr_mlp;
  j["lambda_intra"] = c.lambda_intra;
  j["lambda_inter"] = c.lambda_inter;
  j["upscale_pass1"] = c.upscale_pass1;
  j["upscale_pass2"] = c.upscale_pass2;
  j["downscale_at"] = c.downscale_at;
  j["rayfilter_at"] = c.rayfilter_at;
  j["occ_every"] = c.occ_every;
  j["lambda_th"] = c.lambda_th;
  j["full_dims"] = dims_json(c.full_dims);
  j["channels"] = c.channels;
  j["posenc_levels"] = c.posenc_levels;
  j["mlp_width"] = c.mlp_width;
  j["density_init"] = c.density_init;
  j["feature_init"] = c.feature_init;
  j["step"] = c.render.step;
  j["background"] = {c.render.background.x, c.render.background.y, c.render.background.z};
  j["stop_transmittance"] = c.render.stop_transmittance;
  j["density_shift"] = c.render.density_shift;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["views"] = c.views;
  return j;
}

TrainConfig json_config(const json& j) {
  TrainConfig c;
  // "scale_to" rescales the default schedule before explicit overrides.
  if (j.contains("scale_to")) c = scale_schedule(c, j["scale_to"].get<int>());
  c.group_size = j.value("group_size", c.group_size);
  c.iters_per_group = j.value("iters_per_group", c.iters_per_group);
  c.batch_rays = j.value("batch_rays", c.batch_rays);
  c.lr_field = j.value("lr_field", c.lr_field);
  c.lr_mlp = j.value("lr_mlp", c.lr_mlp);
  c.lambda_intra = j.value("lambda_intra", c.lambda_intra);
  c.lambda_inter = j.value("lambda_inter", c.lambda_inter);
  c.upscale_pass1 = j.value("upscale_pass1", c.upscale_pass1);
  c.upscale_pass2 = j.value("upscale_pass2", c.upscale_pass2);
  c.downscale_at = j.value("downscale_at", c.downscale_at);
  c.rayfilter_at = j.value("rayfilter_at", c.rayfilter_at);
  c.occ_every = j.value("occ_every", c.occ_every);
  c.lambda_th = j.value("lambda_th", c.lambda_th);
  if (j.contains("full_dims")) c.full_dims = json_dims(j["full_dims"]);
  c.channels = j.value("channels", c.channels);
  c.posenc_levels = j.value("posenc_levels", c.posenc_levels);
  c.mlp_width = j.value("mlp_width", c.mlp_width);
  c.density_init = j.value("density_init", c.density_init);
  c.feature_init = j.value("feature_init", c.feature_init);
  c.render.step = j.value("step", c.render.step);
  if (j.contains("background")) {
    const auto bg = j["background"].get<std::vector<double>>();
    if (bg.size() != 3) throw FormatError("background must have three entries");
    c.render.background = {bg[0], bg[1], bg[2]};
  }
  c.render.stop_transmittance = j.value("stop_transmittance", c.render.stop_transmittance);
  c.render.density_shift = j.value("density_shift", c.render.density_shift);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.views = j.value("views", c.views);
  return c;
}

std::string group_dir_name(int g) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "group_%03d", g);
  return buf;
}

std::string frame_file_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%03d.fvvr", i);
  return buf;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) { return config_json(cfg).dump(2); }

TrainConfig train_config_from_json(const std::string& text) {
  try {
    TrainConfig c = json_config(json::parse(text));
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad training config: ") + e.what());
  }
}

void save_group_checkpoint(const std::filesystem::path& dir, const GroupModel& g,
                           const TrainLog& log) {
  const auto gdir = dir / group_dir_name(g.group_index);
  std::filesystem::create_directories(gdir);
  for (int i = 0; i < g.size(); ++i) write_raw_field(gdir / frame_file_name(i), g.fields[i]);
  write_raw_mlp(gdir / "mlp.fvvr", g.mlp);
  std::ofstream out(gdir / "train_log.json", std::ios::trunc);
  out << log.to_json() << "\n";
  json meta{{"group_index", g.group_index}, {"first_frame", g.first_frame}, {"n_frames", g.size()}};
  std::ofstream m(gdir / "group.json", std::ios::trunc);
  m << meta.dump(2) << "\n";
}

void save_checkpoint_manifest(const std::filesystem::path& dir, const CheckpointInfo& info,
                              int n_groups) {
  std::filesystem::create_directories(dir);
  json j;
  j["config"] = config_json(info.config);
  j["bbox"] = {{"min", {info.bbox.min.x, info.bbox.min.y, info.bbox.min.z}},
               {"max", {info.bbox.max.x, info.bbox.max.y, info.bbox.max.z}}};
  j["frame_count"] = info.frame_count;
  j["focal_ratio"] = info.focal_ratio;
  j["orbit_radius"] = info.orbit_radius;
  json groups = json::array();
  for (int g = 0; g < n_groups; ++g) groups.push_back(group_dir_name(g));
  j["groups"] = groups;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << j.dump(2) << "\n";
}

std::vector<GroupModel> load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("missing checkpoint manifest in " + dir.string());
  std::vector<GroupModel> groups;
  try {
    const json j = json::parse(in);
    CheckpointInfo ci;
    ci.config = json_config(j.at("config"));
    const auto mn = j.at("bbox").at("min").get<std::vector<double>>();
    const auto mx = j.at("bbox").at("max").get<std::vector<double>>();
    ci.bbox = {{mn.at(0), mn.at(1), mn.at(2)}, {mx.at(0), mx.at(1), mx.at(2)}};
    ci.frame_count = j.at("frame_count").get<int>();
    ci.focal_ratio = j.value("focal_ratio", ci.focal_ratio);
    ci.orbit_radius = j.value("orbit_radius", ci.orbit_radius);
    for (const json& name : j.at("groups")) {
      const auto gdir = dir / name.get<std::string>();
      std::ifstream gm(gdir / "group.json");
      if (!gm) throw FormatError("missing " + (gdir / "group.json").string());
      const json meta = json::parse(gm);
      GroupModel g;
      g.group_index = meta.at("group_index").get<int>();
      g.first_frame = meta.at("first_frame").get<int>();
      const int n = meta.at("n_frames").get<int>();
      for (int i = 0; i < n; ++i) g.fields.push_back(read_raw_field(gdir / frame_file_name(i)));
      g.mlp = read_raw_mlp(gdir / "mlp.fvvr");
      g.refresh_occupancy(ci.config.lambda_th);
      groups.push_back(std::move(g));
    }
    if (info) *info = ci;
  } catch (const json::exception& e) {
    throw FormatError("corrupt checkpoint manifest: " + std::string(e.what()));
  }
  return groups;
}

}  // namespace fvv
