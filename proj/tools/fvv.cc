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

// fvv: synth, train, pack, render, eval and serve.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fvv/codec.h"
#include "fvv/evalkit.h"
#include "fvv/image.h"
#include "fvv/scene.h"
#include "fvv/service.h"
#include "fvv/trainer.h"

namespace {

using namespace fvv;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw InvalidArgument("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + p.string());
  out << text;
}

// "A..B", half-open.
std::pair<int, int> parse_range(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos) throw InvalidArgument("--frames expects A..B");
  int a = 0, b = 0;
  const std::string sa = s.substr(0, dots), sb = s.substr(dots + 2);
  auto ra = std::from_chars(sa.data(), sa.data() + sa.size(), a);
  auto rb = std::from_chars(sb.data(), sb.data() + sb.size(), b);
  if (ra.ec != std::errc() || rb.ec != std::errc() || ra.ptr != sa.data() + sa.size() ||
      rb.ptr != sb.data() + sb.size() || a < 0 || b <= a)
    throw InvalidArgument("--frames expects A..B with 0 <= A < B");
  return {a, b};
}

std::vector<int> parse_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int v = 0;
    auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (r.ec != std::errc() || r.ptr != item.data() + item.size())
      throw InvalidArgument("bad view list '" + s + "'");
    out.push_back(v);
  }
  return out;
}

double orbit_radius(const Dataset& ds) {
  const Vec3 centre = (ds.bbox.min + ds.bbox.max) * 0.5;
  double r = 0;
  for (const Camera& c : ds.cameras) r += norm(c.translation - centre);
  return r / ds.cameras.size();
}

int cmd_synth(const std::string& scene, int frames, const std::string& out) {
  SynthSpec spec = scene.empty() ? fixture_spec(frames) : synth_spec_from_json(slurp(scene));
  const Dataset ds = synthesize(spec);
  write_dataset(ds, out);
  spit(std::filesystem::path(out) / "scene.json", synth_spec_to_json(spec));
  std::cout << "wrote " << ds.n_frames() << " frames x " << ds.n_views() << " views to " << out
            << "\n";
  return 0;
}

int cmd_train(const std::string& data, const std::string& config, const std::string& out,
              const std::string& frames, std::int64_t seed, int threads) {
  Dataset ds = load_dataset(data);
  TrainConfig cfg = config.empty() ? fixture_train_config() : train_config_from_json(slurp(config));
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (threads > 0) cfg.threads = threads;
  if (!frames.empty()) {
    const auto [a, b] = parse_range(frames);
    if (b > ds.n_frames()) throw InvalidArgument("--frames exceeds the dataset");
    ds.frames = std::vector<std::vector<Image>>(ds.frames.begin() + a, ds.frames.begin() + b);
  }
  CheckpointInfo info;
  info.config = cfg;
  info.bbox = ds.bbox;
  info.frame_count = ds.n_frames();
  info.focal_ratio = ds.cameras.front().fx / ds.cameras.front().width;
  info.orbit_radius = orbit_radius(ds);
  const int n_groups = (ds.n_frames() + cfg.group_size - 1) / cfg.group_size;
  save_checkpoint_manifest(out, info, 0);
  int done = 0;
  train_sequence(ds, cfg, [&](const GroupModel& g, const TrainLog& log) {
    save_group_checkpoint(out, g, log);
    save_checkpoint_manifest(out, info, ++done);
    const Losses& last = log.entries.back().losses;
    std::printf("group %d/%d: %.1f s, final color %.6f intra %.6f inter %.6f\n", g.group_index + 1,
                n_groups, log.seconds, last.color, last.intra, last.inter);
    std::fflush(stdout);
  });
  return 0;
}

int cmd_pack(const std::string& ckpt, const std::string& out, int crf, const std::string& backend) {
  CheckpointInfo info;
  const std::vector<GroupModel> groups = load_checkpoint(ckpt, &info);
  PackOptions opts;
  opts.encoder.backend = parse_backend(backend);
  opts.encoder.crf = crf;
  opts.lambda_th = info.config.lambda_th;
  opts.focal_ratio = info.focal_ratio;
  opts.orbit_radius = info.orbit_radius;
  opts.step = info.config.render.step;
  opts.background = info.config.render.background;
  const std::vector<std::uint8_t> bytes = pack_container(groups, opts);
  write_file(out, bytes);
  std::cout << breakdown_csv(size_breakdown(bytes));
  return 0;
}

int cmd_render(const std::string& container, int frame, const std::string& pose, int width,
               int height, const std::string& out, int threads) {
  const ServeState state = load_serve_state(container, threads);
  const std::string text = std::filesystem::exists(pose) ? slurp(pose) : pose;
  const auto png = handle_render_request(state, frame, parse_pose_json(text), width, height);
  write_file(out, png);
  return 0;
}

int cmd_eval(const std::string& container, const std::string& data, const std::string& views,
             const std::string& out, int threads) {
  const std::vector<std::uint8_t> bytes = read_file(container);
  const Container c = unpack_container(bytes);
  const Dataset ds = load_dataset(data);
  const std::vector<int> v = views.empty() ? ds.heldout_views : parse_list(views);
  const auto records = evaluate_container(c, ds, v, threads);
  spit(out, metrics_csv(records));
  const SizeBreakdown s = size_breakdown(bytes);
  std::filesystem::path bpath(out);
  bpath.replace_filename(bpath.stem().string() + "_breakdown.csv");
  spit(bpath, breakdown_csv(s));
  const RdRow row{c.meta.crf, s.total(), mean_psnr(records), mean_ssim(records)};
  std::cout << rd_report(std::span<const RdRow>(&row, 1), c.frame_count());
  return 0;
}

int cmd_serve(const std::string& container, const std::string& host, int port, int threads) {
  const ServeState state = load_serve_state(container, threads);
  run_server(state, host, port, [](int bound, const std::function<void()>&) {
    std::cerr << "listening on port " << bound << "\n";
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tri-plane free-viewpoint video: train, compress and serve."};
  app.require_subcommand(1);

  std::string scene, data, out, config, frames, ckpt, backend = "builtin", container, pose, views,
                                                  host = "127.0.0.1";
  int n_frames = 8, crf = 28, frame = 0, width = 256, height = 256, port = 8080, threads = 1;
  std::int64_t seed = -1;

  auto* synth = app.add_subcommand("synth", "generate the analytic fixture dataset");
  synth->add_option("--scene", scene, "scene spec JSON (default: built-in fixture)");
  synth->add_option("--frames", n_frames, "frame count for the built-in fixture");
  synth->add_option("--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "grouped training");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--config", config, "training config JSON (default: fixture config)");
  train->add_option("--out", out, "checkpoint directory")->required();
  train->add_option("--frames", frames, "half-open frame range A..B");
  train->add_option("--seed", seed, "random seed");
  train->add_option("--threads", threads, "worker threads");

  auto* pack = app.add_subcommand("pack", "compress a checkpoint into a container");
  pack->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  pack->add_option("--out", out, "container file")->required();
  pack->add_option("--crf", crf, "external encoder CRF")->check(CLI::Range(0, 51));
  pack->add_option("--backend", backend, "external or builtin")
      ->check(CLI::IsMember({"external", "builtin"}));

  auto* render = app.add_subcommand("render", "render one frame from a container");
  render->add_option("--container", container, "container file")->required();
  render->add_option("--frame", frame, "frame index")->required();
  render->add_option("--pose", pose, "pose JSON file or inline JSON (12 numbers)")->required();
  render->add_option("--width", width, "image width");
  render->add_option("--height", height, "image height");
  render->add_option("--out", out, "PNG path")->required();
  render->add_option("--threads", threads, "worker threads");

  auto* eval = app.add_subcommand("eval", "PSNR/SSIM and size breakdown");
  eval->add_option("--container", container, "container file")->required();
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--views", views, "comma-separated views (default: held-out)");
  eval->add_option("--out", out, "metrics CSV")->required();
  eval->add_option("--threads", threads, "worker threads");

  auto* serve = app.add_subcommand("serve", "HTTP render service");
  serve->add_option("--container", container, "container file")->required();
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port");
  serve->add_option("--threads", threads, "threads per request");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(scene, n_frames, out);
    if (*train) return cmd_train(data, config, out, frames, seed, threads);
    if (*pack) return cmd_pack(ckpt, out, crf, backend);
    if (*render) return cmd_render(container, frame, pose, width, height, out, threads);
    if (*eval) return cmd_eval(container, data, views, out, threads);
    if (*serve) return cmd_serve(container, host, port, threads);
  } catch (const EnvironmentError& e) {
    std::cerr << "fvv: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "fvv: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
