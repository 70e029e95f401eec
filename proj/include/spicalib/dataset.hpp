#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "spicalib/io.hpp"
#include "spicalib/serial.hpp"
#include "spicalib/twin.hpp"

namespace spicalib::dataset {

struct DatasetItem {
  int index = 0;
  uint64_t seed = 0;      // seed the kept draw used
  int resamples = 0;      // draws rejected before this one
  int faces_visible = 0;
  std::string dir;
  twin::SceneParams params;
};

struct DatasetManifest {
  int count = 0;
  uint64_t seed = 0;
  int resampled_total = 0;
  std::vector<DatasetItem> items;
};

inline serial::json manifest_to_json(const DatasetManifest& m) {
  serial::json j;
  j["count"] = m.count;
  j["seed"] = m.seed;
  j["resampled_total"] = m.resampled_total;
  serial::json items = serial::json::array();
  for (const auto& it : m.items) {
    items.push_back({{"index", it.index},
                     {"seed", it.seed},
                     {"resamples", it.resamples},
                     {"faces_visible", it.faces_visible},
                     {"dir", it.dir},
                     {"params",
                      {{"f_mm", it.params.f_mm},
                       {"theta_x_deg", it.params.theta_x_deg},
                       {"theta_y_deg", it.params.theta_y_deg},
                       {"theta_z_deg", it.params.theta_z_deg},
                       {"dx_cm", it.params.dx_cm},
                       {"dy_cm", it.params.dy_cm},
                       {"alpha", it.params.alpha},
                       {"beta", it.params.beta},
                       {"lambda", it.params.lambda}}}});
  }
  j["items"] = items;
  return j;
}

// Renders `count` scenes drawn from `ranges` into out_dir, one directory per
// item (fringe image, pointmap, mask, scene config, true phase). Draws whose
// view shows fewer than two faces are rejected and redrawn, with the number
// of rejections recorded.
inline DatasetManifest generate_dataset(const twin::SceneRanges& ranges, int count,
                                        uint64_t seed, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::IoError, out_dir + ": " + ec.message());

  DatasetManifest manifest;
  manifest.count = count;
  manifest.seed = seed;

  for (int i = 0; i < count; ++i) {
    constexpr int kMaxResamples = 64;
    for (int attempt = 0;; ++attempt) {
      if (attempt > kMaxResamples)
        throw Error(ErrorKind::CubeNotVisible,
                    "item " + std::to_string(i) + ": no visible draw in " +
                        std::to_string(kMaxResamples) + " attempts");
      uint64_t item_seed =
          hash_mix(seed, static_cast<uint64_t>(i) * 1000003ull + attempt);
      twin::SceneConfig scene = twin::sample_scene(ranges, item_seed);
      twin::RenderOutput rendered;
      try {
        rendered = twin::render(scene);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::CubeNotVisible ||
            e.kind() == ErrorKind::InsufficientFaces) {
          ++manifest.resampled_total;
          continue;
        }
        throw;
      }
      twin::Pointmap pm = twin::generate_pointmap(rendered, scene);

      char name[32];
      std::snprintf(name, sizeof(name), "item_%05d", i);
      fs::path dir = fs::path(out_dir) / name;
      fs::create_directories(dir, ec);
      if (ec) throw Error(ErrorKind::IoError, dir.string() + ": " + ec.message());

      write_pfm((dir / "fringe.pfm").string(), rendered.fringe_image);
      write_pfm((dir / "phase.pfm").string(), rendered.phase_true);
      write_pfm_color((dir / "pointmap.pfm").string(), pm.coords);
      write_pgm((dir / "mask.pgm").string(), rendered.mask);
      serial::save_json_file((dir / "scene.json").string(), serial::scene_to_json(scene));

      DatasetItem item;
      item.index = i;
      item.seed = item_seed;
      item.resamples = attempt;
      item.faces_visible = rendered.faces_visible;
      item.dir = name;
      item.params = scene.params;
      manifest.items.push_back(item);
      break;
    }
  }

  serial::save_json_file((fs::path(out_dir) / "manifest.json").string(),
                         manifest_to_json(manifest));
  return manifest;
}

}  // namespace spicalib::dataset
