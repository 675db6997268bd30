#pragma once

// Flat `key = value` run configuration shared by the command-line tools.

#include "posepolicy/policy.hpp"
#include "posepolicy/synth_world.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace posepolicy {

struct SplitSpec {
  int sequences = 0;
  int frames = 0;
};

struct RunConfig {
  std::string out_dir = "run";
  // Empty paths resolve under out_dir.
  std::string data_dir;
  std::string checkpoint;
  std::string eval_dir;
  std::string stratify_dir;

  std::uint64_t data_seed = 7;
  synth::SceneParams scene;
  SplitSpec train{20, 108};
  SplitSpec val{2, 60};
  SplitSpec test{3, 120};
  synth::MotionProfile motion;

  policy::PolicyConfig policy;
  std::size_t val_stride = 4;

  std::vector<int> eval_w = {8};
  std::size_t eval_stride = 1;
  bool baseline_zero_motion = true;
  bool baseline_constant_velocity = true;
  bool baseline_eight_point = true;
  bool baseline_gt_oracle = true;
  double eight_point_pixel_noise = 1.0;
  int eight_point_min_correspondences = 8;
  double eight_point_max_depth = 30.0;

  std::string stratify_method = "policy";
  int stratify_w = 8;

  RunConfig();

  std::filesystem::path data_path() const;
  std::filesystem::path checkpoint_path() const;
  std::filesystem::path eval_path() const;
  std::filesystem::path stratify_path() const;

  void validate() const;

  /// Every key with its current value, sorted by key.
  std::map<std::string, std::string> to_kv() const;
  std::string to_text() const;
  /// Throws std::invalid_argument naming the key on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);

  static std::vector<std::string> keys();
};

/// Parses `key = value` lines on top of the defaults; `#` starts a comment.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Scene parameters of one split: the data seed offset by the split index, so
/// splits never share a scene.
synth::SceneParams split_scene(const RunConfig& config, int split_index);

}  // namespace posepolicy
