#pragma once

// Dataset generation and multi-method evaluation used by the commands.

#include "posepolicy/eval.hpp"
#include "posepolicy/policy.hpp"
#include "posepolicy/run_config.hpp"
#include "posepolicy/synth_world.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace posepolicy::pipeline {

enum Split { kTrain = 0, kVal = 1, kTest = 2 };

std::string split_name(int split);
SplitSpec split_spec(const RunConfig& config, int split);

/// Renders the configured number of seeded sequences for one split. Each
/// sequence starts on the tube axis at a random depth, looking down the tube.
std::vector<synth::Sequence> generate_split(const RunConfig& config, int split, const synth::Scene& scene);

void write_scene_params(const std::filesystem::path& path, const synth::SceneParams& params);
synth::SceneParams read_scene_params(const std::filesystem::path& path);

struct MethodResult {
  eval::MethodRow row;
  std::vector<eval::RPERecord> records;
};

/// Scores window predictions. An empty prediction set yields a row with zero
/// windows and NaN statistics instead of an error.
MethodResult score_method(const std::string& name, std::span<const eval::WindowPrediction> predictions,
                          const eval::GroundTruth& gt, int w, const eval::CoverageReport& coverage);

eval::GroundTruth ground_truth(const synth::Dataset& dataset);
eval::CoverageReport full_coverage(const synth::Dataset& dataset);

/// Monocular eight-point odometry for every sequence, keyed by sequence id.
std::map<int, Trajectory> run_eight_point(const RunConfig& config, const synth::Scene& scene,
                                          const synth::Camera& camera, const std::vector<synth::Sequence>& sequences);

/// Policy (when given), enabled baselines, and the ground-truth oracle at
/// window length w. `eight_point` may be null to skip that baseline.
std::vector<MethodResult> evaluate_methods(const RunConfig& config, const synth::Dataset& test,
                                           const policy::PolicyModel* model,
                                           const std::map<int, Trajectory>* eight_point, int w);

}  // namespace posepolicy::pipeline
