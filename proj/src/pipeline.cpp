#include "posepolicy/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace posepolicy::pipeline {

namespace fs = std::filesystem;

std::string split_name(int split) {
  switch (split) {
    case kTrain: return "train";
    case kVal: return "val";
    case kTest: return "test";
  }
  throw std::invalid_argument("unknown split index " + std::to_string(split));
}

SplitSpec split_spec(const RunConfig& config, int split) {
  switch (split) {
    case kTrain: return config.train;
    case kVal: return config.val;
    case kTest: return config.test;
  }
  throw std::invalid_argument("unknown split index " + std::to_string(split));
}

std::vector<synth::Sequence> generate_split(const RunConfig& config, int split, const synth::Scene& scene) {
  const SplitSpec spec = split_spec(config, split);
  const synth::Camera camera = synth::Camera::ForSize(config.policy.image_size);
  const double travel = 1.5 * std::abs(config.motion.forward_speed) * spec.frames;
  const double lo = scene.params.z_min + 40.0;
  const double hi = std::max(lo, scene.params.z_max - travel - 40.0);

  std::vector<synth::Sequence> out;
  for (int i = 0; i < spec.sequences; ++i) {
    std::seed_seq sseq{static_cast<std::uint32_t>(config.data_seed), static_cast<std::uint32_t>(config.data_seed >> 32),
                       static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(sseq);
    const double z0 = std::uniform_real_distribution<double>(lo, hi)(rng);
    const Pose start = Pose::FromTranslation(Vec3(0.0, 0.0, z0));
    const Trajectory world =
        synth::generate_trajectory(rng(), static_cast<std::size_t>(spec.frames), config.motion, start,
                                   scene.max_camera_radius());
    out.push_back(synth::render_sequence(scene, camera, i, world));
  }
  return out;
}

void write_scene_params(const fs::path& path, const synth::SceneParams& p) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "seed = " << p.seed << "\n"
      << "tube_radius = " << p.tube_radius << "\n"
      << "z_min = " << p.z_min << "\n"
      << "z_max = " << p.z_max << "\n"
      << "density = " << p.density << "\n"
      << "zone_length_min = " << p.zone_length_min << "\n"
      << "zone_length_max = " << p.zone_length_max << "\n"
      << "splat_radius = " << p.splat_radius << "\n"
      << "light_gain = " << p.light_gain << "\n";
}

synth::SceneParams read_scene_params(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  synth::SceneParams p;
  std::map<std::string, double*> fields = {
      {"tube_radius", &p.tube_radius},   {"z_min", &p.z_min},
      {"z_max", &p.z_max},               {"density", &p.density},
      {"zone_length_min", &p.zone_length_min}, {"zone_length_max", &p.zone_length_max},
      {"splat_radius", &p.splat_radius}, {"light_gain", &p.light_gain},
  };
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(' ') + 1);
    try {
      if (key == "seed") {
        p.seed = std::stoull(value);
      } else if (auto it = fields.find(key); it != fields.end()) {
        *it->second = std::stod(value);
      } else {
        throw std::runtime_error(path.string() + ": unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw std::runtime_error(path.string() + ": bad value for '" + key + "'");
    }
  }
  return p;
}

MethodResult score_method(const std::string& name, std::span<const eval::WindowPrediction> predictions,
                          const eval::GroundTruth& gt, int w, const eval::CoverageReport& coverage) {
  MethodResult r;
  r.row.method = name;
  r.row.coverage = coverage;
  if (predictions.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.row.summary = eval::Summary{0, nan, nan, nan, nan};
    return r;
  }
  auto res = eval::rpe(predictions, gt, w);
  r.records = std::move(res.records);
  r.row.summary = res.summary;
  std::map<int, std::vector<eval::RPERecord>> by_seq;
  for (const auto& rec : r.records) by_seq[rec.sequence].push_back(rec);
  for (const auto& [seq, recs] : by_seq) r.row.per_sequence[seq] = eval::summarize(recs);
  return r;
}

eval::GroundTruth ground_truth(const synth::Dataset& dataset) {
  eval::GroundTruth gt;
  for (const auto& s : dataset.sequences) gt[s.id] = s.gt;
  return gt;
}

eval::CoverageReport full_coverage(const synth::Dataset& dataset) {
  eval::CoverageReport c;
  for (const auto& s : dataset.sequences) c.total += s.gt.size();
  c.valid = c.total;
  c.percent = c.total ? 100.0 : 0.0;
  return c;
}

std::map<int, Trajectory> run_eight_point(const RunConfig& config, const synth::Scene& scene,
                                          const synth::Camera& camera, const std::vector<synth::Sequence>& sequences) {
  eval::EightPointOptions opt;
  opt.projection.pixel_noise = config.eight_point_pixel_noise;
  opt.projection.max_depth = config.eight_point_max_depth;
  opt.min_correspondences = static_cast<std::size_t>(config.eight_point_min_correspondences);
  std::map<int, Trajectory> out;
  for (const auto& seq : sequences) {
    opt.seed = config.data_seed * 31 + static_cast<std::uint64_t>(seq.id);
    out[seq.id] = eval::eight_point_odometry(scene, camera, seq, opt);
  }
  return out;
}

std::vector<MethodResult> evaluate_methods(const RunConfig& config, const synth::Dataset& test,
                                           const policy::PolicyModel* model,
                                           const std::map<int, Trajectory>* eight_point, int w) {
  const eval::GroundTruth gt = ground_truth(test);
  const eval::CoverageReport full = full_coverage(test);
  const std::size_t k = test.horizon;
  std::vector<MethodResult> out;

  if (model) {
    const auto schedule = policy::cosine_schedule(model->config().diffusion_steps);
    const auto preds = policy::rollout_oracle(
        policy::policy_predictor(*model, schedule, model->config().inference_steps, model->config().seed), test,
        config.eval_stride, w);
    out.push_back(score_method("policy", preds, gt, w, full));
  }

  auto per_sequence = [&](auto&& fn) {
    std::vector<eval::WindowPrediction> preds;
    for (const auto& seq : test.sequences) {
      const auto starts = eval::window_starts(seq.gt.size(), k, config.eval_stride);
      auto p = fn(seq, starts);
      preds.insert(preds.end(), p.begin(), p.end());
    }
    return preds;
  };
  if (config.baseline_zero_motion) {
    const auto preds = per_sequence([&](const synth::Sequence& s, const std::vector<std::size_t>& st) {
      return eval::zero_motion_baseline(s.gt, s.id, w, st);
    });
    out.push_back(score_method("zero_motion", preds, gt, w, full));
  }
  if (config.baseline_constant_velocity) {
    const auto preds = per_sequence([&](const synth::Sequence& s, const std::vector<std::size_t>& st) {
      return eval::constant_velocity_baseline(s.gt, s.id, w, st);
    });
    out.push_back(score_method("constant_velocity", preds, gt, w, full));
  }
  if (eight_point) {
    eval::CoverageReport cov;
    for (const auto& [id, traj] : *eight_point) {
      const auto c = eval::coverage(traj);
      cov.total += c.total;
      cov.valid += c.valid;
    }
    cov.percent = cov.total ? 100.0 * static_cast<double>(cov.valid) / static_cast<double>(cov.total) : 0.0;
    const auto preds = per_sequence([&](const synth::Sequence& s, const std::vector<std::size_t>& st) {
      const auto it = eight_point->find(s.id);
      if (it == eight_point->end()) throw std::invalid_argument("no eight-point estimate for sequence " + std::to_string(s.id));
      return eval::trajectory_windows(it->second, s.gt, s.id, w, st, true);
    });
    out.push_back(score_method("eight_point_sim3", preds, gt, w, cov));
  }
  if (config.baseline_gt_oracle) {
    const auto preds = policy::rollout_oracle(policy::ground_truth_predictor(), test, config.eval_stride, w);
    out.push_back(score_method("gt_actions", preds, gt, w, full));
  }
  return out;
}

}  // namespace posepolicy::pipeline
