#pragma once

#include "posepolicy/se3.hpp"
#include "posepolicy/synth_world.hpp"
#include "posepolicy/trajectory.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace posepolicy::eval {

/// Predicted relative motion ΔT_{t:t+w} for one window of one sequence.
struct WindowPrediction {
  int sequence = 0;
  std::size_t t = 0;  // position of the window start in the sequence
  int w = 0;
  Pose relative;
};

struct RPERecord {
  int sequence = 0;
  std::size_t t = 0;
  int w = 0;
  double trans_err_mm = 0.0;
  double rot_err_deg = 0.0;
};

struct Summary {
  std::size_t count = 0;
  double trans_mean = 0.0;
  double trans_std = 0.0;  // population
  double rot_mean = 0.0;
  double rot_std = 0.0;
};

struct RPEResult {
  std::vector<RPERecord> records;
  Summary summary;
};

using GroundTruth = std::map<int, Trajectory>;

/// Window-based relative pose error against (T_t)⁻¹ T_{t+w} of the ground
/// truth. Only predictions with window length `w` are scored.
RPEResult rpe(std::span<const WindowPrediction> predictions, const GroundTruth& gt, int w);
Summary summarize(std::span<const RPERecord> records);

struct Sim3 {
  double scale = 1.0;
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
  /// Maps a camera pose into the aligned frame (rotation and scaled position).
  Pose apply(const Pose& p) const;
};

/// Least-squares similarity with target ≈ s R source + t.
Sim3 umeyama_sim3(std::span<const Vec3> source, std::span<const Vec3> target);

double sum_squared_residual(const Sim3& s, std::span<const Vec3> source, std::span<const Vec3> target);

struct CoverageReport {
  std::size_t total = 0;
  std::size_t valid = 0;
  double percent = 0.0;
};

CoverageReport coverage(const Trajectory& traj);

class BaselineFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RelativePose {
  Rotation rotation;   // X_1 = R X_2 + t, i.e. pose of camera 2 in camera 1
  Vec3 direction;      // unit translation; scale is unobservable
};

/// Normalised eight-point essential-matrix estimate from pixel
/// correspondences, disambiguated by cheirality. Throws BaselineFailure.
RelativePose eight_point(std::span<const Eigen::Vector2d> px1, std::span<const Eigen::Vector2d> px2,
                         const synth::Camera& camera);

struct EightPointOptions {
  synth::ProjectionOptions projection;
  std::size_t min_correspondences = 8;
  std::uint64_t seed = 0;
};

/// Frame-to-keyframe monocular odometry built from eight_point, with relative
/// scale carried across keyframes by triangulated depth ratios. Frames without
/// an estimate are marked invalid. Output is in the first frame's coordinates
/// with an arbitrary global scale.
Trajectory eight_point_odometry(const synth::Scene& scene, const synth::Camera& camera, const synth::Sequence& seq,
                                const EightPointOptions& options);

/// Window predictions from an estimated trajectory; windows with an invalid
/// endpoint are dropped. With `align`, the valid frames are first Sim(3)
/// aligned to the ground truth.
std::vector<WindowPrediction> trajectory_windows(const Trajectory& estimate, const Trajectory& gt, int sequence,
                                                 int w, std::span<const std::size_t> starts, bool align);

std::vector<WindowPrediction> zero_motion_baseline(const Trajectory& gt, int sequence, int w,
                                                   std::span<const std::size_t> starts);
/// Repeats the last observed ground-truth step w times; the first window
/// (no history) falls back to zero motion.
std::vector<WindowPrediction> constant_velocity_baseline(const Trajectory& gt, int sequence, int w,
                                                         std::span<const std::size_t> starts);

/// Window starts t = 0, stride, … with t + k ≤ L − 1.
std::vector<std::size_t> window_starts(std::size_t length, std::size_t k, std::size_t stride);

// `sequence,t,w,trans_err_mm,rot_err_deg`
void write_records_csv(const std::filesystem::path& path, std::span<const RPERecord> records);
std::vector<RPERecord> read_records_csv(const std::filesystem::path& path);

struct MethodRow {
  std::string method;
  Summary summary;
  CoverageReport coverage;
  std::map<int, Summary> per_sequence;
};

/// Text table: method, translation mean ± std (mm), rotation mean ± std
/// (deg), coverage (%), then per-sequence translation / rotation means.
std::string format_table(std::span<const MethodRow> rows, int w);

}  // namespace posepolicy::eval
