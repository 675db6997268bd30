#pragma once

// Procedural tube-shaped scene, pinhole camera with circular field of view,
// trajectory generators, and the windowed dataset built on top of them.

#include "posepolicy/se3.hpp"
#include "posepolicy/trajectory.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace posepolicy::synth {

struct Landmark {
  Vec3 position;
  double albedo = 0.0;
  // belongs to a speckled zone; only these are usable as point features
  bool textured = false;
};

struct SceneParams {
  std::uint64_t seed = 1;
  double tube_radius = 6.0;        // mm
  double z_min = -40.0;            // mm
  double z_max = 600.0;            // mm
  double density = 1.0;            // landmarks per mm² of wall
  double zone_length_min = 30.0;   // mm
  double zone_length_max = 70.0;   // mm
  double splat_radius = 0.6;       // world-space blob std, mm
  double light_gain = 40.0;        // intensity·mm² at unit albedo
};

struct Scene {
  SceneParams params;
  std::vector<Landmark> landmarks;
  // [start, end) z ranges of low-texture zones
  std::vector<std::pair<double, double>> smooth_zones;

  /// Camera positions must keep this radial clearance from the axis.
  double max_camera_radius() const { return 0.6 * params.tube_radius; }
};

Scene make_scene(const SceneParams& params);
Scene make_empty_scene();

struct Camera {
  double focal = 32.0;  // pixels
  double cx = 19.5;
  double cy = 19.5;
  int size = 40;
  double mask_radius = 20.0;

  /// Intrinsics scaled with the image side length (focal = 0.8 S).
  static Camera ForSize(int size);
  void validate() const;
  bool in_mask(int row, int col) const;
};

struct Observation {
  int size = 0;
  std::vector<double> image;        // row-major, values in [0, 1]
  std::vector<std::uint8_t> mask;   // 1 inside the field of view

  double at(int row, int col) const { return image[static_cast<std::size_t>(row) * size + col]; }
  bool valid(int row, int col) const { return mask[static_cast<std::size_t>(row) * size + col] != 0; }
};

Observation make_mask_only(const Camera& camera);

/// Splats every landmark in front of the camera as a Gaussian blob whose
/// amplitude follows an inverse-square headlight falloff. Deterministic.
Observation render(const Scene& scene, const Camera& camera, const Pose& camera_to_world);

struct ProjectedLandmark {
  int id = 0;
  Eigen::Vector2d pixel;
  double depth = 0.0;
};

struct ProjectionOptions {
  bool textured_only = true;
  double max_depth = 30.0;     // features beyond this are too dim to detect
  double pixel_noise = 0.0;    // per-coordinate Gaussian std
};

/// Landmarks that project inside the field-of-view mask, sorted by id.
std::vector<ProjectedLandmark> project_landmarks(const Scene& scene, const Camera& camera,
                                                 const Pose& camera_to_world,
                                                 const ProjectionOptions& options,
                                                 std::mt19937_64* rng = nullptr);

enum class MotionKind { SmoothAdvance, Orbit, Jitter };

MotionKind parse_motion_kind(const std::string& name);
std::string to_string(MotionKind kind);

struct MotionProfile {
  MotionKind kind = MotionKind::SmoothAdvance;
  double trans_std = 0.0;        // mm per step
  double rot_std = 0.0;          // rad per step
  double forward_speed = 0.0;    // mm per step along the optical axis
  double smoothing = 0.9;        // velocity low-pass coefficient (smooth-advance)
  double heading_restore = 0.05; // pull of the heading back to the tube axis
  double orbit_radius = 2.0;     // mm (orbit)
  double orbit_rate = 0.0;       // rad per step (orbit)
};

/// World-frame camera trajectory starting at `start`. Steps that leave the
/// radial bound are resampled (up to 1000 times).
Trajectory generate_trajectory(std::uint64_t seed, std::size_t n_frames, const MotionProfile& profile,
                               const Pose& start = Pose::Identity(),
                               double max_radius = std::numeric_limits<double>::infinity());

struct Sequence {
  int id = 0;
  Pose origin;                       // world pose of the first frame
  Trajectory gt;                     // anchored ground truth
  std::vector<Observation> frames;

  Pose world_pose(std::size_t i) const { return compose(origin, gt.pose(i)); }
};

/// Anchors a world trajectory and renders every frame.
Sequence render_sequence(const Scene& scene, const Camera& camera, int id, const Trajectory& world);

struct WindowSample {
  std::size_t sequence = 0;  // position in Dataset::sequences
  std::size_t t = 0;
  PoseVec6 state;            // log of the anchored start pose
  ActionSequence actions;
  Pose start;
  Pose end;
};

struct Dataset {
  std::vector<Sequence> sequences;
  std::vector<WindowSample> samples;
  std::size_t horizon = 0;
  std::size_t skipped_sequences = 0;

  const Observation& source(const WindowSample& s) const { return sequences[s.sequence].frames[s.t]; }
  const Observation& target(const WindowSample& s) const {
    return sequences[s.sequence].frames[s.t + horizon];
  }
  std::vector<StateActionSample> state_actions() const;
};

/// One sample per window, ordered by (sequence, t). Sequences shorter than
/// k + 1 frames are skipped and counted.
Dataset build_dataset(std::vector<Sequence> sequences, std::size_t k);
Dataset build_dataset(const Scene& scene, const Camera& camera, std::span<const Trajectory> world_trajectories,
                      std::size_t k);

// 8-bit binary portable graymap.
void write_pgm(const std::filesystem::path& path, int size, std::span<const std::uint8_t> pixels);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& size);

void write_observation(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                       const Observation& obs);
Observation read_observation(const std::filesystem::path& image_path, const std::filesystem::path& mask_path);

// On-disk split: manifest.csv (`sequence,frame,image_path,mask_path`),
// traj_<id>.csv (anchored ground truth), world_<id>.csv, images/ and masks/.
void write_split(const std::filesystem::path& dir, const std::vector<Sequence>& sequences);
std::vector<Sequence> read_split(const std::filesystem::path& dir);

}  // namespace posepolicy::synth
