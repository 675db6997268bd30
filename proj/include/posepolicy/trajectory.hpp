#pragma once

#include "posepolicy/se3.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace posepolicy {

struct Frame {
  std::int64_t index = 0;
  Pose pose;
  // false when the producing method had no estimate for this frame
  bool valid = true;
};

/// Ordered camera trajectory. Frame indices are strictly increasing.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::vector<Frame> frames, bool anchored = false);

  static Trajectory FromPoses(std::span<const Pose> poses, std::int64_t first_index = 0);

  const std::vector<Frame>& frames() const { return frames_; }
  std::size_t size() const { return frames_.size(); }
  bool empty() const { return frames_.empty(); }
  bool anchored() const { return anchored_; }

  const Frame& operator[](std::size_t i) const { return frames_[i]; }
  const Pose& pose(std::size_t i) const { return frames_[i].pose; }

  /// Position of the frame with the given index, or -1.
  std::ptrdiff_t find(std::int64_t frame_index) const;

 private:
  std::vector<Frame> frames_;
  bool anchored_ = false;
};

using ActionDelta = PoseVec6;

struct ActionSequence {
  std::vector<ActionDelta> deltas;

  std::size_t horizon() const { return deltas.size(); }
};

struct NormStats {
  Vec6 state_mean = Vec6::Zero();
  Vec6 state_std = Vec6::Ones();
  Vec6 action_mean = Vec6::Zero();
  Vec6 action_std = Vec6::Ones();
  double epsilon = 1e-6;
};

struct StateActionSample {
  PoseVec6 state;
  ActionSequence actions;
};

/// Re-expresses every pose relative to the first frame.
Trajectory anchor(const Trajectory& traj);

/// deltas[i] = log(T_{t+i}⁻¹ ∘ T_{t+i+1}) for the k steps after position t.
ActionSequence extract_actions(const Trajectory& traj, std::size_t t, std::size_t k);

/// start ∘ exp(δ₁) ∘ … ∘ exp(δ_w).
Pose compose_window(const Pose& start, const ActionSequence& actions, std::size_t w);

/// Per-dimension mean and population std. State statistics over the states,
/// action statistics pooled across every step of every sample.
NormStats fit_norm_stats(std::span<const StateActionSample> dataset, double epsilon = 1e-6);

Vec6 normalize(const Vec6& v, const Vec6& mean, const Vec6& std);
Vec6 denormalize(const Vec6& v, const Vec6& mean, const Vec6& std);

// Trajectory table: header `frame,tx,ty,tz,rx,ry,rz`; a row with any
// non-finite field is an invalid pose.
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj);
Trajectory read_trajectory_csv(const std::filesystem::path& path);

}  // namespace posepolicy
