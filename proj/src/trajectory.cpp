#include "posepolicy/trajectory.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace posepolicy {

Trajectory::Trajectory(std::vector<Frame> frames, bool anchored)
    : frames_(std::move(frames)), anchored_(anchored) {
  for (std::size_t i = 1; i < frames_.size(); ++i) {
    if (frames_[i].index <= frames_[i - 1].index) {
      throw std::invalid_argument("frame indices must be strictly increasing");
    }
  }
}

Trajectory Trajectory::FromPoses(std::span<const Pose> poses, std::int64_t first_index) {
  std::vector<Frame> frames;
  frames.reserve(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    frames.push_back(Frame{first_index + static_cast<std::int64_t>(i), poses[i], true});
  }
  return Trajectory(std::move(frames));
}

std::ptrdiff_t Trajectory::find(std::int64_t frame_index) const {
  auto it = std::lower_bound(frames_.begin(), frames_.end(), frame_index,
                             [](const Frame& f, std::int64_t idx) { return f.index < idx; });
  if (it == frames_.end() || it->index != frame_index) return -1;
  return it - frames_.begin();
}

Trajectory anchor(const Trajectory& traj) {
  if (traj.empty()) throw std::invalid_argument("empty trajectory");
  const Pose origin_inv = inverse(traj[0].pose);
  std::vector<Frame> frames = traj.frames();
  for (auto& f : frames) f.pose = compose(origin_inv, f.pose);
  frames[0].pose = Pose::Identity();
  return Trajectory(std::move(frames), true);
}

ActionSequence extract_actions(const Trajectory& traj, std::size_t t, std::size_t k) {
  if (t + k >= traj.size()) throw std::out_of_range("window out of range");
  ActionSequence out;
  out.deltas.reserve(k);
  for (std::size_t i = 1; i <= k; ++i) {
    out.deltas.push_back(log(compose(inverse(traj.pose(t + i - 1)), traj.pose(t + i))));
  }
  return out;
}

Pose compose_window(const Pose& start, const ActionSequence& actions, std::size_t w) {
  if (w > actions.horizon()) throw std::out_of_range("window longer than action sequence");
  Pose out = start;
  for (std::size_t i = 0; i < w; ++i) out = compose(out, exp(actions.deltas[i]));
  return out;
}

NormStats fit_norm_stats(std::span<const StateActionSample> dataset, double epsilon) {
  if (dataset.empty()) throw std::invalid_argument("empty dataset");
  NormStats stats;
  stats.epsilon = epsilon;

  Vec6 sum = Vec6::Zero();
  for (const auto& s : dataset) sum += s.state;
  stats.state_mean = sum / static_cast<double>(dataset.size());
  Vec6 var = Vec6::Zero();
  for (const auto& s : dataset) var += (s.state - stats.state_mean).cwiseAbs2();
  stats.state_std = (var / static_cast<double>(dataset.size())).cwiseSqrt();

  sum.setZero();
  std::size_t count = 0;
  for (const auto& s : dataset) {
    for (const auto& d : s.actions.deltas) sum += d;
    count += s.actions.horizon();
  }
  if (count == 0) throw std::invalid_argument("dataset has no actions");
  stats.action_mean = sum / static_cast<double>(count);
  var.setZero();
  for (const auto& s : dataset) {
    for (const auto& d : s.actions.deltas) var += (d - stats.action_mean).cwiseAbs2();
  }
  stats.action_std = (var / static_cast<double>(count)).cwiseSqrt();

  stats.state_std = stats.state_std.cwiseMax(epsilon);
  stats.action_std = stats.action_std.cwiseMax(epsilon);
  return stats;
}

Vec6 normalize(const Vec6& v, const Vec6& mean, const Vec6& std) {
  return (v - mean).cwiseQuotient(std);
}

Vec6 denormalize(const Vec6& v, const Vec6& mean, const Vec6& std) {
  return v.cwiseProduct(std) + mean;
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "frame,tx,ty,tz,rx,ry,rz\n";
  for (const auto& f : traj.frames()) {
    out << f.index;
    if (!f.valid) {
      for (int i = 0; i < 6; ++i) out << ",nan";
    } else {
      const PoseVec6 v = log(f.pose);
      for (int i = 0; i < 6; ++i) out << ',' << v[i];
    }
    out << '\n';
  }
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "frame,tx,ty,tz,rx,ry,rz") {
    throw std::runtime_error(path.string() + ": unexpected header '" + line + "'");
  }
  std::vector<Frame> frames;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 7) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 7 fields");
    }
    Frame f;
    try {
      f.index = std::stoll(fields[0]);
      PoseVec6 v;
      for (int i = 0; i < 6; ++i) v[i] = std::stod(fields[i + 1]);
      f.valid = v.allFinite();
      if (f.valid) f.pose = exp(v);
    } catch (const std::logic_error&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    frames.push_back(f);
  }
  return Trajectory(std::move(frames));
}

}  // namespace posepolicy
