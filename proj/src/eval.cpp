#include "posepolicy/eval.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace posepolicy::eval {

namespace fs = std::filesystem;

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(var / static_cast<double>(xs.size()));
  return out;
}

}  // namespace

Summary summarize(std::span<const RPERecord> records) {
  std::vector<double> tr, rot;
  tr.reserve(records.size());
  rot.reserve(records.size());
  for (const auto& r : records) {
    tr.push_back(r.trans_err_mm);
    rot.push_back(r.rot_err_deg);
  }
  const MeanStd a = mean_std(tr), b = mean_std(rot);
  return Summary{records.size(), a.mean, a.std, b.mean, b.std};
}

RPEResult rpe(std::span<const WindowPrediction> predictions, const GroundTruth& gt, int w) {
  RPEResult out;
  for (const auto& p : predictions) {
    if (p.w != w) continue;
    auto it = gt.find(p.sequence);
    if (it == gt.end() || p.t + static_cast<std::size_t>(w) >= it->second.size()) {
      throw std::invalid_argument("no ground-truth window for sequence " + std::to_string(p.sequence) +
                                  " t=" + std::to_string(p.t));
    }
    const Trajectory& traj = it->second;
    if (!traj[p.t].valid || !traj[p.t + static_cast<std::size_t>(w)].valid) {
      throw std::invalid_argument("ground truth invalid at window start/end");
    }
    const Pose rel_gt = compose(inverse(traj.pose(p.t)), traj.pose(p.t + static_cast<std::size_t>(w)));
    RPERecord r;
    r.sequence = p.sequence;
    r.t = p.t;
    r.w = w;
    r.trans_err_mm = (p.relative.translation - rel_gt.translation).norm();
    r.rot_err_deg = geodesic_angle(p.relative.rotation, rel_gt.rotation) * kRadToDeg;
    out.records.push_back(r);
  }
  if (out.records.empty()) throw std::invalid_argument("empty evaluation");
  out.summary = summarize(out.records);
  return out;
}

Pose Sim3::apply(const Pose& p) const {
  return Pose{rotation * p.rotation, apply(p.translation)};
}

Sim3 umeyama_sim3(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) throw std::invalid_argument("alignment point count mismatch");
  const std::size_t n = source.size();
  if (n < 3) throw std::invalid_argument("degenerate alignment");

  Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_s += source[i];
    mu_t += target[i];
  }
  mu_s /= static_cast<double>(n);
  mu_t /= static_cast<double>(n);

  Mat3 cov = Mat3::Zero();
  Mat3 scatter = Mat3::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 ds = source[i] - mu_s;
    const Vec3 dt = target[i] - mu_t;
    cov += dt * ds.transpose();
    scatter += ds * ds.transpose();
    var_s += ds.squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_s /= static_cast<double>(n);

  const Eigen::Vector3d sv = Eigen::JacobiSVD<Mat3>(scatter).singularValues();
  if (!(sv[0] > 0.0) || sv[1] < 1e-9 * sv[0]) throw std::invalid_argument("degenerate alignment");

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
  const double s = (svd.singularValues().asDiagonal() * d).trace() / var_s;

  Sim3 out;
  out.scale = s;
  out.rotation = Rotation::FromMatrix(r);
  out.translation = mu_t - s * (out.rotation * mu_s);
  return out;
}

double sum_squared_residual(const Sim3& s, std::span<const Vec3> source, std::span<const Vec3> target) {
  double acc = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) acc += (s.apply(source[i]) - target[i]).squaredNorm();
  return acc;
}

CoverageReport coverage(const Trajectory& traj) {
  if (traj.empty()) throw std::invalid_argument("coverage of an empty trajectory");
  CoverageReport r;
  r.total = traj.size();
  for (const auto& f : traj.frames()) r.valid += f.valid ? 1 : 0;
  r.percent = 100.0 * static_cast<double>(r.valid) / static_cast<double>(r.total);
  return r;
}

namespace {

Vec3 bearing(const Eigen::Vector2d& px, const synth::Camera& cam) {
  return Vec3((px.x() - cam.cx) / cam.focal, (px.y() - cam.cy) / cam.focal, 1.0);
}

// Similarity that moves the centroid to the origin and sets the mean
// distance to sqrt(2).
Mat3 hartley(const std::vector<Vec3>& pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p.head<2>();
  c /= static_cast<double>(pts.size());
  double d = 0.0;
  for (const auto& p : pts) d += (p.head<2>() - c).norm();
  d /= static_cast<double>(pts.size());
  const double s = d > 0.0 ? std::sqrt(2.0) / d : 1.0;
  Mat3 t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

// Depths (d1, d2) with d1 b1 ≈ R d2 b2 + t, least squares.
Eigen::Vector2d triangulate_depths(const Vec3& b1, const Vec3& b2, const Mat3& r, const Vec3& t) {
  Eigen::Matrix<double, 3, 2> a;
  a.col(0) = b1;
  a.col(1) = -(r * b2);
  return a.colPivHouseholderQr().solve(t);
}

}  // namespace

RelativePose eight_point(std::span<const Eigen::Vector2d> px1, std::span<const Eigen::Vector2d> px2,
                         const synth::Camera& camera) {
  if (px1.size() != px2.size()) throw std::invalid_argument("correspondence count mismatch");
  const std::size_t n = px1.size();
  if (n < 8) throw BaselineFailure("fewer than 8 correspondences");

  std::vector<Vec3> b1(n), b2(n);
  for (std::size_t i = 0; i < n; ++i) {
    b1[i] = bearing(px1[i], camera);
    b2[i] = bearing(px2[i], camera);
  }
  const Mat3 t1 = hartley(b1), t2 = hartley(b2);

  Eigen::MatrixXd a(static_cast<Eigen::Index>(std::max<std::size_t>(n, 9)), 9);
  a.setZero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = t1 * b1[i];
    const Vec3 q = t2 * b2[i];
    a.row(static_cast<Eigen::Index>(i)) << p.x() * q.x(), p.x() * q.y(), p.x(), p.y() * q.x(), p.y() * q.y(),
        p.y(), q.x(), q.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A one-dimensional null space is required; a larger one means the motion
  // (e.g. pure rotation) or the structure does not determine E.
  if (!(sv[0] > 0.0) || sv[7] < 1e-8 * sv[0]) throw BaselineFailure("degenerate configuration");

  const Eigen::VectorXd e = svd.matrixV().col(8);
  Mat3 e_hat;
  e_hat << e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8];
  const Mat3 essential = t1.transpose() * e_hat * t2;

  Eigen::JacobiSVD<Mat3> esvd(essential, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = esvd.matrixU();
  Mat3 v = esvd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Mat3 wm;
  wm << 0, -1, 0, 1, 0, 0, 0, 0, 1;

  const Mat3 rots[2] = {u * wm * v.transpose(), u * wm.transpose() * v.transpose()};
  const Vec3 tdir = u.col(2);
  int best_count = -1;
  RelativePose best;
  for (const Mat3& r : rots) {
    for (double sign : {1.0, -1.0}) {
      const Vec3 t = sign * tdir;
      int count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector2d d = triangulate_depths(b1[i], b2[i], r, t);
        if (d[0] > 0.0 && d[1] > 0.0) ++count;
      }
      if (count > best_count) {
        best_count = count;
        best.rotation = Rotation::FromMatrix(r);
        best.direction = t.normalized();
      }
    }
  }
  if (2 * best_count <= static_cast<int>(n)) throw BaselineFailure("cheirality check failed");
  return best;
}

Trajectory eight_point_odometry(const synth::Scene& scene, const synth::Camera& camera, const synth::Sequence& seq,
                                const EightPointOptions& options) {
  std::mt19937_64 rng(options.seed);
  const std::size_t n = seq.gt.size();
  std::vector<std::vector<synth::ProjectedLandmark>> obs(n);
  for (std::size_t i = 0; i < n; ++i) {
    obs[i] = synth::project_landmarks(scene, camera, seq.world_pose(i), options.projection, &rng);
  }

  std::vector<Frame> frames(n);
  for (std::size_t i = 0; i < n; ++i) frames[i].index = seq.gt[i].index;
  frames[0].pose = Pose::Identity();
  frames[0].valid = true;

  std::size_t keyframe = 0;
  std::map<int, Vec3> map_points;  // keyframe coordinates, current scale
  double last_scale = 1.0;

  for (std::size_t i = 1; i < n; ++i) {
    frames[i].valid = false;
    // Correspondences by landmark id (both lists are sorted by id).
    std::vector<int> ids;
    std::vector<Eigen::Vector2d> p1, p2;
    {
      const auto& a = obs[keyframe];
      const auto& b = obs[i];
      std::size_t ia = 0, ib = 0;
      while (ia < a.size() && ib < b.size()) {
        if (a[ia].id < b[ib].id) {
          ++ia;
        } else if (b[ib].id < a[ia].id) {
          ++ib;
        } else {
          ids.push_back(a[ia].id);
          p1.push_back(a[ia].pixel);
          p2.push_back(b[ib].pixel);
          ++ia;
          ++ib;
        }
      }
    }
    if (ids.size() < std::max<std::size_t>(options.min_correspondences, 8)) continue;

    RelativePose rel;
    try {
      rel = eight_point(p1, p2, camera);
    } catch (const BaselineFailure&) {
      continue;
    }

    const Mat3& r = rel.rotation.matrix();
    std::map<int, Vec3> unit_points;  // keyframe coordinates, unit baseline
    for (std::size_t j = 0; j < ids.size(); ++j) {
      const Vec3 b1 = bearing(p1[j], camera);
      const Vec3 b2 = bearing(p2[j], camera);
      const Eigen::Vector2d d = triangulate_depths(b1, b2, r, rel.direction);
      if (d[0] > 0.0 && d[1] > 0.0) unit_points[ids[j]] = d[0] * b1;
    }
    std::vector<double> ratios;
    for (const auto& [id, pu] : unit_points) {
      auto it = map_points.find(id);
      if (it != map_points.end() && pu.norm() > 0.0) ratios.push_back(it->second.norm() / pu.norm());
    }
    double scale = last_scale;
    if (!ratios.empty()) {
      std::nth_element(ratios.begin(), ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2), ratios.end());
      scale = ratios[ratios.size() / 2];
    }
    if (!std::isfinite(scale) || scale <= 0.0) continue;

    const Pose step{rel.rotation, scale * rel.direction};
    frames[i].pose = compose(frames[keyframe].pose, step);
    frames[i].valid = true;

    std::map<int, Vec3> next_map;
    const Pose step_inv = inverse(step);
    for (const auto& [id, pu] : unit_points) next_map[id] = step_inv * (scale * pu);
    map_points = std::move(next_map);
    last_scale = scale;
    keyframe = i;
  }
  return Trajectory(std::move(frames));
}

std::vector<std::size_t> window_starts(std::size_t length, std::size_t k, std::size_t stride) {
  if (stride == 0) throw std::invalid_argument("stride must be >= 1");
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t + k < length; t += stride) out.push_back(t);
  return out;
}

std::vector<WindowPrediction> trajectory_windows(const Trajectory& estimate, const Trajectory& gt, int sequence,
                                                 int w, std::span<const std::size_t> starts, bool align) {
  if (estimate.size() != gt.size()) throw std::invalid_argument("estimate/ground-truth length mismatch");
  std::vector<Pose> poses(estimate.size());
  for (std::size_t i = 0; i < estimate.size(); ++i) poses[i] = estimate.pose(i);

  if (align) {
    std::vector<Vec3> src, dst;
    for (std::size_t i = 0; i < estimate.size(); ++i) {
      if (estimate[i].valid && gt[i].valid) {
        src.push_back(estimate.pose(i).translation);
        dst.push_back(gt.pose(i).translation);
      }
    }
    Sim3 s;
    try {
      s = umeyama_sim3(src, dst);
    } catch (const std::invalid_argument&) {
      return {};  // not enough structure to align: no usable windows
    }
    for (auto& p : poses) p = s.apply(p);
  }

  std::vector<WindowPrediction> out;
  for (std::size_t t : starts) {
    const std::size_t e = t + static_cast<std::size_t>(w);
    if (e >= estimate.size() || !estimate[t].valid || !estimate[e].valid) continue;
    out.push_back(WindowPrediction{sequence, t, w, compose(inverse(poses[t]), poses[e])});
  }
  return out;
}

std::vector<WindowPrediction> zero_motion_baseline(const Trajectory&, int sequence, int w,
                                                   std::span<const std::size_t> starts) {
  std::vector<WindowPrediction> out;
  for (std::size_t t : starts) out.push_back(WindowPrediction{sequence, t, w, Pose::Identity()});
  return out;
}

std::vector<WindowPrediction> constant_velocity_baseline(const Trajectory& gt, int sequence, int w,
                                                         std::span<const std::size_t> starts) {
  std::vector<WindowPrediction> out;
  for (std::size_t t : starts) {
    Pose rel = Pose::Identity();
    if (t > 0 && gt[t - 1].valid && gt[t].valid) {
      const Pose step = compose(inverse(gt.pose(t - 1)), gt.pose(t));
      for (int i = 0; i < w; ++i) rel = compose(rel, step);
    }
    out.push_back(WindowPrediction{sequence, t, w, rel});
  }
  return out;
}

void write_records_csv(const fs::path& path, std::span<const RPERecord> records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "sequence,t,w,trans_err_mm,rot_err_deg\n";
  for (const auto& r : records) {
    out << r.sequence << ',' << r.t << ',' << r.w << ',' << r.trans_err_mm << ',' << r.rot_err_deg << '\n';
  }
}

std::vector<RPERecord> read_records_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "sequence,t,w,trans_err_mm,rot_err_deg") {
    throw std::runtime_error(path.string() + ": unexpected header");
  }
  std::vector<RPERecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[5];
    for (auto& field : f) std::getline(ss, field, ',');
    try {
      out.push_back(RPERecord{std::stoi(f[0]), static_cast<std::size_t>(std::stoull(f[1])), std::stoi(f[2]),
                              std::stod(f[3]), std::stod(f[4])});
    } catch (const std::logic_error&) {
      throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    }
  }
  return out;
}

std::string format_table(std::span<const MethodRow> rows, int w) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "Window-based RPE at w=%d\n", w);
  os << buf;
  std::snprintf(buf, sizeof(buf), "%-22s %-18s %-18s %8s   %s\n", "method", "trans (mm)", "rot (deg)", "cov (%)",
                "per-sequence trans / rot");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-22s %7.3f +- %-7.3f %7.3f +- %-7.3f %8.1f  ", r.method.c_str(),
                  r.summary.trans_mean, r.summary.trans_std, r.summary.rot_mean, r.summary.rot_std,
                  r.coverage.percent);
    os << buf;
    for (const auto& [seq, s] : r.per_sequence) {
      std::snprintf(buf, sizeof(buf), " [%d] %.3f / %.3f", seq, s.trans_mean, s.rot_mean);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace posepolicy::eval
