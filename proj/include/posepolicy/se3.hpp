#pragma once

// Rigid-body algebra on SO(3) / SE(3) in double precision.
//
// Poses map camera coordinates to world coordinates: x_world = R x_cam + t.
// Translations are in millimetres, rotation vectors in radians.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <random>

namespace posepolicy {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// 6D pose vector ordered (tx, ty, tz, rx, ry, rz).
using PoseVec6 = Vec6;

Mat3 skew(const Vec3& v);

class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  /// Projects `m` onto SO(3) (nearest rotation in Frobenius norm).
  static Rotation FromMatrix(const Mat3& m);
  static Rotation Identity() { return Rotation(); }
  static Rotation Exp(const Vec3& rotvec);
  static Rotation RotX(double angle);
  static Rotation RotY(double angle);
  static Rotation RotZ(double angle);

  /// Principal rotation vector, norm in [0, pi]. At exactly pi the axis sign
  /// is not unique; either branch may be returned.
  Vec3 Log() const;
  double Angle() const;

  const Mat3& matrix() const { return m_; }
  Rotation inverse() const { return Rotation(m_.transpose(), Unchecked{}); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rotation operator*(const Rotation& other) const;

  /// Max abs entry of RᵀR − I.
  double OrthonormalityError() const;

 private:
  struct Unchecked {};
  Rotation(const Mat3& m, Unchecked) : m_(m) {}

  Mat3 m_;
};

struct Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  static Pose Identity() { return Pose{}; }
  static Pose FromTranslation(const Vec3& t) { return Pose{Rotation(), t}; }

  Eigen::Matrix4d matrix() const;
  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
};

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& a);

/// Split parameterization: raw translation paired with the axis-angle of the
/// rotation. This is the 6D form used for states and actions everywhere.
PoseVec6 log(const Pose& a);
Pose exp(const PoseVec6& v);

/// Coupled se(3) logarithm / exponential (twist with V(ω) translation
/// coupling). Same ordering (ρ, ω).
Vec6 se3_log(const Pose& a);
Pose se3_exp(const Vec6& twist);

/// Geodesic distance on SO(3) in radians, in [0, pi].
double geodesic_angle(const Rotation& a, const Rotation& b);

/// Max-abs difference between two poses' 4x4 matrices.
double pose_distance_inf(const Pose& a, const Pose& b);

/// Rotation = exp(N(0, rot_scale² I)), translation ~ N(0, trans_scale² I).
Pose random_pose(std::mt19937_64& rng, double trans_scale, double rot_scale);
Pose random_pose(std::uint64_t seed, double trans_scale, double rot_scale);

}  // namespace posepolicy
