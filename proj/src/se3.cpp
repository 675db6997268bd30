#include "posepolicy/se3.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace posepolicy {

namespace {

constexpr double kReorthoThreshold = 1e-12;

Vec3 vee(const Mat3& m) {
  return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
}

// One Newton step of the polar decomposition; used when drift is tiny.
Mat3 polar_correct(const Mat3& m) {
  return 0.5 * m * (3.0 * Mat3::Identity() - m.transpose() * m);
}

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<    0.0, -v.z(),  v.y(),
        v.z(),    0.0, -v.x(),
       -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

Rotation Rotation::FromMatrix(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return Rotation(u * v.transpose(), Unchecked{});
}

Rotation Rotation::Exp(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = skew(w);
  double a, b;
  if (theta < 1e-5) {
    a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
    b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Rotation(Mat3::Identity() + a * k + b * k * k, Unchecked{});
}

Rotation Rotation::RotX(double angle) { return Exp(Vec3(angle, 0.0, 0.0)); }
Rotation Rotation::RotY(double angle) { return Exp(Vec3(0.0, angle, 0.0)); }
Rotation Rotation::RotZ(double angle) { return Exp(Vec3(0.0, 0.0, angle)); }

Vec3 Rotation::Log() const {
  const Vec3 v = vee(m_);  // 2 sin(θ) a
  const double sin_theta = 0.5 * v.norm();
  const double cos_theta = std::clamp(0.5 * (m_.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta < 1e-5) {
    // θ/(2 sin θ) ≈ 1/2 (1 + θ²/6)
    return 0.5 * (1.0 + theta * theta / 6.0) * v;
  }
  if (cos_theta > -0.99) {
    return (theta / (2.0 * sin_theta)) * v;
  }
  // Near pi: (R + Rᵀ)/2 − cos θ I = (1 − cos θ) a aᵀ.
  const Mat3 b = 0.5 * (m_ + m_.transpose()) - cos_theta * Mat3::Identity();
  Eigen::Index col = 0;
  b.diagonal().maxCoeff(&col);
  Vec3 axis = b.col(col).normalized();
  if (axis.dot(v) < 0.0) axis = -axis;
  return theta * axis;
}

double Rotation::Angle() const { return Log().norm(); }

Rotation Rotation::operator*(const Rotation& other) const {
  Mat3 m = m_ * other.m_;
  const double err = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (err > kReorthoThreshold) m = polar_correct(m);
  return Rotation(m, Unchecked{});
}

double Rotation::OrthonormalityError() const {
  return (m_.transpose() * m_ - Mat3::Identity()).cwiseAbs().maxCoeff();
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation.matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Pose inverse(const Pose& a) {
  const Rotation rinv = a.rotation.inverse();
  return Pose{rinv, -(rinv * a.translation)};
}

PoseVec6 log(const Pose& a) {
  PoseVec6 v;
  v.head<3>() = a.translation;
  v.tail<3>() = a.rotation.Log();
  return v;
}

Pose exp(const PoseVec6& v) {
  return Pose{Rotation::Exp(v.tail<3>()), v.head<3>()};
}

namespace {

// Left Jacobian V(ω) of SO(3), such that t = V ρ for the coupled exponential.
Mat3 left_jacobian(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = skew(w);
  double b, c;
  if (theta < 1e-5) {
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() + b * k + c * k * k;
}

}  // namespace

Vec6 se3_log(const Pose& a) {
  const Vec3 w = a.rotation.Log();
  Vec6 out;
  out.head<3>() = left_jacobian(w).lu().solve(a.translation);
  out.tail<3>() = w;
  return out;
}

Pose se3_exp(const Vec6& twist) {
  const Vec3 w = twist.tail<3>();
  return Pose{Rotation::Exp(w), left_jacobian(w) * twist.head<3>()};
}

double geodesic_angle(const Rotation& a, const Rotation& b) {
  // arccos((tr(AᵀB) − 1)/2) evaluated through atan2 for accuracy near 0 and pi.
  const Mat3 rel = a.matrix().transpose() * b.matrix();
  const double c = std::clamp(0.5 * (rel.trace() - 1.0), -1.0, 1.0);
  const double s = 0.5 * vee(rel).norm();
  return std::clamp(std::atan2(s, c), 0.0, std::numbers::pi);
}

double pose_distance_inf(const Pose& a, const Pose& b) {
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

Pose random_pose(std::mt19937_64& rng, double trans_scale, double rot_scale) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Vec3 w, t;
  for (int i = 0; i < 3; ++i) w[i] = rot_scale * n01(rng);
  for (int i = 0; i < 3; ++i) t[i] = trans_scale * n01(rng);
  return Pose{Rotation::Exp(w), t};
}

Pose random_pose(std::uint64_t seed, double trans_scale, double rot_scale) {
  std::mt19937_64 rng(seed);
  return random_pose(rng, trans_scale, rot_scale);
}

}  // namespace posepolicy
