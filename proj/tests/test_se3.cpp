#include "posepolicy/se3.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace posepolicy;

namespace {

constexpr double kPi = std::numbers::pi;

Pose make(const Rotation& r, const Vec3& t) { return Pose{r, t}; }

// Independent rotation from Eigen's angle-axis type.
Mat3 aa_matrix(const Vec3& w) {
  const double th = w.norm();
  if (th == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(th, w / th).toRotationMatrix();
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

}  // namespace

TEST_CASE("compose: identity and inverse") {
  const Pose t = random_pose(11, 5.0, 1.0);
  CHECK(pose_distance_inf(compose(Pose::Identity(), t), t) < 1e-12);
  CHECK(pose_distance_inf(compose(t, inverse(t)), Pose::Identity()) < 1e-9);
}

TEST_CASE("compose: quarter turns about z with unit x offsets") {
  const Pose a = make(Rotation::RotZ(kPi / 2), Vec3(1, 0, 0));
  const Pose c = compose(a, a);
  // Hand multiplication: R = Rz(pi), t = Rz(pi/2)(1,0,0) + (1,0,0) = (1,1,0).
  Mat3 r_expected;
  r_expected << -1, 0, 0, 0, -1, 0, 0, 0, 1;
  CHECK((c.rotation.matrix() - r_expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((c.translation - Vec3(1, 1, 0)).norm() < 1e-12);
}

TEST_CASE("compose matches 4x4 matrix product") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Pose a = random_pose(rng, 10.0, 1.5), b = random_pose(rng, 10.0, 1.5);
    const Eigen::Matrix4d m = a.matrix() * b.matrix();
    CHECK((compose(a, b).matrix() - m).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("inverse examples") {
  CHECK(pose_distance_inf(inverse(Pose::Identity()), Pose::Identity()) == 0.0);
  const Pose p = inverse(Pose::FromTranslation(Vec3(1, 2, 3)));
  CHECK((p.translation - Vec3(-1, -2, -3)).norm() == 0.0);
  CHECK(p.rotation.Angle() == 0.0);

  const Pose q = inverse(make(Rotation::RotZ(kPi / 2), Vec3(1, 0, 0)));
  CHECK((q.rotation.matrix() - Rotation::RotZ(-kPi / 2).matrix()).cwiseAbs().maxCoeff() < 1e-12);
  // -R^T t with R^T = Rz(-pi/2): Rz(-pi/2)(1,0,0) = (0,-1,0), negated (0,1,0).
  CHECK((q.translation - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("log / exp examples") {
  CHECK(log(Pose::Identity()).norm() == 0.0);
  const PoseVec6 v = log(make(Rotation::RotZ(kPi / 2), Vec3::Zero()));
  PoseVec6 expected;
  expected << 0, 0, 0, 0, 0, kPi / 2;
  CHECK((v - expected).norm() < 1e-12);

  PoseVec6 x;
  x << 1, 2, 3, 0.1, 0.2, 0.3;
  CHECK((log(exp(x)) - x).norm() < 1e-9);
}

TEST_CASE("Rotation::Exp agrees with an angle-axis oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ang(0.0, kPi);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 w = random_unit(rng) * ang(rng);
    CHECK((Rotation::Exp(w).matrix() - aa_matrix(w)).cwiseAbs().maxCoeff() < 1e-12);
  }
  // tiny angles go through the series branch
  const Vec3 tiny(1e-9, -2e-9, 3e-10);
  CHECK((Rotation::Exp(tiny).matrix() - aa_matrix(tiny)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("exp/log round trip up to pi - 1e-3") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ang(0.0, kPi - 1e-3);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 w = random_unit(rng) * ang(rng);
    worst = std::max(worst, (Rotation::Exp(w).Log() - w).norm());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("log returns the principal rotation vector near pi") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const Vec3 axis = random_unit(rng);
    const double th = kPi - 1e-7 * (i + 1);
    const Vec3 w = Rotation::Exp(axis * th).Log();
    CHECK(w.norm() <= kPi + 1e-12);
    CHECK((aa_matrix(w) - aa_matrix(axis * th)).cwiseAbs().maxCoeff() < 1e-9);
  }
  // exactly pi: either sign of the axis is acceptable
  const Vec3 w = Rotation::RotX(kPi).Log();
  CHECK(std::abs(std::abs(w.x()) - kPi) < 1e-12);
  CHECK(std::abs(w.y()) + std::abs(w.z()) < 1e-12);
}

TEST_CASE("coupled se3 log / exp round trip") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const Pose p = random_pose(rng, 5.0, 0.8);
    CHECK(pose_distance_inf(se3_exp(se3_log(p)), p) < 1e-9);
  }
  // Pure rotation: coupled and split translation parts agree (both zero).
  const Vec6 tw = se3_log(make(Rotation::RotY(0.4), Vec3::Zero()));
  CHECK(tw.head<3>().norm() < 1e-12);
}

TEST_CASE("geodesic angle") {
  const Rotation r = Rotation::Exp(Vec3(0.3, -0.2, 0.9));
  CHECK(geodesic_angle(r, r) < 1e-12);
  CHECK(std::abs(geodesic_angle(Rotation::Identity(), Rotation::RotZ(kPi / 2)) - kPi / 2) < 1e-12);

  // Quaternion-dot oracle.
  const Eigen::Quaterniond qa(Eigen::AngleAxisd(0.3, Vec3::UnitX()));
  const Eigen::Quaterniond qb(Eigen::AngleAxisd(0.4, Vec3::UnitY()));
  const double oracle = 2.0 * std::acos(std::min(1.0, std::abs(qa.dot(qb))));
  CHECK(std::abs(geodesic_angle(Rotation::RotX(0.3), Rotation::RotY(0.4)) - oracle) < 1e-9);
}

TEST_CASE("geodesic angle triangle inequality") {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 2000; ++i) {
    const Rotation a = random_pose(rng, 0, 1.5).rotation;
    const Rotation b = random_pose(rng, 0, 1.5).rotation;
    const Rotation c = random_pose(rng, 0, 1.5).rotation;
    CHECK(geodesic_angle(a, c) <= geodesic_angle(a, b) + geodesic_angle(b, c) + 1e-9);
  }
}

TEST_CASE("associativity over random triples") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 1000; ++i) {
    const Pose a = random_pose(rng, 10, 2), b = random_pose(rng, 10, 2), c = random_pose(rng, 10, 2);
    CHECK(pose_distance_inf(compose(compose(a, b), c), compose(a, compose(b, c))) < 1e-9);
  }
}

TEST_CASE("random_pose") {
  CHECK(pose_distance_inf(random_pose(1, 0.0, 0.0), Pose::Identity()) == 0.0);
  CHECK(pose_distance_inf(random_pose(42, 3.0, 0.5), random_pose(42, 3.0, 0.5)) == 0.0);

  std::mt19937_64 rng(77);
  const int n = 10000;
  Vec3 sum = Vec3::Zero(), sq = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    const Vec3 w = random_pose(rng, 0.0, 0.1).rotation.Log();
    sum += w;
    sq += w.cwiseProduct(w);
  }
  for (int d = 0; d < 3; ++d) {
    const double mean = sum[d] / n;
    const double sd = std::sqrt(sq[d] / n - mean * mean);
    CHECK(std::abs(sd - 0.1) < 0.005);
  }
}

TEST_CASE("long composition chains stay orthonormal") {
  std::mt19937_64 rng(13);
  Pose p = Pose::Identity();
  for (int i = 0; i < 1000000; ++i) p = compose(p, random_pose(rng, 0.01, 0.01));
  CHECK(p.rotation.OrthonormalityError() < 1e-6);
  CHECK(std::abs(p.rotation.matrix().determinant() - 1.0) < 1e-9);
}

TEST_CASE("FromMatrix projects onto SO(3)") {
  Mat3 m = Rotation::RotZ(0.7).matrix();
  m(0, 1) += 1e-4;
  const Rotation r = Rotation::FromMatrix(m);
  CHECK(r.OrthonormalityError() < 1e-12);
  CHECK(std::abs(r.matrix().determinant() - 1.0) < 1e-12);
  CHECK(geodesic_angle(r, Rotation::RotZ(0.7)) < 1e-4);
}
