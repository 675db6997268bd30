#include "posepolicy/eval.hpp"
#include "posepolicy/policy.hpp"
#include "posepolicy/robustness.hpp"
#include "posepolicy/run_config.hpp"
#include "posepolicy/se3.hpp"
#include "posepolicy/synth_world.hpp"
#include "posepolicy/trajectory.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace posepolicy;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Pose to_pose(const Eigen::Matrix4d& m) {
  return Pose{Rotation::FromMatrix(m.topLeftCorner<3, 3>()), m.topRightCorner<3, 1>()};
}

Trajectory to_trajectory(const std::vector<Eigen::Matrix4d>& mats) {
  std::vector<Pose> poses;
  poses.reserve(mats.size());
  for (const auto& m : mats) poses.push_back(to_pose(m));
  return Trajectory::FromPoses(poses);
}

RowMat actions_to_matrix(const ActionSequence& a) {
  RowMat out(static_cast<Eigen::Index>(a.horizon()), 6);
  for (std::size_t i = 0; i < a.horizon(); ++i) out.row(static_cast<Eigen::Index>(i)) = a.deltas[i].transpose();
  return out;
}

ActionSequence matrix_to_actions(const RowMat& m) {
  if (m.cols() != 6) throw std::invalid_argument("actions must have 6 columns");
  ActionSequence a;
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.deltas.push_back(m.row(i).transpose());
  return a;
}

std::vector<Vec3> to_points(const RowMat& m) {
  if (m.cols() != 3) throw std::invalid_argument("points must have 3 columns");
  std::vector<Vec3> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(m.row(i).transpose());
  return out;
}

std::vector<Eigen::Vector2d> to_pixels(const RowMat& m) {
  if (m.cols() != 2) throw std::invalid_argument("pixels must have 2 columns");
  std::vector<Eigen::Vector2d> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(m.row(i).transpose());
  return out;
}

synth::Observation to_observation(const RowMat& image, const RowMat& mask) {
  if (image.rows() != image.cols() || mask.rows() != image.rows() || mask.cols() != image.cols()) {
    throw std::invalid_argument("image and mask must be square and of equal size");
  }
  synth::Observation o;
  o.size = static_cast<int>(image.rows());
  o.image.assign(image.data(), image.data() + image.size());
  o.mask.resize(static_cast<std::size_t>(mask.size()));
  for (Eigen::Index i = 0; i < mask.size(); ++i) o.mask[static_cast<std::size_t>(i)] = mask.data()[i] != 0.0;
  return o;
}

py::tuple observation_arrays(const synth::Observation& o) {
  RowMat img(o.size, o.size), mask(o.size, o.size);
  for (int i = 0; i < o.size * o.size; ++i) {
    img.data()[i] = o.image[static_cast<std::size_t>(i)];
    mask.data()[i] = o.mask[static_cast<std::size_t>(i)];
  }
  return py::make_tuple(img, mask);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Diffusion motion policy core: SE(3) algebra, evaluation, and robustness scores";

  m.def("compose", [](const Eigen::Matrix4d& a, const Eigen::Matrix4d& b) {
    return compose(to_pose(a), to_pose(b)).matrix();
  });
  m.def("inverse", [](const Eigen::Matrix4d& a) { return inverse(to_pose(a)).matrix(); });
  m.def("log", [](const Eigen::Matrix4d& a) { return Vec6(log(to_pose(a))); },
        "Split 6D log (tx, ty, tz, rx, ry, rz) of a 4x4 pose");
  m.def("exp", [](const Vec6& v) { return exp(v).matrix(); });
  m.def("se3_log", [](const Eigen::Matrix4d& a) { return se3_log(to_pose(a)); });
  m.def("se3_exp", [](const Vec6& v) { return se3_exp(v).matrix(); });
  m.def("geodesic_angle", [](const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
    return geodesic_angle(Rotation::FromMatrix(a), Rotation::FromMatrix(b));
  });
  m.def("random_pose", [](std::uint64_t seed, double trans_scale, double rot_scale) {
    return random_pose(seed, trans_scale, rot_scale).matrix();
  });

  m.def("extract_actions", [](const std::vector<Eigen::Matrix4d>& poses, std::size_t t, std::size_t k) {
    return actions_to_matrix(extract_actions(to_trajectory(poses), t, k));
  });
  m.def("compose_window", [](const Eigen::Matrix4d& start, const RowMat& actions, std::size_t w) {
    return compose_window(to_pose(start), matrix_to_actions(actions), w).matrix();
  });

  m.def(
      "rpe",
      [](const std::vector<Eigen::Matrix4d>& gt, const std::vector<std::size_t>& starts,
         const std::vector<Eigen::Matrix4d>& predicted, int w) {
        if (starts.size() != predicted.size()) throw std::invalid_argument("one prediction per window start");
        std::vector<eval::WindowPrediction> preds;
        for (std::size_t i = 0; i < starts.size(); ++i) preds.push_back({0, starts[i], w, to_pose(predicted[i])});
        const auto res = eval::rpe(preds, eval::GroundTruth{{0, to_trajectory(gt)}}, w);
        std::vector<double> trans, rot;
        for (const auto& r : res.records) {
          trans.push_back(r.trans_err_mm);
          rot.push_back(r.rot_err_deg);
        }
        return py::make_tuple(trans, rot);
      },
      py::arg("gt"), py::arg("starts"), py::arg("predicted"), py::arg("w"),
      "Per-window translation (mm) and rotation (deg) errors of predicted relative motions");
  m.def("umeyama", [](const RowMat& source, const RowMat& target) {
    const auto s = eval::umeyama_sim3(to_points(source), to_points(target));
    return py::make_tuple(s.scale, Eigen::Matrix3d(s.rotation.matrix()), Vec3(s.translation));
  });
  m.def(
      "eight_point",
      [](const RowMat& px1, const RowMat& px2, int image_size) {
        const auto rp = eval::eight_point(to_pixels(px1), to_pixels(px2), synth::Camera::ForSize(image_size));
        return py::make_tuple(Eigen::Matrix3d(rp.rotation.matrix()), Vec3(rp.direction));
      },
      py::arg("px1"), py::arg("px2"), py::arg("image_size"));
  m.def("window_starts", &eval::window_starts, py::arg("length"), py::arg("k"), py::arg("stride") = 1);

  m.def("cosine_schedule", [](int steps) { return policy::cosine_schedule(steps).alpha_bar; }, py::arg("steps"));
  m.def("ddim_timesteps", &policy::ddim_timesteps, py::arg("diffusion_steps"), py::arg("inference_steps"));

  m.def("texture_score", [](const RowMat& image, const RowMat& mask) {
    return robust::texture_score(to_observation(image, mask));
  });
  m.def("illum_change_score", [](const RowMat& source, const RowMat& target, const RowMat& mask) {
    return robust::illum_change_score(to_observation(source, mask), to_observation(target, mask));
  });
  m.def("quartile_bins", [](const std::vector<double>& scores) {
    std::vector<std::size_t> lo, hi;
    double p25 = 0.0, p75 = 0.0;
    robust::quartile_bins(scores, lo, hi, &p25, &p75);
    return py::make_tuple(lo, hi, p25, p75);
  });

  m.def(
      "render",
      [](std::uint64_t scene_seed, const Eigen::Matrix4d& camera_to_world, int image_size) {
        synth::SceneParams p;
        p.seed = scene_seed;
        return observation_arrays(
            synth::render(synth::make_scene(p), synth::Camera::ForSize(image_size), to_pose(camera_to_world)));
      },
      py::arg("scene_seed"), py::arg("camera_to_world"), py::arg("image_size") = 40,
      "Renders the default tube scene; returns (image, mask)");

  m.def("parse_run_config", [](const std::string& text) { return parse_run_config(text).to_kv(); });

  py::register_exception<eval::BaselineFailure>(m, "BaselineFailure", PyExc_RuntimeError);
}
