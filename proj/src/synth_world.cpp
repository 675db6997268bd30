#include "posepolicy/synth_world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace posepolicy::synth {

namespace fs = std::filesystem;

Scene make_empty_scene() {
  Scene s;
  s.landmarks.clear();
  return s;
}

Scene make_scene(const SceneParams& params) {
  if (params.tube_radius <= 0.0 || params.density <= 0.0 || params.z_max <= params.z_min) {
    throw std::invalid_argument("invalid scene parameters");
  }
  Scene scene;
  scene.params = params;
  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // Alternating zones along the axis, starting textured.
  std::vector<std::pair<double, double>> zones;  // [start, end), textured flag by parity
  {
    double z = params.z_min;
    while (z < params.z_max) {
      const double len = params.zone_length_min + (params.zone_length_max - params.zone_length_min) * u01(rng);
      zones.emplace_back(z, std::min(z + len, params.z_max));
      z += len;
    }
  }
  for (std::size_t i = 1; i < zones.size(); i += 2) scene.smooth_zones.push_back(zones[i]);
  auto is_textured = [&](double z) {
    for (const auto& [a, b] : scene.smooth_zones) {
      if (z >= a && z < b) return false;
    }
    return true;
  };

  // Stratified (jittered grid) placement on the wall.
  const double spacing = 1.0 / std::sqrt(params.density);
  const int n_phi = std::max(8, static_cast<int>(std::round(2.0 * std::numbers::pi * params.tube_radius / spacing)));
  const int n_z = static_cast<int>(std::ceil((params.z_max - params.z_min) / spacing));
  const double dphi = 2.0 * std::numbers::pi / n_phi;
  scene.landmarks.reserve(static_cast<std::size_t>(n_phi) * n_z);
  const double low_freq_phase = 2.0 * std::numbers::pi * u01(rng);
  for (int iz = 0; iz < n_z; ++iz) {
    for (int ip = 0; ip < n_phi; ++ip) {
      const double z = params.z_min + (iz + u01(rng)) * spacing;
      const double phi = (ip + u01(rng)) * dphi;
      Landmark lm;
      lm.position = Vec3(params.tube_radius * std::cos(phi), params.tube_radius * std::sin(phi), z);
      lm.textured = is_textured(z);
      const double speckle = u01(rng);
      if (lm.textured) {
        lm.albedo = 0.15 + 0.85 * speckle;
      } else {
        // smooth mucosa: slowly varying albedo, no speckle
        lm.albedo = 0.55 + 0.04 * std::sin(0.05 * z + low_freq_phase) * std::cos(phi);
      }
      scene.landmarks.push_back(lm);
    }
  }
  return scene;
}

Camera Camera::ForSize(int size) {
  Camera c;
  c.size = size;
  c.focal = 0.8 * size;
  c.cx = 0.5 * (size - 1);
  c.cy = 0.5 * (size - 1);
  c.mask_radius = 0.5 * size;
  return c;
}

void Camera::validate() const {
  if (size <= 0) throw std::invalid_argument("camera size must be positive");
  if (focal <= 0.0) throw std::invalid_argument("camera focal length must be positive");
  if (mask_radius <= 0.0 || mask_radius > 0.5 * size) {
    throw std::invalid_argument("mask radius must be in (0, size/2]");
  }
}

bool Camera::in_mask(int row, int col) const {
  const double dx = col - cx;
  const double dy = row - cy;
  return dx * dx + dy * dy <= mask_radius * mask_radius;
}

Observation make_mask_only(const Camera& camera) {
  camera.validate();
  Observation obs;
  obs.size = camera.size;
  const auto n = static_cast<std::size_t>(camera.size) * camera.size;
  obs.image.assign(n, 0.0);
  obs.mask.assign(n, 0);
  for (int r = 0; r < camera.size; ++r) {
    for (int c = 0; c < camera.size; ++c) {
      obs.mask[static_cast<std::size_t>(r) * camera.size + c] = camera.in_mask(r, c) ? 1 : 0;
    }
  }
  return obs;
}

Observation render(const Scene& scene, const Camera& camera, const Pose& camera_to_world) {
  Observation obs = make_mask_only(camera);
  const Pose world_to_camera = inverse(camera_to_world);
  const int S = camera.size;
  constexpr double kNear = 0.5;
  constexpr double kMinSigma = 0.5;

  for (const auto& lm : scene.landmarks) {
    const Vec3 p = world_to_camera * lm.position;
    if (p.z() <= kNear) continue;
    const double u = camera.focal * p.x() / p.z() + camera.cx;
    const double v = camera.focal * p.y() / p.z() + camera.cy;
    const double sigma = std::max(kMinSigma, camera.focal * scene.params.splat_radius / p.z());
    const double reach = 3.0 * sigma;
    if (u < -reach || u > S - 1 + reach || v < -reach || v > S - 1 + reach) continue;
    const double amplitude = scene.params.light_gain * lm.albedo / p.squaredNorm();
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const int c0 = std::max(0, static_cast<int>(std::floor(u - reach)));
    const int c1 = std::min(S - 1, static_cast<int>(std::ceil(u + reach)));
    const int r0 = std::max(0, static_cast<int>(std::floor(v - reach)));
    const int r1 = std::min(S - 1, static_cast<int>(std::ceil(v + reach)));
    for (int r = r0; r <= r1; ++r) {
      const double dy = r - v;
      for (int c = c0; c <= c1; ++c) {
        const double dx = c - u;
        obs.image[static_cast<std::size_t>(r) * S + c] += amplitude * std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
    }
  }
  for (std::size_t i = 0; i < obs.image.size(); ++i) {
    obs.image[i] = obs.mask[i] ? std::clamp(obs.image[i], 0.0, 1.0) : 0.0;
  }
  return obs;
}

std::vector<ProjectedLandmark> project_landmarks(const Scene& scene, const Camera& camera,
                                                 const Pose& camera_to_world,
                                                 const ProjectionOptions& options, std::mt19937_64* rng) {
  const Pose world_to_camera = inverse(camera_to_world);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<ProjectedLandmark> out;
  for (std::size_t i = 0; i < scene.landmarks.size(); ++i) {
    const auto& lm = scene.landmarks[i];
    if (options.textured_only && !lm.textured) continue;
    const Vec3 p = world_to_camera * lm.position;
    if (p.z() <= 0.5 || p.z() > options.max_depth) continue;
    Eigen::Vector2d px(camera.focal * p.x() / p.z() + camera.cx, camera.focal * p.y() / p.z() + camera.cy);
    const double dx = px.x() - camera.cx;
    const double dy = px.y() - camera.cy;
    if (dx * dx + dy * dy > camera.mask_radius * camera.mask_radius) continue;
    if (options.pixel_noise > 0.0 && rng != nullptr) {
      px.x() += options.pixel_noise * noise(*rng);
      px.y() += options.pixel_noise * noise(*rng);
    }
    out.push_back(ProjectedLandmark{static_cast<int>(i), px, p.z()});
  }
  return out;
}

MotionKind parse_motion_kind(const std::string& name) {
  if (name == "smooth-advance") return MotionKind::SmoothAdvance;
  if (name == "orbit") return MotionKind::Orbit;
  if (name == "jitter") return MotionKind::Jitter;
  throw std::invalid_argument("unknown motion profile '" + name + "'");
}

std::string to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::SmoothAdvance: return "smooth-advance";
    case MotionKind::Orbit: return "orbit";
    case MotionKind::Jitter: return "jitter";
  }
  return "unknown";
}

namespace {

constexpr int kMaxResamples = 1000;

double radial(const Pose& p) { return p.translation.head<2>().norm(); }

Vec3 gaussian3(std::mt19937_64& rng, double std) {
  std::normal_distribution<double> n01(0.0, 1.0);
  return Vec3(std * n01(rng), std * n01(rng), std * n01(rng));
}

PoseVec6 split(const Vec3& lin, const Vec3& ang) {
  PoseVec6 v;
  v << lin, ang;
  return v;
}

}  // namespace

Trajectory generate_trajectory(std::uint64_t seed, std::size_t n_frames, const MotionProfile& profile,
                               const Pose& start, double max_radius) {
  if (n_frames < 2) throw std::invalid_argument("n_frames must be >= 2");
  if (profile.trans_std < 0.0 || profile.rot_std < 0.0) throw std::invalid_argument("negative motion std");
  if (profile.smoothing < 0.0 || profile.smoothing >= 1.0) throw std::invalid_argument("smoothing must be in [0, 1)");

  std::mt19937_64 rng(seed);
  std::vector<Pose> poses;
  poses.reserve(n_frames);
  poses.push_back(start);

  const double alpha = profile.smoothing;
  const double innov = std::sqrt(1.0 - alpha * alpha);
  Vec3 v_lin = gaussian3(rng, profile.trans_std);
  Vec3 v_ang = gaussian3(rng, profile.rot_std);

  for (std::size_t n = 1; n < n_frames; ++n) {
    const Pose& prev = poses.back();
    bool accepted = false;
    for (int attempt = 0; attempt < kMaxResamples && !accepted; ++attempt) {
      Pose next;
      Vec3 cand_lin = v_lin, cand_ang = v_ang;
      switch (profile.kind) {
        case MotionKind::SmoothAdvance: {
          if (attempt == 0) {
            cand_lin = alpha * v_lin + innov * gaussian3(rng, profile.trans_std);
            cand_ang = alpha * v_ang + innov * gaussian3(rng, profile.rot_std);
          } else {
            // redraw from the stationary distribution to escape the wall
            cand_lin = gaussian3(rng, profile.trans_std);
            cand_ang = gaussian3(rng, profile.rot_std);
          }
          const Vec3 restore = -profile.heading_restore * (start.rotation.inverse() * prev.rotation).Log();
          const Vec3 lin = cand_lin + Vec3(0.0, 0.0, profile.forward_speed);
          next = compose(prev, exp(split(lin, cand_ang + restore)));
          break;
        }
        case MotionKind::Orbit: {
          const double phi = profile.orbit_rate * static_cast<double>(n);
          const Vec3 offset(profile.orbit_radius * (std::cos(phi) - 1.0), profile.orbit_radius * std::sin(phi),
                            profile.forward_speed * static_cast<double>(n));
          const Pose nominal{start.rotation * Rotation::RotZ(phi), start.translation + start.rotation * offset};
          next = compose(nominal, exp(split(gaussian3(rng, profile.trans_std), gaussian3(rng, profile.rot_std))));
          break;
        }
        case MotionKind::Jitter: {
          const Pose nominal{start.rotation,
                             start.translation +
                                 start.rotation * Vec3(0.0, 0.0, profile.forward_speed * static_cast<double>(n))};
          next = compose(nominal, exp(split(gaussian3(rng, profile.trans_std), gaussian3(rng, profile.rot_std))));
          break;
        }
      }
      if (radial(next) <= max_radius) {
        poses.push_back(next);
        v_lin = cand_lin;
        v_ang = cand_ang;
        accepted = true;
      }
    }
    if (!accepted) throw std::runtime_error("unreachable profile constraints");
  }
  return Trajectory::FromPoses(poses);
}

Sequence render_sequence(const Scene& scene, const Camera& camera, int id, const Trajectory& world) {
  if (world.empty()) throw std::invalid_argument("empty trajectory");
  Sequence seq;
  seq.id = id;
  seq.origin = world.pose(0);
  seq.gt = anchor(world);
  seq.frames.reserve(world.size());
  for (std::size_t i = 0; i < world.size(); ++i) seq.frames.push_back(render(scene, camera, world.pose(i)));
  return seq;
}

std::vector<StateActionSample> Dataset::state_actions() const {
  std::vector<StateActionSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(StateActionSample{s.state, s.actions});
  return out;
}

Dataset build_dataset(std::vector<Sequence> sequences, std::size_t k) {
  if (k == 0) throw std::invalid_argument("horizon must be >= 1");
  Dataset ds;
  ds.horizon = k;
  ds.sequences = std::move(sequences);
  for (std::size_t s = 0; s < ds.sequences.size(); ++s) {
    const auto& seq = ds.sequences[s];
    if (!seq.gt.anchored()) throw std::invalid_argument("dataset trajectories must be anchored");
    if (seq.gt.size() < k + 1) {
      ++ds.skipped_sequences;
      continue;
    }
    for (std::size_t t = 0; t + k < seq.gt.size(); ++t) {
      WindowSample w;
      w.sequence = s;
      w.t = t;
      w.state = log(seq.gt.pose(t));
      w.actions = extract_actions(seq.gt, t, k);
      w.start = seq.gt.pose(t);
      w.end = seq.gt.pose(t + k);
      ds.samples.push_back(std::move(w));
    }
  }
  return ds;
}

Dataset build_dataset(const Scene& scene, const Camera& camera, std::span<const Trajectory> world_trajectories,
                      std::size_t k) {
  std::vector<Sequence> seqs;
  seqs.reserve(world_trajectories.size());
  for (std::size_t i = 0; i < world_trajectories.size(); ++i) {
    seqs.push_back(render_sequence(scene, camera, static_cast<int>(i), world_trajectories[i]));
  }
  return build_dataset(std::move(seqs), k);
}

void write_pgm(const fs::path& path, int size, std::span<const std::uint8_t> pixels) {
  if (pixels.size() != static_cast<std::size_t>(size) * size) throw std::invalid_argument("pgm size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << size << ' ' << size << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

std::vector<std::uint8_t> read_pgm(const fs::path& path, int& size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || w != h || maxval != 255) {
    throw std::runtime_error(path.string() + ": expected square 8-bit binary PGM");
  }
  in.get();
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated");
  size = w;
  return pixels;
}

void write_observation(const fs::path& image_path, const fs::path& mask_path, const Observation& obs) {
  std::vector<std::uint8_t> img(obs.image.size()), mask(obs.mask.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = static_cast<std::uint8_t>(std::lround(std::clamp(obs.image[i], 0.0, 1.0) * 255.0));
    mask[i] = obs.mask[i] ? 255 : 0;
  }
  write_pgm(image_path, obs.size, img);
  write_pgm(mask_path, obs.size, mask);
}

Observation read_observation(const fs::path& image_path, const fs::path& mask_path) {
  int s_img = 0, s_mask = 0;
  const auto img = read_pgm(image_path, s_img);
  const auto mask = read_pgm(mask_path, s_mask);
  if (s_img != s_mask) throw std::runtime_error("image/mask size mismatch: " + image_path.string());
  Observation obs;
  obs.size = s_img;
  obs.image.resize(img.size());
  obs.mask.resize(mask.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    obs.mask[i] = mask[i] > 127 ? 1 : 0;
    obs.image[i] = obs.mask[i] ? img[i] / 255.0 : 0.0;
  }
  return obs;
}

namespace {

std::string seq_tag(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d", id);
  return buf;
}

}  // namespace

void write_split(const fs::path& dir, const std::vector<Sequence>& sequences) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.csv").string());
  manifest << "sequence,frame,image_path,mask_path\n";
  for (const auto& seq : sequences) {
    const std::string tag = seq_tag(seq.id);
    write_trajectory_csv(dir / ("traj_" + tag + ".csv"), seq.gt);
    std::vector<Pose> world;
    for (std::size_t i = 0; i < seq.gt.size(); ++i) world.push_back(seq.world_pose(i));
    write_trajectory_csv(dir / ("world_" + tag + ".csv"), Trajectory::FromPoses(world, seq.gt[0].index));
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
      const std::string name = tag + "_" + std::to_string(seq.gt[i].index) + ".pgm";
      const std::string img = "images/" + name;
      const std::string mask = "masks/" + name;
      write_observation(dir / img, dir / mask, seq.frames[i]);
      manifest << seq.id << ',' << seq.gt[i].index << ',' << img << ',' << mask << '\n';
    }
  }
}

std::vector<Sequence> read_split(const fs::path& dir) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("missing manifest: " + (dir / "manifest.csv").string());
  std::string line;
  std::getline(manifest, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "sequence,frame,image_path,mask_path") {
    throw std::runtime_error("unexpected manifest header in " + dir.string());
  }
  std::map<int, std::vector<std::pair<std::int64_t, Observation>>> frames;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f_seq, f_frame, f_img, f_mask;
    std::getline(ss, f_seq, ',');
    std::getline(ss, f_frame, ',');
    std::getline(ss, f_img, ',');
    std::getline(ss, f_mask, ',');
    if (f_mask.empty()) throw std::runtime_error("malformed manifest row: " + line);
    frames[std::stoi(f_seq)].emplace_back(std::stoll(f_frame), read_observation(dir / f_img, dir / f_mask));
  }
  std::vector<Sequence> out;
  for (auto& [id, obs] : frames) {
    const std::string tag = seq_tag(id);
    Sequence seq;
    seq.id = id;
    Trajectory gt = read_trajectory_csv(dir / ("traj_" + tag + ".csv"));
    const Trajectory world = read_trajectory_csv(dir / ("world_" + tag + ".csv"));
    if (gt.size() != obs.size() || world.size() != obs.size()) {
      throw std::runtime_error("sequence " + tag + ": trajectory/frame count mismatch");
    }
    seq.origin = world.pose(0);
    seq.gt = Trajectory(gt.frames(), true);
    std::sort(obs.begin(), obs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < obs.size(); ++i) {
      if (obs[i].first != seq.gt[i].index) throw std::runtime_error("sequence " + tag + ": frame index mismatch");
      seq.frames.push_back(std::move(obs[i].second));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace posepolicy::synth
