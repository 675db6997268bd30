#include "posepolicy/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace posepolicy {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("invalid value for key '" + key + "': '" + value + "'");
}

template <typename T>
T parse_num(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || value.empty()) bad_value(key, value);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_num<int>(key, trim(item)));
  if (out.empty()) bad_value(key, value);
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt(bool b) { return b ? "true" : "false"; }

std::string fmt_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

std::map<std::string, Field> fields(RunConfig& c) {
  std::map<std::string, Field> f;
  auto str = [&](const char* k, std::string& v) {
    f[k] = {[&v] { return v; }, [&v](const std::string& s) { v = s; }};
  };
  auto dbl = [&](const char* k, double& v) {
    f[k] = {[&v] { return fmt(v); }, [&v, k](const std::string& s) { v = parse_num<double>(k, s); }};
  };
  auto i32 = [&](const char* k, int& v) {
    f[k] = {[&v] { return std::to_string(v); }, [&v, k](const std::string& s) { v = parse_num<int>(k, s); }};
  };
  auto u64 = [&](const char* k, std::uint64_t& v) {
    f[k] = {[&v] { return std::to_string(v); }, [&v, k](const std::string& s) { v = parse_num<std::uint64_t>(k, s); }};
  };
  auto usz = [&](const char* k, std::size_t& v) {
    f[k] = {[&v] { return std::to_string(v); }, [&v, k](const std::string& s) { v = parse_num<std::size_t>(k, s); }};
  };
  auto flag = [&](const char* k, bool& v) {
    f[k] = {[&v] { return fmt(v); }, [&v, k](const std::string& s) { v = parse_bool(k, s); }};
  };

  str("out_dir", c.out_dir);
  str("data_dir", c.data_dir);
  str("checkpoint", c.checkpoint);
  str("eval_dir", c.eval_dir);
  str("stratify_dir", c.stratify_dir);

  u64("data_seed", c.data_seed);
  dbl("scene_tube_radius_mm", c.scene.tube_radius);
  dbl("scene_z_min_mm", c.scene.z_min);
  dbl("scene_z_max_mm", c.scene.z_max);
  dbl("scene_density", c.scene.density);
  dbl("scene_zone_length_min_mm", c.scene.zone_length_min);
  dbl("scene_zone_length_max_mm", c.scene.zone_length_max);
  dbl("scene_splat_radius_mm", c.scene.splat_radius);
  dbl("scene_light_gain", c.scene.light_gain);
  i32("train_sequences", c.train.sequences);
  i32("train_frames", c.train.frames);
  i32("val_sequences", c.val.sequences);
  i32("val_frames", c.val.frames);
  i32("test_sequences", c.test.sequences);
  i32("test_frames", c.test.frames);

  f["motion_kind"] = {[&c] { return synth::to_string(c.motion.kind); },
                      [&c](const std::string& s) {
                        try {
                          c.motion.kind = synth::parse_motion_kind(s);
                        } catch (const std::exception&) {
                          bad_value("motion_kind", s);
                        }
                      }};
  dbl("motion_trans_std_mm", c.motion.trans_std);
  dbl("motion_rot_std_rad", c.motion.rot_std);
  dbl("motion_forward_speed_mm", c.motion.forward_speed);
  dbl("motion_smoothing", c.motion.smoothing);
  dbl("motion_heading_restore", c.motion.heading_restore);
  dbl("motion_orbit_radius_mm", c.motion.orbit_radius);
  dbl("motion_orbit_rate_rad", c.motion.orbit_rate);

  // Policy hyperparameters keep their own key names.
  for (const auto& [key, unused] : c.policy.to_kv()) {
    const std::string k = key;
    const bool is_list = k == "encoder_channels" || k == "denoiser_channels";
    f[k] = {[&c, k] { return c.policy.to_kv().at(k); },
            [&c, k, is_list](const std::string& s) {
              if (is_list) {
                parse_int_list(k, s);
              } else if (k == "seed") {
                parse_num<std::uint64_t>(k, s);
              } else {
                parse_num<double>(k, s);
              }
              c.policy.apply_kv({{k, s}});
            }};
  }
  usz("val_stride", c.val_stride);

  f["eval_w"] = {[&c] { return fmt_list(c.eval_w); },
                 [&c](const std::string& s) { c.eval_w = parse_int_list("eval_w", s); }};
  usz("eval_stride", c.eval_stride);
  flag("baseline_zero_motion", c.baseline_zero_motion);
  flag("baseline_constant_velocity", c.baseline_constant_velocity);
  flag("baseline_eight_point", c.baseline_eight_point);
  flag("baseline_gt_oracle", c.baseline_gt_oracle);
  dbl("eight_point_pixel_noise_px", c.eight_point_pixel_noise);
  i32("eight_point_min_correspondences", c.eight_point_min_correspondences);
  dbl("eight_point_max_depth_mm", c.eight_point_max_depth);

  str("stratify_method", c.stratify_method);
  i32("stratify_w", c.stratify_w);
  return f;
}

fs::path resolve(const std::string& explicit_path, const std::string& out_dir, const char* fallback) {
  return explicit_path.empty() ? fs::path(out_dir) / fallback : fs::path(explicit_path);
}

}  // namespace

RunConfig::RunConfig() {
  motion.kind = synth::MotionKind::SmoothAdvance;
  motion.trans_std = 0.3;
  motion.rot_std = 0.01;
  motion.forward_speed = 0.5;
  policy.image_size = 40;
}

fs::path RunConfig::data_path() const { return resolve(data_dir, out_dir, "data"); }
fs::path RunConfig::checkpoint_path() const { return resolve(checkpoint, out_dir, "model/policy.ckpt"); }
fs::path RunConfig::eval_path() const { return resolve(eval_dir, out_dir, "eval"); }
fs::path RunConfig::stratify_path() const { return resolve(stratify_dir, out_dir, "stratify"); }

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (out_dir.empty()) fail("out_dir must not be empty");
  policy.validate();
  for (const auto* s : {&train, &val, &test}) {
    if (s->sequences < 0 || s->frames < 0) fail("split sizes must be non-negative");
  }
  if (train.sequences < 1 || train.frames < policy.horizon + 1) {
    fail("training split needs at least one sequence of horizon + 1 frames");
  }
  if (val_stride == 0 || eval_stride == 0) fail("strides must be >= 1");
  for (int w : eval_w) {
    if (w < 1 || w > policy.horizon) fail("eval_w values must lie in [1, horizon]");
  }
  if (stratify_w < 1 || stratify_w > policy.horizon) fail("stratify_w must lie in [1, horizon]");
  if (eight_point_min_correspondences < 8) fail("eight_point_min_correspondences must be >= 8");
  if (eight_point_pixel_noise < 0.0) fail("eight_point_pixel_noise_px must be >= 0");
  if (scene.zone_length_min <= 0.0 || scene.zone_length_max < scene.zone_length_min) fail("bad zone lengths");
}

std::map<std::string, std::string> RunConfig::to_kv() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields(const_cast<RunConfig&>(*this))) out[k] = f.get();
  return out;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [k, v] : to_kv()) s += k + " = " + v + "\n";
  return s;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto f = fields(*this);
  auto it = f.find(key);
  if (it == f.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second.set(value);
}

std::vector<std::string> RunConfig::keys() {
  RunConfig c;
  std::vector<std::string> out;
  for (const auto& [k, f] : fields(c)) out.push_back(k);
  return out;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("line " + std::to_string(lineno) + ": empty key");
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh) {
      throw std::invalid_argument("duplicate config key '" + key + "' (lines " + std::to_string(it->second) + " and " +
                                  std::to_string(lineno) + ")");
    }
    c.set(key, value);
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

synth::SceneParams split_scene(const RunConfig& config, int split_index) {
  synth::SceneParams p = config.scene;
  p.seed = config.data_seed * 1000003ULL + static_cast<std::uint64_t>(split_index) + 1;
  return p;
}

}  // namespace posepolicy
