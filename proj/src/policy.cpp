#include "posepolicy/policy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace posepolicy::policy {

namespace fs = std::filesystem;
using nn::Shape;
using nn::Tape;
using nn::Var;

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void PolicyConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("policy config: " + m); };
  if (horizon < 1) fail("horizon must be >= 1");
  if (image_size < 2) fail("image_size must be >= 2");
  if (diffusion_steps < 1) fail("diffusion_steps must be >= 1");
  if (inference_steps < 1 || inference_steps > diffusion_steps) fail("need 1 <= inference_steps <= diffusion_steps");
  if (encoder_channels.empty() || denoiser_channels.empty()) fail("channel lists must be non-empty");
  for (int c : encoder_channels) if (c < 1) fail("encoder channels must be positive");
  for (int c : denoiser_channels) if (c < 1) fail("denoiser channels must be positive");
  if (encoder_width < 1 || cond_width < 1) fail("widths must be positive");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) fail("time_embed_dim must be even and >= 2");
  if (!(learning_rate > 0.0) || weight_decay < 0.0) fail("bad optimizer settings");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 0) fail("epochs must be >= 0");
  if (state_noise_trans < 0.0 || state_noise_rot < 0.0) fail("state noise stds must be >= 0");
}

std::map<std::string, std::string> PolicyConfig::to_kv() const {
  return {
      {"horizon", std::to_string(horizon)},
      {"image_size", std::to_string(image_size)},
      {"diffusion_steps", std::to_string(diffusion_steps)},
      {"inference_steps", std::to_string(inference_steps)},
      {"encoder_channels", join_ints(encoder_channels)},
      {"encoder_width", std::to_string(encoder_width)},
      {"denoiser_channels", join_ints(denoiser_channels)},
      {"cond_width", std::to_string(cond_width)},
      {"time_embed_dim", std::to_string(time_embed_dim)},
      {"learning_rate", fmt_double(learning_rate)},
      {"weight_decay", fmt_double(weight_decay)},
      {"adam_beta1", fmt_double(adam_beta1)},
      {"adam_beta2", fmt_double(adam_beta2)},
      {"batch_size", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"state_noise_trans_mm", fmt_double(state_noise_trans)},
      {"state_noise_rot_rad", fmt_double(state_noise_rot)},
      {"seed", std::to_string(seed)},
  };
}

void PolicyConfig::apply_kv(const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* key, auto& field) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<T, int>) field = std::stoi(it->second);
    else if constexpr (std::is_same_v<T, double>) field = std::stod(it->second);
    else if constexpr (std::is_same_v<T, std::uint64_t>) field = std::stoull(it->second);
    else if constexpr (std::is_same_v<T, std::vector<int>>) field = parse_ints(it->second);
  };
  get("horizon", horizon);
  get("image_size", image_size);
  get("diffusion_steps", diffusion_steps);
  get("inference_steps", inference_steps);
  get("encoder_channels", encoder_channels);
  get("encoder_width", encoder_width);
  get("denoiser_channels", denoiser_channels);
  get("cond_width", cond_width);
  get("time_embed_dim", time_embed_dim);
  get("learning_rate", learning_rate);
  get("weight_decay", weight_decay);
  get("adam_beta1", adam_beta1);
  get("adam_beta2", adam_beta2);
  get("batch_size", batch_size);
  get("epochs", epochs);
  get("state_noise_trans_mm", state_noise_trans);
  get("state_noise_rot_rad", state_noise_rot);
  get("seed", seed);
}

// ---------------------------------------------------------------------------
// Diffusion schedule

NoiseSchedule cosine_schedule(int diffusion_steps, double offset) {
  if (diffusion_steps < 1) throw std::invalid_argument("diffusion_steps must be >= 1");
  auto f = [&](double t) {
    const double c = std::cos((t / diffusion_steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0.0);
  NoiseSchedule s;
  s.alpha_bar.resize(static_cast<std::size_t>(diffusion_steps));
  for (int t = 0; t < diffusion_steps; ++t) {
    s.alpha_bar[static_cast<std::size_t>(t)] = std::clamp(f(static_cast<double>(t)) / f0, 1e-4, 1.0);
  }
  return s;
}

std::vector<int> ddim_timesteps(int diffusion_steps, int inference_steps) {
  if (inference_steps < 1 || inference_steps > diffusion_steps) {
    throw std::invalid_argument("need 1 <= inference_steps <= diffusion_steps");
  }
  std::vector<int> ts;
  if (inference_steps == 1) return {diffusion_steps - 1};
  for (int i = 0; i < inference_steps; ++i) {
    const double pos = static_cast<double>(inference_steps - 1 - i) * (diffusion_steps - 1) / (inference_steps - 1);
    ts.push_back(static_cast<int>(std::lround(pos)));
  }
  return ts;
}

std::vector<double> timestep_embedding(int t, int dim) {
  const int half = dim / 2;
  std::vector<double> e(static_cast<std::size_t>(dim));
  for (int j = 0; j < half; ++j) {
    const double freq = half > 1 ? std::exp(-std::log(10000.0) * j / (half - 1)) : 1.0;
    e[static_cast<std::size_t>(j)] = std::sin(t * freq);
    e[static_cast<std::size_t>(half + j)] = std::cos(t * freq);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Model

namespace {

void add_linear(nn::ParameterStore& p, const std::string& name, int out, int in, std::mt19937_64& rng) {
  nn::init_uniform(p[p.add(name + ".w", {out, in})], in, rng);
  nn::init_uniform(p[p.add(name + ".b", {out})], in, rng);
}

void add_conv1d(nn::ParameterStore& p, const std::string& name, int out, int in, int k, std::mt19937_64& rng) {
  nn::init_uniform(p[p.add(name + ".w", {out, in, k})], in * k, rng);
  nn::init_uniform(p[p.add(name + ".b", {out})], in * k, rng);
}

Var lin(Tape& t, Var x, const std::string& name) {
  return nn::linear(t, x, t.param(name + ".w"), t.param(name + ".b"));
}

Var conv1(Tape& t, Var x, const std::string& name, int stride, int pad) {
  return nn::conv1d(t, x, t.param(name + ".w"), t.param(name + ".b"), stride, pad);
}

}  // namespace

PolicyModel::PolicyModel(const PolicyConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(init_seed);
  const int E = config_.encoder_width;
  const int Dc = config_.cond_width;

  int spatial = config_.image_size;
  int cin = 2;  // image + mask
  for (std::size_t i = 0; i < config_.encoder_channels.size(); ++i) {
    const int cout = config_.encoder_channels[i];
    const std::string name = "enc.conv" + std::to_string(i);
    nn::init_uniform(params_[params_.add(name + ".w", {cout, cin, 3, 3})], cin * 9, rng);
    nn::init_uniform(params_[params_.add(name + ".b", {cout})], cin * 9, rng);
    cin = cout;
    spatial = (spatial + 1) / 2;
  }
  flat_features_ = cin * spatial * spatial;
  add_linear(params_, "enc.fc", E, flat_features_, rng);
  add_linear(params_, "pair", E, 2 * E, rng);
  add_linear(params_, "state.fc1", E, 6, rng);
  add_linear(params_, "state.fc2", E, E, rng);
  add_linear(params_, "gate", E, 2 * E, rng);
  add_linear(params_, "cond.fc1", Dc, E + config_.time_embed_dim, rng);
  add_linear(params_, "cond.fc2", Dc, Dc, rng);

  const auto& ch = config_.denoiser_channels;
  add_conv1d(params_, "den.in", ch[0], 6, 3, rng);
  int c = ch[0];
  for (std::size_t i = 0; i < ch.size(); ++i) {
    add_res_block("den.down" + std::to_string(i), c, ch[i], rng);
    add_conv1d(params_, "den.down" + std::to_string(i) + ".pool", ch[i], ch[i], 3, rng);
    c = ch[i];
  }
  add_res_block("den.mid", c, c, rng);
  for (std::size_t i = ch.size(); i-- > 0;) {
    add_res_block("den.up" + std::to_string(i), c + ch[i], ch[i], rng);
    c = ch[i];
  }
  add_conv1d(params_, "den.out", 6, c, 1, rng);
}

void PolicyModel::add_res_block(const std::string& prefix, int cin, int cout, std::mt19937_64& rng) {
  add_conv1d(params_, prefix + ".conv1", cout, cin, 3, rng);
  add_linear(params_, prefix + ".film", 2 * cout, config_.cond_width, rng);
  add_conv1d(params_, prefix + ".conv2", cout, cout, 3, rng);
  if (cin != cout) add_conv1d(params_, prefix + ".skip", cout, cin, 1, rng);
}

Var PolicyModel::image_features(Tape& tape, std::span<const synth::Observation* const> images) const {
  const int S = config_.image_size;
  const int N = static_cast<int>(images.size());
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  std::vector<double> x(static_cast<std::size_t>(N) * 2 * plane);
  for (int n = 0; n < N; ++n) {
    const auto& obs = *images[static_cast<std::size_t>(n)];
    if (obs.size != S) {
      throw std::invalid_argument("image size mismatch: got " + std::to_string(obs.size) + ", config expects " +
                                  std::to_string(S));
    }
    double* dst = x.data() + static_cast<std::size_t>(n) * 2 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      dst[i] = obs.mask[i] ? obs.image[i] : 0.0;
      dst[plane + i] = obs.mask[i] ? 1.0 : 0.0;
    }
  }
  Var h = tape.constant({N, 2, S, S}, std::move(x));
  for (std::size_t i = 0; i < config_.encoder_channels.size(); ++i) {
    const std::string name = "enc.conv" + std::to_string(i);
    h = nn::silu(tape, nn::conv2d(tape, h, tape.param(name + ".w"), tape.param(name + ".b"), 2, 1));
  }
  h = nn::reshape(tape, h, {N, flat_features_});
  return nn::silu(tape, lin(tape, h, "enc.fc"));
}

Var PolicyModel::encode(Tape& tape, std::span<const synth::Observation* const> sources,
                        std::span<const synth::Observation* const> targets, std::span<const Vec6> states,
                        const EncodeOptions& options) const {
  const std::size_t B = sources.size();
  if (targets.size() != B || states.size() != B || B == 0) throw std::invalid_argument("encode: batch mismatch");
  // Both images of the pair go through one encoder pass: sources then targets.
  std::vector<const synth::Observation*> images(sources.begin(), sources.end());
  images.insert(images.end(), targets.begin(), targets.end());
  const Var feats = image_features(tape, images);
  const Var visual = nn::silu(tape, lin(tape, nn::pair_rows(tape, feats), "pair"));

  std::vector<double> s(B * 6);
  for (std::size_t n = 0; n < B; ++n) {
    for (int d = 0; d < 6; ++d) s[n * 6 + static_cast<std::size_t>(d)] = states[n][d];
  }
  const Var state_in = tape.constant({static_cast<int>(B), 6}, std::move(s));
  const Var state_feat = lin(tape, nn::silu(tape, lin(tape, state_in, "state.fc1")), "state.fc2");

  Var gate;
  if (options.zero_gate) {
    gate = tape.constant(tape.shape(state_feat), std::vector<double>(tape.value(state_feat).size(), 0.0));
  } else {
    gate = nn::sigmoid(tape, lin(tape, nn::concat(tape, visual, state_feat), "gate"));
  }
  return nn::add(tape, visual, nn::mul(tape, gate, state_feat));
}

Var PolicyModel::res_block(Tape& tape, const std::string& prefix, Var x, Var cond) const {
  Var h = nn::silu(tape, conv1(tape, x, prefix + ".conv1", 1, 1));
  h = nn::film(tape, h, lin(tape, cond, prefix + ".film"));
  h = nn::silu(tape, conv1(tape, h, prefix + ".conv2", 1, 1));
  const bool has_skip = [&] {
    try {
      params_.index(prefix + ".skip.w");
      return true;
    } catch (const std::out_of_range&) {
      return false;
    }
  }();
  const Var res = has_skip ? conv1(tape, x, prefix + ".skip", 1, 0) : x;
  return nn::add(tape, h, res);
}

Var PolicyModel::denoise(Tape& tape, Var noisy, std::span<const int> timesteps, Var cond) const {
  const Shape xs = tape.shape(noisy);
  const int k = config_.horizon;
  const int B = xs.empty() ? 0 : xs[0];
  if (xs.size() != 3 || xs[1] != 6 || xs[2] != k) {
    throw std::invalid_argument("denoise: expected [B,6," + std::to_string(k) + "], got " + nn::shape_str(xs));
  }
  if (static_cast<int>(timesteps.size()) != B || tape.shape(cond) != Shape{B, config_.encoder_width}) {
    throw std::invalid_argument("denoise: conditioning shape mismatch");
  }
  const int T = config_.diffusion_steps;
  const int De = config_.time_embed_dim;
  std::vector<double> temb(static_cast<std::size_t>(B) * De);
  for (int n = 0; n < B; ++n) {
    const int t = timesteps[static_cast<std::size_t>(n)];
    if (t < 0 || t >= T) throw std::invalid_argument("denoise: timestep out of range");
    const auto e = timestep_embedding(t, De);
    std::copy(e.begin(), e.end(), temb.begin() + static_cast<std::ptrdiff_t>(n) * De);
  }
  const Var c_in = nn::concat(tape, cond, tape.constant({B, De}, std::move(temb)));
  const Var c = nn::silu(tape, lin(tape, nn::silu(tape, lin(tape, c_in, "cond.fc1")), "cond.fc2"));

  const auto& ch = config_.denoiser_channels;
  Var h = conv1(tape, noisy, "den.in", 1, 1);
  std::vector<Var> skips;
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const std::string p = "den.down" + std::to_string(i);
    h = res_block(tape, p, h, c);
    skips.push_back(h);
    h = conv1(tape, h, p + ".pool", 2, 1);
  }
  h = res_block(tape, "den.mid", h, c);
  for (std::size_t i = ch.size(); i-- > 0;) {
    h = nn::upsample2(tape, h, tape.shape(skips[i])[2]);
    h = nn::concat(tape, h, skips[i]);
    h = res_block(tape, "den.up" + std::to_string(i), h, c);
  }
  return conv1(tape, h, "den.out", 1, 0);
}

namespace {

std::vector<double> to_channels(const ActionMatrix& a) {
  const auto k = static_cast<std::size_t>(a.rows());
  std::vector<double> out(6 * k);
  for (std::size_t l = 0; l < k; ++l) {
    for (std::size_t c = 0; c < 6; ++c) out[c * k + l] = a(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(c));
  }
  return out;
}

ActionMatrix from_channels(const double* data, int k) {
  ActionMatrix a(k, 6);
  for (int l = 0; l < k; ++l) {
    for (int c = 0; c < 6; ++c) a(l, c) = data[c * k + l];
  }
  return a;
}

}  // namespace

std::vector<double> encode(const PolicyModel& model, const synth::Observation& source,
                           const synth::Observation& target, const Vec6& state_normalized,
                           const EncodeOptions& options) {
  Tape tape(const_cast<nn::ParameterStore*>(&model.params()));
  const synth::Observation* src[] = {&source};
  const synth::Observation* dst[] = {&target};
  const Vec6 st[] = {state_normalized};
  return tape.value(model.encode(tape, src, dst, st, options));
}

ActionMatrix denoise(const PolicyModel& model, const ActionMatrix& noisy, int t, const std::vector<double>& cond) {
  const int k = model.config().horizon;
  if (noisy.rows() != k) throw std::invalid_argument("denoise: action sequence length mismatch");
  Tape tape(const_cast<nn::ParameterStore*>(&model.params()));
  const Var x = tape.constant({1, 6, k}, to_channels(noisy));
  const Var c = tape.constant({1, static_cast<int>(cond.size())}, cond);
  const int ts[] = {t};
  const Var out = model.denoise(tape, x, ts, c);
  return from_channels(tape.value(out).data(), k);
}

// ---------------------------------------------------------------------------
// Training

std::vector<TrainItem> make_train_items(const synth::Dataset& dataset, const NormStats& stats) {
  std::vector<TrainItem> items;
  items.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) {
    TrainItem it;
    it.source = &dataset.source(s);
    it.target = &dataset.target(s);
    it.state = s.start;
    it.x0.resize(static_cast<Eigen::Index>(s.actions.horizon()), 6);
    for (std::size_t i = 0; i < s.actions.horizon(); ++i) {
      it.x0.row(static_cast<Eigen::Index>(i)) =
          normalize(s.actions.deltas[i], stats.action_mean, stats.action_std).transpose();
    }
    items.push_back(std::move(it));
  }
  return items;
}

NoiseDraws draw_noise(const PolicyConfig& config, std::size_t batch, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> ut(0, config.diffusion_steps - 1);
  std::normal_distribution<double> n01(0.0, 1.0);
  NoiseDraws d;
  for (std::size_t n = 0; n < batch; ++n) {
    d.timesteps.push_back(ut(rng));
    ActionMatrix e(config.horizon, 6);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = n01(rng);
    d.noise.push_back(std::move(e));
    Vec6 sn;
    for (int j = 0; j < 3; ++j) sn[j] = config.state_noise_trans * n01(rng);
    for (int j = 3; j < 6; ++j) sn[j] = config.state_noise_rot * n01(rng);
    d.state_noise.push_back(sn);
  }
  return d;
}

ActionMatrix mix_noise(const ActionMatrix& x0, const ActionMatrix& eps, double alpha_bar) {
  return std::sqrt(alpha_bar) * x0 + std::sqrt(1.0 - alpha_bar) * eps;
}

double diffusion_loss(PolicyModel& model, std::span<const TrainItem> batch, const NoiseSchedule& schedule,
                      const NoiseDraws& draws, bool with_grad) {
  if (!model.norm_stats) throw std::logic_error("diffusion_loss: model has no NormStats");
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (draws.timesteps.size() != batch.size()) throw std::invalid_argument("noise draws do not match batch");
  const auto& stats = *model.norm_stats;
  const int k = model.config().horizon;
  const int B = static_cast<int>(batch.size());

  std::vector<const synth::Observation*> src, dst;
  std::vector<Vec6> states;
  std::vector<double> noisy, clean;
  noisy.reserve(static_cast<std::size_t>(B) * 6 * k);
  clean.reserve(noisy.capacity());
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& it = batch[n];
    if (it.x0.rows() != k) throw std::invalid_argument("train item horizon mismatch");
    src.push_back(it.source);
    dst.push_back(it.target);
    const Pose perturbed = compose(it.state, exp(draws.state_noise[n]));
    states.push_back(normalize(log(perturbed), stats.state_mean, stats.state_std));
    const double ab = schedule.alpha_bar.at(static_cast<std::size_t>(draws.timesteps[n]));
    const auto xt = to_channels(mix_noise(it.x0, draws.noise[n], ab));
    const auto x0 = to_channels(it.x0);
    noisy.insert(noisy.end(), xt.begin(), xt.end());
    clean.insert(clean.end(), x0.begin(), x0.end());
  }

  Tape tape(&model.params());
  const Var cond = model.encode(tape, src, dst, states);
  const Var x = tape.constant({B, 6, k}, std::move(noisy));
  const Var pred = model.denoise(tape, x, draws.timesteps, cond);
  const Var target = tape.constant({B, 6, k}, std::move(clean));
  const Var loss = nn::mse(tape, pred, target);
  if (with_grad) tape.backward(loss);
  return tape.value(loss)[0];
}

nn::AdamW make_optimizer(const PolicyConfig& config) {
  nn::AdamWConfig c;
  c.lr = config.learning_rate;
  c.beta1 = config.adam_beta1;
  c.beta2 = config.adam_beta2;
  c.weight_decay = config.weight_decay;
  return nn::AdamW(c);
}

double train_step(PolicyModel& model, nn::AdamW& optimizer, std::span<const TrainItem> batch,
                  const NoiseSchedule& schedule, std::mt19937_64& rng) {
  const NoiseDraws draws = draw_noise(model.config(), batch.size(), rng);
  model.params().zero_grad();
  const double loss = diffusion_loss(model, batch, schedule, draws, true);
  if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");
  optimizer.step(model.params());
  return loss;
}

// ---------------------------------------------------------------------------
// Sampling

ActionMatrix ddim_sample(const PolicyModel& model, const std::vector<double>& cond, const NoiseSchedule& schedule,
                         int inference_steps, const ActionMatrix& initial_noise) {
  const auto ts = ddim_timesteps(schedule.steps(), inference_steps);
  ActionMatrix x = initial_noise;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const ActionMatrix x0 = denoise(model, x, ts[i], cond);
    if (i + 1 == ts.size()) return x0;
    const double ab = schedule.alpha_bar[static_cast<std::size_t>(ts[i])];
    const double ab_next = schedule.alpha_bar[static_cast<std::size_t>(ts[i + 1])];
    const ActionMatrix eps = (x - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
    x = std::sqrt(ab_next) * x0 + std::sqrt(1.0 - ab_next) * eps;
  }
  return x;
}

ActionSequence sample_actions(const PolicyModel& model, const synth::Observation& source,
                              const synth::Observation& target, const Pose& state, const NoiseSchedule& schedule,
                              int inference_steps, const ActionMatrix& initial_noise) {
  if (!model.norm_stats) throw std::logic_error("sample_actions: missing NormStats");
  const auto& stats = *model.norm_stats;
  const Vec6 s = normalize(log(state), stats.state_mean, stats.state_std);
  const auto cond = encode(model, source, target, s);
  const ActionMatrix x0 = ddim_sample(model, cond, schedule, inference_steps, initial_noise);
  ActionSequence out;
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    out.deltas.push_back(denormalize(x0.row(i).transpose(), stats.action_mean, stats.action_std));
  }
  return out;
}

ActionSequence sample_actions(const PolicyModel& model, const synth::Observation& source,
                              const synth::Observation& target, const Pose& state, const NoiseSchedule& schedule,
                              int inference_steps, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  ActionMatrix noise(model.config().horizon, 6);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = n01(rng);
  return sample_actions(model, source, target, state, schedule, inference_steps, noise);
}

ActionPredictor policy_predictor(const PolicyModel& model, const NoiseSchedule& schedule, int inference_steps,
                                 std::uint64_t seed) {
  return [&model, schedule, inference_steps, seed](const synth::Dataset& ds, const synth::WindowSample& s) {
    std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(ds.sequences[s.sequence].id), static_cast<std::uint32_t>(s.t)};
    std::mt19937_64 rng(sseq);
    return sample_actions(model, ds.source(s), ds.target(s), s.start, schedule, inference_steps, rng);
  };
}

ActionPredictor ground_truth_predictor() {
  return [](const synth::Dataset&, const synth::WindowSample& s) { return s.actions; };
}

std::vector<eval::WindowPrediction> rollout_oracle(const ActionPredictor& predictor, const synth::Dataset& dataset,
                                                   std::size_t stride, int w) {
  if (stride == 0) throw std::invalid_argument("stride must be >= 1");
  if (w < 1 || static_cast<std::size_t>(w) > dataset.horizon) throw std::invalid_argument("w must be in [1, k]");
  std::vector<eval::WindowPrediction> out;
  for (const auto& s : dataset.samples) {
    if (s.t % stride != 0) continue;
    const ActionSequence actions = predictor(dataset, s);
    out.push_back(eval::WindowPrediction{dataset.sequences[s.sequence].id, s.t, w,
                                         compose_window(Pose::Identity(), actions, static_cast<std::size_t>(w))});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

std::string TrainReport::to_text() const {
  std::ostringstream os;
  char buf[256];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof(buf), "epoch=%d loss=%.9g val_rpe_trans_mm=%.9g seconds=%.3f seed=%llu\n", e.epoch,
                  e.mean_loss, e.val_rpe_trans, e.seconds, static_cast<unsigned long long>(seed));
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "best_epoch=%d\n", best_epoch);
  os << buf;
  return os.str();
}

namespace {

double validation_rpe(const PolicyModel& model, const NoiseSchedule& schedule, const synth::Dataset& val,
                      std::size_t stride) {
  const auto& cfg = model.config();
  const auto preds = rollout_oracle(policy_predictor(model, schedule, cfg.inference_steps, cfg.seed), val, stride,
                                    cfg.horizon);
  eval::GroundTruth gt;
  for (const auto& seq : val.sequences) gt[seq.id] = seq.gt;
  return eval::rpe(preds, gt, cfg.horizon).summary.trans_mean;
}

}  // namespace

TrainReport train(PolicyModel& model, const synth::Dataset& train_set, const TrainOptions& options) {
  const auto& cfg = model.config();
  if (train_set.horizon != static_cast<std::size_t>(cfg.horizon)) {
    throw std::invalid_argument("dataset horizon does not match the policy horizon");
  }
  if (train_set.samples.empty()) throw std::invalid_argument("empty training set");
  if (!model.norm_stats) model.norm_stats = fit_norm_stats(train_set.state_actions());

  const auto items = make_train_items(train_set, *model.norm_stats);
  const NoiseSchedule schedule = cosine_schedule(cfg.diffusion_steps);
  nn::AdamW opt = make_optimizer(cfg);
  std::mt19937_64 rng(cfg.seed);

  TrainReport report;
  report.seed = cfg.seed;
  const bool has_val = options.validation != nullptr && !options.validation->samples.empty();
  double best = has_val ? validation_rpe(model, schedule, *options.validation, options.validation_stride)
                        : std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params;
  for (const auto& p : model.params().params()) best_params.push_back(p.value);

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TrainItem> batch;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size)); ++i) {
        batch.push_back(items[order[i]]);
      }
      double loss = 0.0;
      try {
        loss = train_step(model, opt, batch, schedule, rng);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(steps + 1));
      }
      loss_sum += loss;
      ++steps;
    }
    EpochStats st;
    st.epoch = epoch;
    st.mean_loss = loss_sum / std::max(steps, 1);
    st.val_rpe_trans = has_val ? validation_rpe(model, schedule, *options.validation, options.validation_stride)
                               : std::numeric_limits<double>::quiet_NaN();
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(st);
    if (!has_val || st.val_rpe_trans < best) {
      best = has_val ? st.val_rpe_trans : best;
      report.best_epoch = epoch;
      for (std::size_t i = 0; i < best_params.size(); ++i) best_params[i] = model.params()[static_cast<int>(i)].value;
    }
    if (options.on_epoch) options.on_epoch(st, model);
  }
  for (std::size_t i = 0; i < best_params.size(); ++i) model.params()[static_cast<int>(i)].value = best_params[i];
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'P', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::ostream& os, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(os, u);
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  put_u64(os, u);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  const std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

float get_f32(std::istream& is) {
  const std::uint32_t u = get_u32(is);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

double get_f64(std::istream& is) {
  const std::uint64_t u = get_u64(is);
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

std::string get_string(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > (1u << 24)) throw std::runtime_error("checkpoint string too long");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint truncated");
  return s;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace

void save_checkpoint(const fs::path& path, const PolicyModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  std::string cfg;
  for (const auto& [k, v] : model.config().to_kv()) cfg += k + " = " + v + "\n";
  put_string(os, cfg);
  os.put(model.norm_stats ? 1 : 0);
  if (model.norm_stats) {
    const auto& s = *model.norm_stats;
    for (const Vec6* v : {&s.state_mean, &s.state_std, &s.action_mean, &s.action_std}) {
      for (int i = 0; i < 6; ++i) put_f64(os, (*v)[i]);
    }
    put_f64(os, s.epsilon);
  }
  const auto& params = model.params().params();
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_string(os, p.name);
    put_u32(os, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : p.value) put_f32(os, static_cast<float>(v));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

PolicyModel load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error(path.string() + ": not a policy checkpoint");
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version));

  std::map<std::string, std::string> kv;
  {
    std::stringstream ss(get_string(is));
    std::string line;
    while (std::getline(ss, line)) {
      const auto eq = line.find(" = ");
      if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
  }
  PolicyConfig cfg;
  cfg.apply_kv(kv);
  PolicyModel model(cfg, 0);

  const int has_stats = is.get();
  if (has_stats == 1) {
    NormStats s;
    for (Vec6* v : {&s.state_mean, &s.state_std, &s.action_mean, &s.action_std}) {
      for (int i = 0; i < 6; ++i) (*v)[i] = get_f64(is);
    }
    s.epsilon = get_f64(is);
    model.norm_stats = s;
  } else if (has_stats != 0) {
    throw std::runtime_error(path.string() + ": corrupt header");
  }

  const std::uint32_t count = get_u32(is);
  if (count != model.params().size()) throw std::runtime_error(path.string() + ": parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(is);
    auto& p = model.params().at(name);
    const std::uint32_t ndim = get_u32(is);
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(get_u32(is)));
    if (shape != p.shape) throw std::runtime_error(path.string() + ": shape mismatch for " + name);
    for (double& v : p.value) v = static_cast<double>(get_f32(is));
  }
  return model;
}

}  // namespace posepolicy::policy
