#include "posepolicy/policy.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

using namespace posepolicy;
using namespace posepolicy::policy;
using testsupport::tiny_config;
using testsupport::tiny_dataset;

namespace {

struct Fixture {
  PolicyConfig cfg = tiny_config();
  synth::Dataset ds = tiny_dataset(8, 4, 2, 12, 5);
  PolicyModel model{cfg, 1};
  NoiseSchedule schedule = cosine_schedule(cfg.diffusion_steps);

  Fixture() { model.norm_stats = fit_norm_stats(ds.state_actions()); }

  std::vector<TrainItem> items() const { return make_train_items(ds, *model.norm_stats); }
};

ActionMatrix gaussian(int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  ActionMatrix a(k, 6);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  return a;
}

}  // namespace

TEST_CASE("cosine schedule") {
  const NoiseSchedule s = cosine_schedule(100);
  REQUIRE(s.steps() == 100);
  CHECK(std::abs(s.alpha_bar[0] - 1.0) < 1e-3);
  CHECK(s.alpha_bar[0] <= 1.0);
  for (int t = 0; t + 1 < 100; ++t) CHECK(s.alpha_bar[t] > s.alpha_bar[t + 1]);
  CHECK(s.alpha_bar[99] > 0.0);

  // closed form evaluated independently
  const double off = 0.008, pi = std::numbers::pi;
  const double num = std::pow(std::cos((50.0 / 100.0 + off) / (1.0 + off) * pi / 2.0), 2);
  const double den = std::pow(std::cos(off / (1.0 + off) * pi / 2.0), 2);
  CHECK(std::abs(s.alpha_bar[50] - num / den) < 1e-12);
  CHECK_THROWS_AS(cosine_schedule(0), std::invalid_argument);
}

TEST_CASE("ddim timesteps") {
  const auto full = ddim_timesteps(10, 10);
  CHECK(full == std::vector<int>{9, 8, 7, 6, 5, 4, 3, 2, 1, 0});
  const auto ten = ddim_timesteps(100, 10);
  REQUIRE(ten.size() == 10);
  CHECK(ten.front() == 99);
  CHECK(ten.back() == 0);
  for (std::size_t i = 0; i + 1 < ten.size(); ++i) CHECK(ten[i] > ten[i + 1]);
  CHECK(ddim_timesteps(100, 1) == std::vector<int>{99});
  CHECK_THROWS_AS(ddim_timesteps(10, 11), std::invalid_argument);
}

TEST_CASE("config validation and key-value round trip") {
  PolicyConfig c;
  c.validate();
  c.encoder_channels = {4, 8};
  c.learning_rate = 3.25e-4;
  c.seed = 99;
  PolicyConfig d;
  d.apply_kv(c.to_kv());
  CHECK(d.to_kv() == c.to_kv());

  PolicyConfig bad;
  bad.inference_steps = 200;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = PolicyConfig{};
  bad.state_noise_rot = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = PolicyConfig{};
  bad.horizon = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("encoder weights are stored once and shared by both images") {
  Fixture f;
  std::set<std::string> names;
  int encoder_tensors = 0;
  for (const auto& p : f.model.params().params()) {
    CHECK(names.insert(p.name).second);
    if (p.name.rfind("enc.", 0) == 0) ++encoder_tensors;
  }
  // two conv layers (w, b) and one projection (w, b)
  CHECK(encoder_tensors == 6);

  // Swapping the image slots with equal images gives the same features; with a
  // single parameter set, a swap only permutes the pair halves.
  const auto& s = f.ds.samples[0];
  const Vec6 st = normalize(s.state, f.model.norm_stats->state_mean, f.model.norm_stats->state_std);
  const auto a = encode(f.model, f.ds.source(s), f.ds.source(s), st);
  const auto b = encode(f.model, f.ds.source(s), f.ds.source(s), st);
  CHECK(a == b);

  nn::Tape tape(&f.model.params());
  const synth::Observation* src[] = {&f.ds.source(s), &f.ds.target(s)};
  const synth::Observation* dst[] = {&f.ds.target(s), &f.ds.source(s)};
  const Vec6 states[] = {st, st};
  f.model.encode(tape, src, dst, states);
  tape.param("enc.conv0.w");
  // every encoder tensor appears in the tape exactly once however many images it processed
  CHECK(tape.param("enc.conv0.w").id == tape.param("enc.conv0.w").id);
}

TEST_CASE("encode: zero gate passes visual features through unchanged") {
  Fixture f;
  const auto& s = f.ds.samples[1];
  Vec6 st1 = Vec6::Zero(), st2 = Vec6::Constant(3.0);
  EncodeOptions zero;
  zero.zero_gate = true;
  const auto a = encode(f.model, f.ds.source(s), f.ds.target(s), st1, zero);
  const auto b = encode(f.model, f.ds.source(s), f.ds.target(s), st2, zero);
  CHECK(a == b);

  // Independent recomputation of the visual branch from the named parameters.
  nn::Tape t(&f.model.params());
  const int S = f.cfg.image_size;
  std::vector<double> x;
  for (const auto* obs : {&f.ds.source(s), &f.ds.target(s)}) {
    for (std::size_t i = 0; i < obs->image.size(); ++i) x.push_back(obs->mask[i] ? obs->image[i] : 0.0);
    for (std::size_t i = 0; i < obs->mask.size(); ++i) x.push_back(obs->mask[i] ? 1.0 : 0.0);
  }
  nn::Var h = t.constant({2, 2, S, S}, x);
  for (int i = 0; i < 2; ++i) {
    const std::string n = "enc.conv" + std::to_string(i);
    h = nn::silu(t, nn::conv2d(t, h, t.param(n + ".w"), t.param(n + ".b"), 2, 1));
  }
  h = nn::reshape(t, h, {2, static_cast<int>(t.value(h).size() / 2)});
  h = nn::silu(t, nn::linear(t, h, t.param("enc.fc.w"), t.param("enc.fc.b")));
  const nn::Var v = nn::silu(t, nn::linear(t, nn::pair_rows(t, h), t.param("pair.w"), t.param("pair.b")));
  CHECK(t.value(v) == a);
}

TEST_CASE("encode: output responds to the state through the gate") {
  Fixture f;
  const auto& s = f.ds.samples[2];
  Vec6 st = Vec6::Zero();
  const auto base = encode(f.model, f.ds.source(s), f.ds.target(s), st);
  CHECK(base == encode(f.model, f.ds.source(s), f.ds.target(s), st));
  double sens = 0.0;
  const double h = 1e-5;
  for (int d = 0; d < 6; ++d) {
    Vec6 up = st, dn = st;
    up[d] += h;
    dn[d] -= h;
    const auto a = encode(f.model, f.ds.source(s), f.ds.target(s), up);
    const auto b = encode(f.model, f.ds.source(s), f.ds.target(s), dn);
    for (std::size_t i = 0; i < a.size(); ++i) sens += std::abs(a[i] - b[i]) / (2 * h);
  }
  CHECK(sens > 0.0);
}

TEST_CASE("image size mismatch is rejected") {
  Fixture f;
  const auto big = synth::make_mask_only(synth::Camera::ForSize(10));
  CHECK_THROWS_AS(encode(f.model, big, big, Vec6::Zero()), std::invalid_argument);
}

TEST_CASE("denoise: shape and determinism") {
  Fixture f;
  const std::vector<double> cond(4, 0.3);
  const ActionMatrix x = gaussian(4, 3);
  const ActionMatrix a = denoise(f.model, x, 7, cond);
  CHECK(a.rows() == 4);
  CHECK(a.cols() == 6);
  CHECK(a == denoise(f.model, x, 7, cond));
  CHECK_THROWS_AS(denoise(f.model, x, 10, cond), std::invalid_argument);
  CHECK_THROWS_AS(denoise(f.model, gaussian(5, 1), 1, cond), std::invalid_argument);

  // odd horizons go through the crop path of the upsampler
  PolicyConfig c = tiny_config();
  c.horizon = 7;
  PolicyModel odd(c, 2);
  CHECK(denoise(odd, gaussian(7, 4), 3, cond).rows() == 7);
}

TEST_CASE("diffusion loss gradients match central differences") {
  Fixture f;
  const auto all = f.items();
  const std::vector<TrainItem> batch(all.begin(), all.begin() + 3);
  std::mt19937_64 rng(4);
  const NoiseDraws draws = draw_noise(f.cfg, batch.size(), rng);
  for (const auto& g : testsupport::model_gradient_check(f.model, batch, f.schedule, draws)) {
    INFO(g.group);
    CHECK(g.rel < 1e-4);
  }
}

TEST_CASE("noise mixing") {
  const ActionMatrix x0 = gaussian(8, 1);
  const ActionMatrix eps = gaussian(8, 2);
  CHECK(mix_noise(x0, eps, 1.0) == x0);

  // E‖x_t‖² = ᾱ‖x₀‖² + (1−ᾱ)·6k
  const double ab = 0.3;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  const int n = 10000;
  double mean = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    ActionMatrix e(8, 6);
    for (Eigen::Index j = 0; j < e.size(); ++j) e.data()[j] = g(rng);
    const double v = mix_noise(x0, e, ab).squaredNorm();
    mean += v;
    sq += v * v;
  }
  mean /= n;
  const double sd = std::sqrt(sq / n - mean * mean);
  const double expected = ab * x0.squaredNorm() + (1 - ab) * 48;
  CHECK(std::abs(mean - expected) < 4.0 * sd / std::sqrt(n));
}

TEST_CASE("zero-noise schedule reduces the loss to clean reconstruction") {
  Fixture f;
  NoiseSchedule clean = f.schedule;
  std::fill(clean.alpha_bar.begin(), clean.alpha_bar.end(), 1.0);
  const auto all = f.items();
  const std::vector<TrainItem> batch(all.begin(), all.begin() + 2);
  std::mt19937_64 rng(5);
  NoiseDraws draws = draw_noise(f.cfg, 2, rng);
  for (auto& s : draws.state_noise) s.setZero();
  const double loss = diffusion_loss(f.model, batch, clean, draws, false);

  double ref = 0.0;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Vec6 st = normalize(log(batch[n].state), f.model.norm_stats->state_mean, f.model.norm_stats->state_std);
    const auto cond = encode(f.model, *batch[n].source, *batch[n].target, st);
    ref += (denoise(f.model, batch[n].x0, draws.timesteps[n], cond) - batch[n].x0).squaredNorm();
  }
  ref /= static_cast<double>(batch.size() * 4 * 6);
  CHECK(std::abs(loss - ref) < 1e-12);
}

TEST_CASE("initial loss is close to the variance of normalized actions") {
  Fixture f;
  const auto items = f.items();
  std::mt19937_64 rng(6);
  const NoiseDraws draws = draw_noise(f.cfg, items.size(), rng);
  const double loss = diffusion_loss(f.model, items, f.schedule, draws, false);
  double var = 0.0;
  for (const auto& it : items) var += it.x0.squaredNorm();
  var /= static_cast<double>(items.size() * 4 * 6);
  CHECK(std::abs(var - 1.0) < 1e-9);  // pooled normalization gives unit second moment
  CHECK(loss > 0.5 * var);
  CHECK(loss < 2.0 * var);
}

TEST_CASE("train_step is deterministic and reduces the loss on a fixed batch") {
  Fixture f;
  const auto all = f.items();
  const std::vector<TrainItem> batch(all.begin(), all.begin() + 8);
  auto run = [&](int steps) {
    PolicyConfig c = f.cfg;
    c.learning_rate = 1e-2;
    PolicyModel m(c, 1);
    m.norm_stats = f.model.norm_stats;
    nn::AdamW opt = make_optimizer(c);
    std::mt19937_64 rng(7);
    std::vector<double> losses;
    for (int i = 0; i < steps; ++i) losses.push_back(train_step(m, opt, batch, f.schedule, rng));
    return losses;
  };
  const auto a = run(60), b = run(60);
  CHECK(a == b);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += a[i];
    last += a[50 + i];
  }
  CHECK(last < first);
}

TEST_CASE("DDIM sampling") {
  Fixture f;
  const auto& s = f.ds.samples[0];
  const std::vector<double> cond = encode(f.model, f.ds.source(s), f.ds.target(s), Vec6::Zero());
  const ActionMatrix noise = gaussian(4, 9);

  SUBCASE("fixed noise is bit-stable") {
    CHECK(ddim_sample(f.model, cond, f.schedule, 5, noise) == ddim_sample(f.model, cond, f.schedule, 5, noise));
  }
  SUBCASE("all timesteps agree with a direct deterministic-DDIM loop") {
    ActionMatrix x = noise;
    ActionMatrix x0;
    const auto& ab = f.schedule.alpha_bar;
    for (int t = f.cfg.diffusion_steps - 1; t >= 0; --t) {
      x0 = denoise(f.model, x, t, cond);
      if (t == 0) break;
      const ActionMatrix eps = (x - std::sqrt(ab[t]) * x0) / std::sqrt(1 - ab[t]);
      x = std::sqrt(ab[t - 1]) * x0 + std::sqrt(1 - ab[t - 1]) * eps;
    }
    const ActionMatrix full = ddim_sample(f.model, cond, f.schedule, f.cfg.diffusion_steps, noise);
    CHECK((full - x0).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("sample_actions denormalizes the sampled x0") {
    const Pose state = s.start;
    const auto acts = sample_actions(f.model, f.ds.source(s), f.ds.target(s), state, f.schedule, 5, noise);
    REQUIRE(acts.horizon() == 4);
    const auto& ns = *f.model.norm_stats;
    const Vec6 st = normalize(log(state), ns.state_mean, ns.state_std);
    const ActionMatrix x0 =
        ddim_sample(f.model, encode(f.model, f.ds.source(s), f.ds.target(s), st), f.schedule, 5, noise);
    for (int i = 0; i < 4; ++i) {
      CHECK((normalize(acts.deltas[i], ns.action_mean, ns.action_std) - x0.row(i).transpose()).norm() < 1e-9);
    }
  }
  SUBCASE("sampling needs normalization statistics") {
    PolicyModel bare(f.cfg, 1);
    CHECK_THROWS_AS(sample_actions(bare, f.ds.source(s), f.ds.target(s), s.start, f.schedule, 5, noise),
                    std::logic_error);
  }
}

TEST_CASE("rollout_oracle") {
  Fixture f;
  const auto preds = rollout_oracle(ground_truth_predictor(), f.ds, 1, 4);
  CHECK(preds.size() == f.ds.samples.size());
  eval::GroundTruth gt;
  for (const auto& s : f.ds.sequences) gt[s.id] = s.gt;
  const auto res = eval::rpe(preds, gt, 4);
  CHECK(res.summary.trans_mean < 1e-9);
  CHECK(res.summary.rot_mean < 1e-6);

  // two sequences of 12 frames, k = 4: t in 0..7, stride 3 keeps 0, 3, 6
  CHECK(rollout_oracle(ground_truth_predictor(), f.ds, 3, 4).size() == 2 * 3);
  CHECK_THROWS_AS(rollout_oracle(ground_truth_predictor(), f.ds, 1, 5), std::invalid_argument);

  const auto a = rollout_oracle(policy_predictor(f.model, f.schedule, 5, 3), f.ds, 2, 4);
  const auto b = rollout_oracle(policy_predictor(f.model, f.schedule, 5, 3), f.ds, 2, 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(pose_distance_inf(a[i].relative, b[i].relative) == 0.0);
}

TEST_CASE("train: zero epochs, determinism, best-epoch restore") {
  PolicyConfig c = tiny_config();
  c.epochs = 0;
  const auto ds = tiny_dataset(8, 4, 2, 12, 5);
  PolicyModel m(c, 1);
  const auto before = m.params().params()[0].value;
  const TrainReport r0 = train(m, ds);
  CHECK(r0.epochs.empty());
  CHECK(r0.best_epoch == 0);
  CHECK(m.norm_stats.has_value());
  CHECK(m.params().params()[0].value == before);

  c.epochs = 2;
  auto run = [&] {
    PolicyModel mm(c, 1);
    TrainOptions o;
    o.validation = &ds;
    o.validation_stride = 2;
    return std::make_pair(train(mm, ds, o), mm.params().params()[0].value);
  };
  const auto [ra, pa] = run();
  const auto [rb, pb] = run();
  REQUIRE(ra.epochs.size() == 2);
  CHECK(ra.epochs[0].mean_loss == rb.epochs[0].mean_loss);
  CHECK(pa == pb);
  CHECK(ra.to_text().find("epoch=1 loss=") == 0);
  CHECK(ra.to_text().find("val_rpe_trans_mm=") != std::string::npos);

  const auto other = tiny_dataset(8, 3, 1, 10, 5);
  PolicyModel mm(c, 1);
  CHECK_THROWS_AS(train(mm, other), std::invalid_argument);
}

TEST_CASE("checkpoint round trip") {
  Fixture f;
  const auto path = std::filesystem::temp_directory_path() / "posepolicy_ckpt_test.bin";
  save_checkpoint(path, f.model);
  const PolicyModel back = load_checkpoint(path);
  CHECK(back.config().to_kv() == f.cfg.to_kv());
  REQUIRE(back.norm_stats.has_value());
  CHECK(back.norm_stats->action_std == f.model.norm_stats->action_std);
  const auto& pa = f.model.params().params();
  const auto& pb = back.params().params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    for (std::size_t j = 0; j < pa[i].value.size(); ++j) {
      CHECK(pb[i].value[j] == static_cast<double>(static_cast<float>(pa[i].value[j])));
    }
  }
  // saving the loaded model reproduces the file byte for byte
  const auto path2 = std::filesystem::temp_directory_path() / "posepolicy_ckpt_test2.bin";
  save_checkpoint(path2, back);
  CHECK(std::filesystem::file_size(path) == std::filesystem::file_size(path2));
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));

  {
    std::ofstream junk(path, std::ios::binary);
    junk << "nope";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}
