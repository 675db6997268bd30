#include "posepolicy/robustness.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

using namespace posepolicy;
using namespace posepolicy::robust;

namespace {

synth::Observation full_mask(int size, double value) {
  synth::Observation o;
  o.size = size;
  o.image.assign(static_cast<std::size_t>(size) * size, value);
  o.mask.assign(static_cast<std::size_t>(size) * size, 1);
  return o;
}

// Brute-force Sobel magnitude with explicit kernels.
double sobel_oracle(const synth::Observation& o) {
  const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  double sum = 0.0;
  int n = 0;
  for (int r = 0; r < o.size; ++r) {
    for (int c = 0; c < o.size; ++c) {
      bool ok = true;
      double gx = 0.0, gy = 0.0;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          const int rr = r + i - 1, cc = c + j - 1;
          if (rr < 0 || cc < 0 || rr >= o.size || cc >= o.size || !o.valid(rr, cc)) {
            ok = false;
            continue;
          }
          gx += kx[i][j] * o.at(rr, cc);
          gy += ky[i][j] * o.at(rr, cc);
        }
      }
      if (!ok) continue;
      sum += std::hypot(gx, gy);
      ++n;
    }
  }
  return sum / n;
}

std::vector<eval::RPERecord> records_for(const std::vector<double>& errors) {
  std::vector<eval::RPERecord> r;
  for (std::size_t i = 0; i < errors.size(); ++i) r.push_back({0, i, 8, errors[i], 0.0});
  return r;
}

}  // namespace

TEST_CASE("texture score") {
  CHECK(texture_score(full_mask(10, 0.4)) == 0.0);

  synth::Observation step = full_mask(10, 0.0);
  for (int r = 0; r < 10; ++r) {
    for (int c = 5; c < 10; ++c) step.image[r * 10 + c] = 1.0;
  }
  // interior pixels next to the edge see |gx| = 4, all others 0
  CHECK(std::abs(texture_score(step) - sobel_oracle(step)) < 1e-12);
  CHECK(std::abs(texture_score(step) - 4.0 * 2.0 * 8.0 / 64.0) < 1e-12);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto cam = synth::Camera::ForSize(24);
  synth::Observation img = synth::make_mask_only(cam);
  for (std::size_t i = 0; i < img.image.size(); ++i) img.image[i] = img.mask[i] ? u(rng) : 0.0;
  CHECK(std::abs(texture_score(img) - sobel_oracle(img)) < 1e-12);

  synth::Observation scaled = img;
  for (auto& v : scaled.image) v *= 0.5;
  CHECK(std::abs(texture_score(scaled) - 0.5 * texture_score(img)) < 1e-12);

  synth::Observation empty = full_mask(10, 0.0);
  std::fill(empty.mask.begin(), empty.mask.end(), 0);
  CHECK_THROWS_AS(texture_score(empty), std::invalid_argument);
}

TEST_CASE("illumination change score") {
  const auto a = full_mask(8, 0.2);
  const auto b = full_mask(8, 0.3);
  CHECK(std::abs(illum_change_score(a, b) - 0.1) < 1e-12);
  CHECK(std::abs(illum_change_score(b, a) - 0.1) < 1e-12);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto cam = synth::Camera::ForSize(20);
  synth::Observation x = synth::make_mask_only(cam), y = synth::make_mask_only(cam);
  for (std::size_t i = 0; i < x.image.size(); ++i) {
    x.image[i] = x.mask[i] ? u(rng) : 0.0;
    y.image[i] = y.mask[i] ? u(rng) : 0.0;
  }
  double sa = 0.0, sb = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < x.image.size(); ++i) {
    if (!x.mask[i]) continue;
    sa += x.image[i];
    sb += y.image[i];
    ++n;
  }
  CHECK(std::abs(illum_change_score(x, y) - std::abs(sb / n - sa / n)) < 1e-12);

  const auto other = full_mask(20, 0.0);
  CHECK_THROWS_AS(illum_change_score(x, other), std::invalid_argument);
}

TEST_CASE("percentile and quartile bins") {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  CHECK(percentile(v, 0.25) == doctest::Approx(25.75));
  CHECK(percentile(v, 0.75) == doctest::Approx(75.25));
  std::vector<std::size_t> lo, hi;
  double p25 = 0, p75 = 0;
  quartile_bins(v, lo, hi, &p25, &p75);
  CHECK(lo.size() == 25);
  CHECK(hi.size() == 25);
  CHECK(lo.back() == 24);
  CHECK(hi.front() == 75);

  for (std::size_t n : {4u, 5u, 7u, 13u, 50u, 101u}) {
    std::vector<double> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<double>((i * 37) % n));
    quartile_bins(s, lo, hi);
    CHECK(lo.size() >= n / 4);
    CHECK(lo.size() <= (n + 3) / 4);
    CHECK(hi.size() >= n / 4);
    CHECK(hi.size() <= (n + 3) / 4);
  }
}

TEST_CASE("stratify") {
  std::vector<double> errors;
  std::vector<WindowScore> scores;
  for (std::size_t i = 0; i < 40; ++i) {
    errors.push_back(static_cast<double>(i));
    scores.push_back({0, i, 8, static_cast<double>(i), 1.0});
  }
  const auto recs = records_for(errors);
  const auto rep = stratify(scores, recs);
  CHECK(rep.windows == 40);
  CHECK(rep.texture.low.count == 10);
  CHECK(rep.texture.high.count == 10);
  CHECK(rep.texture.low.mean == doctest::Approx(4.5));
  CHECK(rep.texture.high.mean == doctest::Approx(34.5));
  CHECK(rep.texture.gap == doctest::Approx(30.0));
  CHECK_FALSE(rep.texture.degenerate);
  CHECK(rep.illumination.degenerate);
  CHECK(rep.illumination.low.count == 40);

  const auto text = format_report(rep, "policy", 8);
  CHECK(text.find("DEGENERATE") != std::string::npos);
  CHECK(text.find("policy") != std::string::npos);

  CHECK_THROWS_WITH(stratify(scores, records_for({1, 2, 3})), "insufficient windows");
  std::vector<eval::RPERecord> stray = recs;
  stray[3].sequence = 9;
  CHECK_THROWS_WITH(stratify(scores, stray), "records without scores: (9,3,8)");
}

TEST_CASE("bin membership is invariant to monotone relabelling of scores") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int set = 0; set < 100; ++set) {
    const std::size_t n = 20 + set;
    std::vector<double> s(n);
    for (auto& x : s) x = u(rng);
    std::vector<double> m(n);
    std::transform(s.begin(), s.end(), m.begin(), [](double x) { return std::exp(3.0 * x) + 2.0; });
    std::vector<std::size_t> lo1, hi1, lo2, hi2;
    quartile_bins(s, lo1, hi1);
    quartile_bins(m, lo2, hi2);
    // interpolated quantiles fall strictly between order statistics, so the
    // membership only depends on rank
    CHECK(lo1 == lo2);
    CHECK(hi1 == hi2);
  }
}

TEST_CASE("scores csv round trip and window scoring") {
  const std::vector<WindowScore> s = {{0, 0, 8, 0.125, 0.0625}, {2, 5, 8, 1.0 / 3.0, 0.1}};
  const auto path = std::filesystem::temp_directory_path() / "posepolicy_scores_test.csv";
  write_scores_csv(path, s);
  const auto back = read_scores_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[1].sequence == 2);
  CHECK(back[1].t == 5);
  CHECK(back[1].s_texture == s[1].s_texture);
  CHECK(back[1].s_dillum == s[1].s_dillum);
  std::filesystem::remove(path);

  synth::SceneParams sp;
  sp.z_max = 150.0;
  const auto scene = synth::make_scene(sp);
  const auto cam = synth::Camera::ForSize(24);
  synth::MotionProfile m;
  m.forward_speed = 0.5;
  const auto world = synth::generate_trajectory(1, 20, m, Pose::FromTranslation(Vec3(0, 0, 20)), 3.0);
  const std::vector<synth::Sequence> seqs = {synth::render_sequence(scene, cam, 4, world)};
  const auto ws = score_windows(seqs, 8, 8, 1);
  REQUIRE(ws.size() == 12);
  for (const auto& x : ws) {
    CHECK(x.sequence == 4);
    CHECK(x.s_texture == texture_score(seqs[0].frames[x.t]));
    CHECK(x.s_dillum == illum_change_score(seqs[0].frames[x.t], seqs[0].frames[x.t + 8]));
  }
}
