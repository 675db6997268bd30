#pragma once

// Image-condition difficulty scores and quartile-stratified RPE.

#include "posepolicy/eval.hpp"
#include "posepolicy/synth_world.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace posepolicy::robust {

struct WindowScore {
  int sequence = 0;
  std::size_t t = 0;
  int w = 0;
  double s_texture = 0.0;
  double s_dillum = 0.0;
};

/// Mean 3x3 Sobel gradient magnitude over mask pixels whose whole stencil
/// lies inside the mask.
double texture_score(const synth::Observation& obs);

/// |mean(target) − mean(source)| over the (shared) mask.
double illum_change_score(const synth::Observation& source, const synth::Observation& target);

/// Linear interpolation between closest ranks: position p·(N−1) in sorted order.
double percentile(std::vector<double> values, double p);

struct BinStats {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;
};

struct ArtifactStrata {
  std::string name;
  double p25 = 0.0;
  double p75 = 0.0;
  BinStats low;   // score ≤ P25
  BinStats high;  // score ≥ P75
  double gap = 0.0;  // |high.mean − low.mean|
  bool degenerate = false;  // P25 == P75
  std::vector<std::size_t> low_members;   // indices into the matched records
  std::vector<std::size_t> high_members;
};

struct StratifiedReport {
  ArtifactStrata texture;
  ArtifactStrata illumination;
  std::size_t windows = 0;
};

/// Bins for one score column: indices with score ≤ P25 and ≥ P75.
void quartile_bins(std::span<const double> scores, std::vector<std::size_t>& low, std::vector<std::size_t>& high,
                   double* p25 = nullptr, double* p75 = nullptr);

/// Matches scores to records on (sequence, t, w). Throws with the first ten
/// unmatched keys if any record lacks a score.
StratifiedReport stratify(std::span<const WindowScore> scores, std::span<const eval::RPERecord> records);

std::string format_report(const StratifiedReport& report, const std::string& method, int w);

// `sequence,t,w,s_texture,s_dillum`
void write_scores_csv(const std::filesystem::path& path, std::span<const WindowScore> scores);
std::vector<WindowScore> read_scores_csv(const std::filesystem::path& path);

/// Scores (I_t, I_{t+w}) for every window start used at horizon k.
std::vector<WindowScore> score_windows(const std::vector<synth::Sequence>& sequences, int w, std::size_t k,
                                       std::size_t stride);

}  // namespace posepolicy::robust
