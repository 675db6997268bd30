#include "posepolicy/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace posepolicy::robust {

namespace fs = std::filesystem;

double texture_score(const synth::Observation& obs) {
  const int s = obs.size;
  double sum = 0.0;
  std::size_t n = 0;
  for (int r = 1; r + 1 < s; ++r) {
    for (int c = 1; c + 1 < s; ++c) {
      bool inside = true;
      for (int dr = -1; dr <= 1 && inside; ++dr) {
        for (int dc = -1; dc <= 1 && inside; ++dc) inside = obs.valid(r + dr, c + dc);
      }
      if (!inside) continue;
      const double gx = (obs.at(r - 1, c + 1) + 2.0 * obs.at(r, c + 1) + obs.at(r + 1, c + 1)) -
                        (obs.at(r - 1, c - 1) + 2.0 * obs.at(r, c - 1) + obs.at(r + 1, c - 1));
      const double gy = (obs.at(r + 1, c - 1) + 2.0 * obs.at(r + 1, c) + obs.at(r + 1, c + 1)) -
                        (obs.at(r - 1, c - 1) + 2.0 * obs.at(r - 1, c) + obs.at(r - 1, c + 1));
      sum += std::sqrt(gx * gx + gy * gy);
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("empty mask");
  return sum / static_cast<double>(n);
}

double illum_change_score(const synth::Observation& source, const synth::Observation& target) {
  if (source.size != target.size || source.mask != target.mask) throw std::invalid_argument("mask mismatch");
  double a = 0.0, b = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < source.mask.size(); ++i) {
    if (!source.mask[i]) continue;
    a += source.image[i];
    b += target.image[i];
    ++n;
  }
  if (n == 0) throw std::invalid_argument("empty mask");
  return std::abs(b / static_cast<double>(n) - a / static_cast<double>(n));
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

void quartile_bins(std::span<const double> scores, std::vector<std::size_t>& low, std::vector<std::size_t>& high,
                   double* p25, double* p75) {
  const std::vector<double> v(scores.begin(), scores.end());
  const double lo = percentile(v, 0.25);
  const double hi = percentile(v, 0.75);
  low.clear();
  high.clear();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] <= lo) low.push_back(i);
    if (scores[i] >= hi) high.push_back(i);
  }
  if (p25) *p25 = lo;
  if (p75) *p75 = hi;
}

namespace {

BinStats bin_stats(const std::vector<std::size_t>& members, const std::vector<double>& errors) {
  BinStats b;
  b.count = members.size();
  if (members.empty()) return b;
  for (std::size_t i : members) b.mean += errors[i];
  b.mean /= static_cast<double>(members.size());
  double var = 0.0;
  for (std::size_t i : members) var += (errors[i] - b.mean) * (errors[i] - b.mean);
  b.std = std::sqrt(var / static_cast<double>(members.size()));
  return b;
}

ArtifactStrata strata(const std::string& name, const std::vector<double>& scores, const std::vector<double>& errors) {
  ArtifactStrata a;
  a.name = name;
  quartile_bins(scores, a.low_members, a.high_members, &a.p25, &a.p75);
  a.low = bin_stats(a.low_members, errors);
  a.high = bin_stats(a.high_members, errors);
  a.gap = std::abs(a.high.mean - a.low.mean);
  a.degenerate = a.p25 == a.p75;
  return a;
}

using Key = std::tuple<int, std::size_t, int>;

}  // namespace

StratifiedReport stratify(std::span<const WindowScore> scores, std::span<const eval::RPERecord> records) {
  if (records.size() < 4) throw std::invalid_argument("insufficient windows");
  std::map<Key, const WindowScore*> by_key;
  for (const auto& s : scores) by_key[Key{s.sequence, s.t, s.w}] = &s;

  std::vector<double> tex, ill, err;
  std::vector<std::string> missing;
  for (const auto& r : records) {
    auto it = by_key.find(Key{r.sequence, r.t, r.w});
    if (it == by_key.end()) {
      if (missing.size() < 10) {
        missing.push_back("(" + std::to_string(r.sequence) + "," + std::to_string(r.t) + "," + std::to_string(r.w) + ")");
      }
      continue;
    }
    tex.push_back(it->second->s_texture);
    ill.push_back(it->second->s_dillum);
    err.push_back(r.trans_err_mm);
  }
  if (!missing.empty()) {
    std::string msg = "records without scores:";
    for (const auto& m : missing) msg += " " + m;
    throw std::invalid_argument(msg);
  }
  StratifiedReport rep;
  rep.windows = err.size();
  rep.texture = strata("texture", tex, err);
  rep.illumination = strata("dillum", ill, err);
  return rep;
}

std::string format_report(const StratifiedReport& report, const std::string& method, int w) {
  std::ostringstream os;
  char buf[320];
  std::snprintf(buf, sizeof(buf), "Robustness at w=%d (%zu windows), translation RPE mm (mean +- std)\n", w,
                report.windows);
  os << buf;
  std::snprintf(buf, sizeof(buf), "%-20s | %-16s %-16s %7s | %-16s %-16s %7s\n", "method", "texture low",
                "texture high", "|d|", "dillum low", "dillum high", "|d|");
  os << buf;
  const auto& t = report.texture;
  const auto& i = report.illumination;
  std::snprintf(buf, sizeof(buf), "%-20s | %6.3f +- %-6.3f %6.3f +- %-6.3f %7.3f | %6.3f +- %-6.3f %6.3f +- %-6.3f %7.3f\n",
                method.c_str(), t.low.mean, t.low.std, t.high.mean, t.high.std, t.gap, i.low.mean, i.low.std,
                i.high.mean, i.high.std, i.gap);
  os << buf;
  std::snprintf(buf, sizeof(buf), "bins: texture low=%zu high=%zu (P25=%.6g P75=%.6g)%s; dillum low=%zu high=%zu (P25=%.6g P75=%.6g)%s\n",
                t.low.count, t.high.count, t.p25, t.p75, t.degenerate ? " DEGENERATE" : "", i.low.count,
                i.high.count, i.p25, i.p75, i.degenerate ? " DEGENERATE" : "");
  os << buf;
  return os.str();
}

void write_scores_csv(const fs::path& path, std::span<const WindowScore> scores) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "sequence,t,w,s_texture,s_dillum\n";
  for (const auto& s : scores) out << s.sequence << ',' << s.t << ',' << s.w << ',' << s.s_texture << ',' << s.s_dillum << '\n';
}

std::vector<WindowScore> read_scores_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "sequence,t,w,s_texture,s_dillum") throw std::runtime_error(path.string() + ": unexpected header");
  std::vector<WindowScore> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[5];
    for (auto& field : f) std::getline(ss, field, ',');
    try {
      out.push_back(WindowScore{std::stoi(f[0]), static_cast<std::size_t>(std::stoull(f[1])), std::stoi(f[2]),
                                std::stod(f[3]), std::stod(f[4])});
    } catch (const std::logic_error&) {
      throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    }
  }
  return out;
}

std::vector<WindowScore> score_windows(const std::vector<synth::Sequence>& sequences, int w, std::size_t k,
                                       std::size_t stride) {
  std::vector<WindowScore> out;
  for (const auto& seq : sequences) {
    for (std::size_t t : eval::window_starts(seq.frames.size(), k, stride)) {
      const auto& src = seq.frames[t];
      const auto& dst = seq.frames[t + static_cast<std::size_t>(w)];
      out.push_back(WindowScore{seq.id, t, w, texture_score(src), illum_change_score(src, dst)});
    }
  }
  return out;
}

}  // namespace posepolicy::robust
