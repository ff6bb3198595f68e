#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/fisher_f.hpp>

#include "takeover/core.hpp"
#include "takeover/error.hpp"

namespace takeover {

struct GazeSample {
  std::int64_t t = 0;
  double x = 0.0;
  double y = 0.0;
  double pupil = 0.0;
  bool valid = true;
};

struct Segment {
  std::int64_t start = 0;
  std::int64_t end = 0;  // closed interval
  std::string label;

  bool overlaps(const Segment& o) const {
    return start <= o.end && o.start <= end;
  }
};

using SegmentList = std::vector<Segment>;
using Flags = std::vector<char>;

inline constexpr double kDefaultSampleHz = 60.0;
inline constexpr double kFixationDistThr = 10.0;   // px, strict <
inline constexpr double kFixationMinDur = 0.1;     // s
inline constexpr int kFixRatioWindow = 20;         // W_f
inline constexpr int kEntropyWindow = 120;         // W_e
inline constexpr double kPupilZThr = 1.5;
inline constexpr int kHanningLength = 20;
inline constexpr double kSegmentAmplitude = 0.5;

// ---------------------------------------------------------------------------
// AOI grid and gaze entropies
// ---------------------------------------------------------------------------

struct ScreenBounds {
  double width = 1920.0;
  double height = 1080.0;
};

inline constexpr int kAoiCells = 9;

/// Maps valid samples to 3x3 grid cells, row-major from the top-left.
/// Right-open bins; out-of-bounds coordinates clamp to edge cells.
inline std::vector<int> aoi_sequence(const std::vector<GazeSample>& samples,
                                     const ScreenBounds& screen) {
  if (screen.width <= 0 || screen.height <= 0) {
    throw ConfigError("screen bounds must be positive");
  }
  std::vector<int> seq;
  seq.reserve(samples.size());
  for (const GazeSample& s : samples) {
    if (!s.valid) continue;
    int col = static_cast<int>(std::floor(s.x / (screen.width / 3.0)));
    int row = static_cast<int>(std::floor(s.y / (screen.height / 3.0)));
    col = std::clamp(col, 0, 2);
    row = std::clamp(row, 0, 2);
    seq.push_back(row * 3 + col);
  }
  return seq;
}

/// Shannon entropy of AOI occupancy, normalized by log2(9).
inline double spatial_entropy(const std::vector<int>& aoi_seq) {
  if (aoi_seq.empty()) throw ContractError("spatial_entropy: empty sequence");
  std::array<double, kAoiCells> counts = {};
  for (int c : aoi_seq) {
    if (c < 0 || c >= kAoiCells) throw DomainError("AOI index out of range");
    counts[c] += 1.0;
  }
  const double n = static_cast<double>(aoi_seq.size());
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) {
      const double p = c / n;
      h -= p * std::log2(p);
    }
  }
  return h / std::log2(static_cast<double>(kAoiCells));
}

/// Conditional entropy of first-order AOI transitions, normalized by log2(9).
inline double transition_entropy(const std::vector<int>& aoi_seq) {
  if (aoi_seq.size() < 2) {
    throw ContractError("transition_entropy: need at least 2 samples");
  }
  std::array<std::array<double, kAoiCells>, kAoiCells> trans = {};
  std::array<double, kAoiCells> source = {};
  for (std::size_t i = 0; i + 1 < aoi_seq.size(); ++i) {
    const int a = aoi_seq[i], b = aoi_seq[i + 1];
    if (a < 0 || a >= kAoiCells || b < 0 || b >= kAoiCells) {
      throw DomainError("AOI index out of range");
    }
    trans[a][b] += 1.0;
    source[a] += 1.0;
  }
  const double n = static_cast<double>(aoi_seq.size() - 1);
  double h = 0.0;
  for (int i = 0; i < kAoiCells; ++i) {
    if (source[i] == 0.0) continue;
    const double pi = source[i] / n;
    for (int j = 0; j < kAoiCells; ++j) {
      if (trans[i][j] > 0.0) {
        const double pji = trans[i][j] / source[i];
        h -= pi * pji * std::log2(pji);
      }
    }
  }
  return h / std::log2(static_cast<double>(kAoiCells));
}

// ---------------------------------------------------------------------------
// Percentiles and summary statistics
// ---------------------------------------------------------------------------

/// Linear-interpolation (type-7) percentile; p in [0, 100].
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ContractError("percentile: empty input");
  if (p < 0.0 || p > 100.0) throw DomainError("percentile out of [0, 100]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p / 100.0;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - lo) * (values[lo + 1] - values[lo]);
}

inline std::pair<double, double> mean_stddev(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("mean_stddev: empty input");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return {mean, std::sqrt(var)};
}

// ---------------------------------------------------------------------------
// Anomaly flag extraction
// ---------------------------------------------------------------------------

inline std::vector<double> gaze_displacements(
    const std::vector<GazeSample>& samples) {
  std::vector<double> d(samples.size(), 0.0);
  for (std::size_t i = 1; i < samples.size(); ++i) {
    d[i] = std::hypot(samples[i].x - samples[i - 1].x,
                      samples[i].y - samples[i - 1].y);
  }
  return d;
}

/// Fixation anomalies: frames in fixation runs shorter than thr_fix*f_s,
/// plus frames whose windowed fixation ratio drops below mean - stddev of
/// the within-session ratio distribution.
inline Flags fixation_anomalies(const std::vector<GazeSample>& samples,
                                double f_s = kDefaultSampleHz,
                                double d_thr = kFixationDistThr,
                                double thr_fix = kFixationMinDur,
                                int w_f = kFixRatioWindow,
                                bool* ratio_skipped = nullptr) {
  const std::size_t n = samples.size();
  Flags flags(n, 0);
  if (n == 0) return flags;
  const std::vector<double> d = gaze_displacements(samples);

  Flags is_fix(n, 0);
  for (std::size_t i = 1; i < n; ++i) is_fix[i] = d[i] < d_thr ? 1 : 0;
  is_fix[0] = n > 1 ? is_fix[1] : 1;

  // Short fixation runs.
  const double min_frames = thr_fix * f_s;
  std::size_t i = 0;
  while (i < n) {
    if (!is_fix[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && is_fix[j]) ++j;
    if (static_cast<double>(j - i) < min_frames) {
      for (std::size_t k = i; k < j; ++k) flags[k] = 1;
    }
    i = j;
  }

  // Low windowed fixation ratio.
  if (static_cast<int>(n) < w_f) {
    if (ratio_skipped) *ratio_skipped = true;
    return flags;
  }
  if (ratio_skipped) *ratio_skipped = false;
  std::vector<double> ratio(n, 0.0);
  double running = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    running += is_fix[k];
    if (k >= static_cast<std::size_t>(w_f)) running -= is_fix[k - w_f];
    const std::size_t win = std::min<std::size_t>(k + 1, w_f);
    ratio[k] = running / static_cast<double>(win);
  }
  std::vector<double> tail(ratio.begin() + (w_f - 1), ratio.end());
  const auto [mu, sd] = mean_stddev(tail);
  if (sd > 0.0) {
    for (std::size_t k = w_f - 1; k < n; ++k) {
      if (ratio[k] < mu - sd) flags[k] = 1;
    }
  }
  return flags;
}

/// Sliding-window gaze entropies, each window's value assigned to its last
/// frame. Frames before the first full window carry no value.
struct EntropySeries {
  std::vector<double> spatial;     // size = n - w_e + 1 (empty if n < w_e)
  std::vector<double> transition;
  std::size_t first_frame = 0;     // frame index the series starts at
};

inline EntropySeries windowed_entropies(const std::vector<int>& aoi_seq,
                                        int w_e = kEntropyWindow) {
  if (w_e < 2) throw ConfigError("entropy window must be >= 2");
  EntropySeries s;
  const std::size_t n = aoi_seq.size();
  if (n < static_cast<std::size_t>(w_e)) return s;
  s.first_frame = static_cast<std::size_t>(w_e - 1);
  for (std::size_t end = s.first_frame; end < n; ++end) {
    std::vector<int> window(aoi_seq.begin() + (end - w_e + 1),
                            aoi_seq.begin() + end + 1);
    s.spatial.push_back(spatial_entropy(window));
    s.transition.push_back(transition_entropy(window));
  }
  return s;
}

/// Dispersion anomalies: frames where either windowed entropy falls below
/// its within-session P10 or above its P75 (both strict).
inline Flags dispersion_anomalies(const EntropySeries& series,
                                  std::size_t total_frames) {
  Flags flags(total_frames, 0);
  if (series.spatial.empty()) return flags;
  auto flag_series = [&](const std::vector<double>& v) {
    const double lo = percentile(v, 10.0);
    const double hi = percentile(v, 75.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] < lo || v[i] > hi) flags[series.first_frame + i] = 1;
    }
  };
  flag_series(series.spatial);
  flag_series(series.transition);
  return flags;
}

/// Saccade anomalies: gaze speed above the within-session P90 (strict).
inline Flags saccade_anomalies(const std::vector<GazeSample>& samples,
                               double f_s = kDefaultSampleHz) {
  const std::size_t n = samples.size();
  Flags flags(n, 0);
  if (n < 2) return flags;
  const std::vector<double> d = gaze_displacements(samples);
  std::vector<double> v(d.begin() + 1, d.end());
  for (double& x : v) x *= f_s;
  const double p90 = percentile(v, 90.0);
  for (std::size_t i = 1; i < n; ++i) {
    if (d[i] * f_s > p90) flags[i] = 1;
  }
  return flags;
}

/// Pupil anomalies: z-scored first-difference rate with |z| > z_thr.
inline Flags pupil_anomalies(const std::vector<double>& pupil,
                             double z_thr = kPupilZThr,
                             bool* degenerate = nullptr) {
  const std::size_t n = pupil.size();
  Flags flags(n, 0);
  if (degenerate) *degenerate = false;
  if (n < 2) return flags;
  std::vector<double> rate(n - 1);
  for (std::size_t i = 1; i < n; ++i) rate[i - 1] = pupil[i] - pupil[i - 1];
  const auto [mu, sd] = mean_stddev(rate);
  if (sd == 0.0) {
    if (degenerate) *degenerate = true;
    return flags;
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs((rate[i - 1] - mu) / sd) > z_thr) flags[i] = 1;
  }
  return flags;
}

/// Cognitive anomalies: values above the within-session P90 (strict).
inline Flags cognitive_anomalies(const std::vector<double>& series) {
  Flags flags(series.size(), 0);
  if (series.empty()) return flags;
  const double p90 = percentile(series, 90.0);
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i] > p90) flags[i] = 1;
  }
  return flags;
}

inline Flags flag_union(const Flags& a, const Flags& b) {
  if (a.size() != b.size()) throw ContractError("flag_union: size mismatch");
  Flags out(a.size(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] || b[i]) ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Smoothing and segmentation
// ---------------------------------------------------------------------------

inline std::vector<double> hanning_window(int n, bool unit_sum) {
  if (n < 2) throw ConfigError("hanning length must be >= 2");
  std::vector<double> w(n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / (n - 1)));
    sum += w[i];
  }
  if (unit_sum) {
    for (double& x : w) x /= sum;
  }
  return w;
}

/// Convolves binary flags with a Hanning window ("same" alignment) and
/// merges contiguous super-threshold runs into segments.
inline SegmentList smooth_and_segment(const Flags& flags,
                                      int n = kHanningLength,
                                      double amplitude = kSegmentAmplitude,
                                      bool unit_sum = true,
                                      const std::string& label = "") {
  SegmentList segments;
  if (flags.empty()) return segments;
  const std::vector<double> w = hanning_window(n, unit_sum);
  const std::size_t len = flags.size();
  const int offset = (n - 1) / 2;  // "same" alignment of the full convolution

  std::vector<double> smoothed(len, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
      const std::int64_t j =
          static_cast<std::int64_t>(t) + offset - k;  // full[t + offset]
      if (j >= 0 && j < static_cast<std::int64_t>(len) && flags[j]) {
        acc += w[k];
      }
    }
    smoothed[t] = acc;
  }

  std::optional<std::int64_t> start;
  for (std::size_t t = 0; t <= len; ++t) {
    const bool on = t < len && smoothed[t] > amplitude;
    if (on && !start) start = static_cast<std::int64_t>(t);
    if (!on && start) {
      segments.push_back({*start, static_cast<std::int64_t>(t) - 1, label});
      start.reset();
    }
  }
  return segments;
}

// ---------------------------------------------------------------------------
// Overlap matching
// ---------------------------------------------------------------------------

struct MatchReport {
  double match_rate = 0.0;
  double miss_rate = 0.0;
  bool match_defined = true;  // false when no cognitive segments exist
  SegmentList matched;
  SegmentList unmatched;
};

inline MatchReport match_segments(const SegmentList& cog,
                                  const SegmentList& phys) {
  MatchReport r;
  if (cog.empty()) {
    r.match_defined = false;
  } else {
    int matched = 0;
    for (const Segment& c : cog) {
      const bool hit = std::any_of(phys.begin(), phys.end(), [&](const Segment& p) {
        return c.overlaps(p);
      });
      (hit ? r.matched : r.unmatched).push_back(c);
      if (hit) ++matched;
    }
    r.match_rate = static_cast<double>(matched) / cog.size();
  }
  if (!phys.empty()) {
    int missed = 0;
    for (const Segment& p : phys) {
      if (std::none_of(cog.begin(), cog.end(),
                       [&](const Segment& c) { return c.overlaps(p); })) {
        ++missed;
      }
    }
    r.miss_rate = static_cast<double>(missed) / phys.size();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Group statistics
// ---------------------------------------------------------------------------

struct AnovaResult {
  double F = 0.0;
  double p = 1.0;
  int df_between = 0;
  int df_within = 0;
};

inline AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw ContractError("anova: need >= 2 groups");
  for (const auto& g : groups) {
    if (g.size() < 2) throw ContractError("anova: each group needs >= 2 values");
  }
  double grand = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    for (double x : g) grand += x;
    n += g.size();
  }
  grand /= static_cast<double>(n);

  double ssb = 0.0, ssw = 0.0;
  for (const auto& g : groups) {
    double gm = 0.0;
    for (double x : g) gm += x;
    gm /= static_cast<double>(g.size());
    ssb += g.size() * (gm - grand) * (gm - grand);
    for (double x : g) ssw += (x - gm) * (x - gm);
  }
  AnovaResult r;
  r.df_between = static_cast<int>(groups.size()) - 1;
  r.df_within = static_cast<int>(n - groups.size());
  const double msb = ssb / r.df_between;
  const double msw = ssw / r.df_within;
  if (msb == 0.0) {
    r.F = 0.0;
    r.p = 1.0;
  } else if (msw == 0.0) {
    r.F = std::numeric_limits<double>::infinity();
    r.p = 0.0;
  } else {
    r.F = msb / msw;
    const boost::math::fisher_f dist(r.df_between, r.df_within);
    r.p = boost::math::cdf(boost::math::complement(dist, r.F));
  }
  return r;
}

struct MaxDiffResult {
  double maxdiff = 0.0;
  bool within_tolerance = true;
};

inline MaxDiffResult maxdiff_equivalence(const std::vector<double>& means,
                                         double delta = 0.10) {
  if (means.empty()) throw ContractError("maxdiff: empty input");
  const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
  MaxDiffResult r;
  r.maxdiff = *hi - *lo;
  r.within_tolerance = r.maxdiff < delta;
  return r;
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

inline constexpr const char* kGazeHeader = "t,x,y,pupil,valid";

inline void write_gaze(const std::vector<GazeSample>& samples,
                       const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os << kGazeHeader << "\n";
    for (const GazeSample& s : samples) {
      os << s.t << ',' << detail::fmt_double(s.x) << ','
         << detail::fmt_double(s.y) << ',' << detail::fmt_double(s.pupil)
         << ',' << (s.valid ? 1 : 0) << "\n";
    }
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<GazeSample> read_gaze(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(is, line) ||
      (line != kGazeHeader && line != std::string(kGazeHeader) + "\r")) {
    throw ParseError("unexpected gaze header");
  }
  std::vector<GazeSample> samples;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = detail::split_csv_line(line);
    if (cols.size() != 5) {
      throw ParseError("gaze line " + std::to_string(lineno) +
                       ": expected 5 columns");
    }
    GazeSample s;
    try {
      s.t = std::stoll(cols[0]);
      s.x = std::stod(cols[1]);
      s.y = std::stod(cols[2]);
      s.pupil = std::stod(cols[3]);
      s.valid = cols[4] == "1" || cols[4] == "true";
    } catch (const std::exception&) {
      throw ParseError("gaze line " + std::to_string(lineno) +
                       ": malformed row");
    }
    samples.push_back(s);
  }
  return samples;
}

inline constexpr const char* kPhysioReportHeader = "dimension,parameter,F,p,maxdiff";

struct PhysioReportRow {
  std::string dimension;
  std::string parameter;
  double F = 0.0;
  double p = 1.0;
  double maxdiff = 0.0;
};

inline void write_physio_report(const std::vector<PhysioReportRow>& rows,
                                const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os << kPhysioReportHeader << "\n";
    for (const PhysioReportRow& r : rows) {
      os << r.dimension << ',' << r.parameter << ',' << detail::fmt_double(r.F)
         << ',' << detail::fmt_double(r.p) << ','
         << detail::fmt_double(r.maxdiff) << "\n";
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace takeover
