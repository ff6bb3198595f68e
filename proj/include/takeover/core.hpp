#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "takeover/error.hpp"
#include "takeover/rng.hpp"

namespace takeover {

/// Decision-step duration in seconds. All timestamps in the library are
/// integer decision-step indices; wall-clock seconds appear only in reports.
inline constexpr double kDt = 0.1;

/// Latent bounded-rationality state theta = (sigma0, sigma_max, c, d).
/// d is stored continuous and rounded to integer at use sites.
struct CognitiveParams {
  double sigma0 = 0.0;     // near-range noise floor (m)
  double sigma_max = 0.0;  // far-range noise saturation (m)
  double c = 0.0;          // looming-aversion weight
  double d = 0.0;          // action delay (decision steps)

  static constexpr double kSigma0Max = 1.0;
  static constexpr double kSigmaMaxMax = 5.0;
  static constexpr double kCMax = 10.0;
  static constexpr double kDMax = 20.0;

  bool valid() const {
    return sigma0 >= 0.0 && sigma0 <= kSigma0Max && sigma_max >= 0.0 &&
           sigma_max <= kSigmaMaxMax && sigma0 <= sigma_max + 1e-12 && c >= 0.0 &&
           c <= kCMax && d >= 0.0 && d <= kDMax;
  }

  /// Clamps each component to its bounds and re-projects sigma0 <= sigma_max.
  CognitiveParams clamped() const {
    CognitiveParams p;
    p.sigma0 = std::clamp(sigma0, 0.0, kSigma0Max);
    p.sigma_max = std::clamp(sigma_max, 0.0, kSigmaMaxMax);
    p.sigma0 = std::min(p.sigma0, p.sigma_max);
    p.c = std::clamp(c, 0.0, kCMax);
    p.d = std::clamp(d, 0.0, kDMax);
    return p;
  }

  int delay_steps() const { return static_cast<int>(std::lround(d)); }

  double operator[](int i) const {
    switch (i) {
      case 0: return sigma0;
      case 1: return sigma_max;
      case 2: return c;
      default: return d;
    }
  }

  double& operator[](int i) {
    switch (i) {
      case 0: return sigma0;
      case 1: return sigma_max;
      case 2: return c;
      default: return d;
    }
  }

  bool operator==(const CognitiveParams&) const = default;
};

struct VehicleState {
  int id = 0;
  int lane = 0;
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double heading = 0.0;  // rad, 0 = along +x
  double length = 4.8;
  double width = 1.9;

  double speed() const { return std::hypot(vx, vy); }

  bool operator==(const VehicleState&) const = default;
};

/// Normalized control command; both components in [-1, 1].
struct Action {
  double steer = 0.0;
  double longitudinal = 0.0;  // positive = throttle, negative = brake

  Action clamped() const {
    return {std::clamp(steer, -1.0, 1.0), std::clamp(longitudinal, -1.0, 1.0)};
  }

  bool operator==(const Action&) const = default;
};

struct Frame {
  std::int64_t t = 0;
  VehicleState ego;
  std::vector<VehicleState> others;
  Action action;
  bool collision = false;

  bool operator==(const Frame&) const = default;
};

/// L consecutive observed frames anchoring a window likelihood.
struct TrajectoryWindow {
  std::vector<Frame> frames;

  std::size_t length() const { return frames.size(); }

  bool contiguous() const {
    for (std::size_t i = 1; i < frames.size(); ++i) {
      if (frames[i].t != frames[i - 1].t + 1) return false;
    }
    return true;
  }
};

inline constexpr int kDefaultWindow = 5;

// ---------------------------------------------------------------------------
// Trajectory CSV I/O
// Schema: t,agent_id,lane,x,y,vx,vy,heading,steer,long,collision
// One row per agent per step; the ego carries agent_id 0 and the action.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline constexpr const char* kTrajectoryHeader =
    "t,agent_id,lane,x,y,vx,vy,heading,steer,long,collision";

inline void write_trajectory_stream(const std::vector<Frame>& frames,
                                    std::ostream& os) {
  os << kTrajectoryHeader << "\n";
  auto row = [&](std::int64_t t, const VehicleState& v, const Action& a,
                 bool collision) {
    os << t << ',' << v.id << ',' << v.lane << ',' << detail::fmt_double(v.x)
       << ',' << detail::fmt_double(v.y) << ',' << detail::fmt_double(v.vx)
       << ',' << detail::fmt_double(v.vy) << ','
       << detail::fmt_double(v.heading) << ',' << detail::fmt_double(a.steer)
       << ',' << detail::fmt_double(a.longitudinal) << ','
       << (collision ? 1 : 0) << "\n";
  };
  for (const Frame& f : frames) {
    row(f.t, f.ego, f.action, f.collision);
    for (const VehicleState& v : f.others) row(f.t, v, Action{}, false);
  }
}

/// Writes atomically: temp file in the target directory, then rename.
inline void write_trajectory(const std::vector<Frame>& frames,
                             const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    write_trajectory_stream(frames, os);
    if (!os) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<Frame> read_trajectory_stream(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("missing trajectory header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTrajectoryHeader) {
    throw ParseError("unexpected trajectory header: " + line);
  }

  std::vector<Frame> frames;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = detail::split_csv_line(line);
    if (cols.size() != 11) {
      throw ParseError("line " + std::to_string(lineno) +
                       ": expected 11 columns, got " +
                       std::to_string(cols.size()));
    }
    std::int64_t t;
    VehicleState v;
    Action a;
    int collision;
    try {
      std::size_t pos = 0;
      t = std::stoll(cols[0]);
      v.id = std::stoi(cols[1]);
      v.lane = std::stoi(cols[2]);
      v.x = std::stod(cols[3], &pos);
      v.y = std::stod(cols[4]);
      v.vx = std::stod(cols[5]);
      v.vy = std::stod(cols[6]);
      v.heading = std::stod(cols[7]);
      a.steer = std::stod(cols[8]);
      a.longitudinal = std::stod(cols[9]);
      collision = std::stoi(cols[10]);
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(lineno) + ": malformed row");
    }

    if (!frames.empty() && frames.back().t == t) {
      frames.back().others.push_back(v);
    } else {
      if (!frames.empty() && t <= frames.back().t) {
        throw ValidationError("line " + std::to_string(lineno) +
                              ": non-monotone step index " +
                              std::to_string(t));
      }
      Frame f;
      f.t = t;
      if (v.id != 0) {
        throw ParseError("line " + std::to_string(lineno) +
                         ": first row of step " + std::to_string(t) +
                         " must be the ego (agent_id 0)");
      }
      f.ego = v;
      f.action = a;
      f.collision = collision != 0;
      frames.push_back(std::move(f));
    }
  }
  return frames;
}

inline std::vector<Frame> read_trajectory(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  return read_trajectory_stream(is);
}

// ---------------------------------------------------------------------------
// Key/value config text files (scenario configs, controller gains)
// ---------------------------------------------------------------------------

inline std::vector<std::pair<std::string, std::string>> read_key_values(
    std::istream& is) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("line " + std::to_string(lineno) +
                       ": expected key = value");
    }
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

inline std::vector<std::pair<std::string, std::string>> read_key_values(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path.string());
  return read_key_values(is);
}

}  // namespace takeover
