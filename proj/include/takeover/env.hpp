#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "takeover/core.hpp"
#include "takeover/error.hpp"
#include "takeover/rng.hpp"

namespace takeover {

// Road frame: x runs along the road, y across it. Lane 0 is the leftmost
// lane at y in [0, lane_width); positive steer turns toward +y (rightward).

struct ScenarioConfig {
  int lane_count = 4;
  double lane_width = 3.5;
  double ego_speed0 = 27.78;        // 100 km/h
  double background_speed = 22.22;  // 80 km/h
  double th_level = 2.0;            // time headway (s): {1.75, 2.0, 2.25}
  double workzone_x = 1250.0;
  double workzone_length = 60.0;
  double takeover_x = 1060.0;
  double tlt = 8.0;   // takeover lead time (s), metadata only
  int tor_id = 1;     // metadata only
  int ndrt_id = 1;    // metadata only
  std::uint64_t seed = 0;

  // Ego control limits. The physical limits are declared defaults and
  // config-overridable.
  double max_steer = 0.5;   // rad
  double max_accel = 3.0;   // m/s^2
  double max_decel = 8.0;   // m/s^2
  double wheelbase = 2.8;   // m
  double placement_back = 200.0;   // background placement span behind ego
  double placement_ahead = 400.0;  // and ahead of ego

  double lane_center(int lane) const { return (lane + 0.5) * lane_width; }
  double road_width() const { return lane_count * lane_width; }
  double workzone_end() const { return workzone_x + workzone_length; }

  void validate() const {
    if (lane_count < 2) throw ConfigError("lane_count must be >= 2");
    if (lane_width <= 0) throw ConfigError("lane_width must be positive");
    if (th_level <= 0) throw ConfigError("th_level must be positive");
    if (!(takeover_x < workzone_x)) {
      throw ConfigError("takeover_x must be less than workzone_x");
    }
    if (workzone_length <= 0) {
      throw ConfigError("workzone_length must be positive");
    }
  }
};

ScenarioConfig scenario_from_key_values(
    const std::vector<std::pair<std::string, std::string>>& kv);

struct WorkZone {
  int lane = 0;
  double x_start = 0.0;
  double x_end = 0.0;
};

enum class Termination { running, success, crash, off_road };

struct CollisionEvent {
  std::int64_t t = 0;
  int partner_id = 0;  // -1 for the work zone
  double x = 0.0;
};

struct WorldState {
  std::int64_t t = 0;
  VehicleState ego;
  std::vector<VehicleState> background;
  WorkZone workzone;
  Termination terminated = Termination::running;
  ScenarioConfig config;  // frozen at creation; carries geometry and limits

  bool operator==(const WorldState& o) const {
    return t == o.t && ego == o.ego && background == o.background &&
           workzone.lane == o.workzone.lane &&
           workzone.x_start == o.workzone.x_start &&
           workzone.x_end == o.workzone.x_end && terminated == o.terminated;
  }
};

/// Deep value copy; stepping the copy never mutates the original.
inline WorldState snapshot(const WorldState& world) { return world; }

namespace detail {

struct ObbCorners {
  std::array<double, 4> xs;
  std::array<double, 4> ys;
};

inline ObbCorners obb_corners(double cx, double cy, double half_l,
                              double half_w, double heading) {
  const double ch = std::cos(heading);
  const double sh = std::sin(heading);
  ObbCorners c;
  int k = 0;
  for (double sl : {1.0, -1.0}) {
    for (double sw : {1.0, -1.0}) {
      c.xs[k] = cx + sl * half_l * ch - sw * half_w * sh;
      c.ys[k] = cy + sl * half_l * sh + sw * half_w * ch;
      ++k;
    }
  }
  return c;
}

// SAT with closed intervals: touching boxes count as overlapping.
inline bool obb_overlap(double ax, double ay, double al, double aw, double ah,
                        double bx, double by, double bl, double bw,
                        double bh) {
  const ObbCorners ca = obb_corners(ax, ay, al / 2, aw / 2, ah);
  const ObbCorners cb = obb_corners(bx, by, bl / 2, bw / 2, bh);
  const std::array<std::pair<double, double>, 4> axes = {
      std::pair{std::cos(ah), std::sin(ah)},
      std::pair{-std::sin(ah), std::cos(ah)},
      std::pair{std::cos(bh), std::sin(bh)},
      std::pair{-std::sin(bh), std::cos(bh)}};
  for (const auto& [ux, uy] : axes) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (int i = 0; i < 4; ++i) {
      const double pa = ca.xs[i] * ux + ca.ys[i] * uy;
      const double pb = cb.xs[i] * ux + cb.ys[i] * uy;
      amin = std::min(amin, pa);
      amax = std::max(amax, pa);
      bmin = std::min(bmin, pb);
      bmax = std::max(bmax, pb);
    }
    if (amax < bmin - 1e-12 || bmax < amin - 1e-12) return false;
  }
  return true;
}

}  // namespace detail

/// Returns an event iff the ego's oriented bounding box overlaps any vehicle
/// box or the work-zone box (closed overlap: corner contact counts).
inline std::optional<CollisionEvent> detect_collision(const WorldState& world) {
  const VehicleState& e = world.ego;
  for (const VehicleState& v : world.background) {
    if (detail::obb_overlap(e.x, e.y, e.length, e.width, e.heading, v.x, v.y,
                            v.length, v.width, v.heading)) {
      return CollisionEvent{world.t, v.id, e.x};
    }
  }
  const WorkZone& wz = world.workzone;
  const double wzl = wz.x_end - wz.x_start;
  const double wzw = world.config.lane_width;
  const double wzx = (wz.x_start + wz.x_end) / 2;
  const double wzy = world.config.lane_center(wz.lane);
  if (detail::obb_overlap(e.x, e.y, e.length, e.width, e.heading, wzx, wzy,
                          wzl, wzw, 0.0)) {
    return CollisionEvent{world.t, -1, e.x};
  }
  return std::nullopt;
}

inline int nearest_lane(const ScenarioConfig& cfg, double y) {
  const int lane = static_cast<int>(std::floor(y / cfg.lane_width));
  return std::clamp(lane, 0, cfg.lane_count - 1);
}

/// Builds the takeover world: ego in the leftmost lane at takeover_x, work
/// zone occupying the leftmost lane from workzone_x, background traffic in
/// all lanes with seeded headway jitter.
inline WorldState make_scenario(const ScenarioConfig& config) {
  config.validate();
  const double spacing = config.th_level * config.background_speed;
  constexpr double kMinGap = 2.0;
  constexpr double kVehLen = 4.8;
  if (spacing < kVehLen + kMinGap) {
    throw ConfigError("headway too small for vehicle length");
  }

  WorldState w;
  w.config = config;
  w.t = 0;
  w.ego.id = 0;
  w.ego.lane = 0;
  w.ego.x = config.takeover_x;
  w.ego.y = config.lane_center(0);
  w.ego.vx = config.ego_speed0;
  w.ego.vy = 0.0;
  w.ego.heading = 0.0;
  w.workzone = {0, config.workzone_x, config.workzone_end()};

  Rng rng = derive_rng(config.seed, 0);
  int next_id = 1;
  for (int lane = 0; lane < config.lane_count; ++lane) {
    double x = config.takeover_x - config.placement_back +
               rng.uniform(0.0, spacing);
    const double x_max = config.takeover_x + config.placement_ahead;
    while (x < x_max) {
      const bool in_workzone_lane =
          lane == 0 && x > config.workzone_x - spacing &&
          x < config.workzone_end() + spacing;
      const bool near_ego =
          lane == 0 && std::abs(x - config.takeover_x) < spacing;
      if (!in_workzone_lane && !near_ego) {
        VehicleState v;
        v.id = next_id++;
        v.lane = lane;
        v.x = x;
        v.y = config.lane_center(lane);
        v.vx = config.background_speed;
        v.vy = 0.0;
        w.background.push_back(v);
      }
      x += spacing * (1.0 + rng.uniform(-0.1, 0.1));
    }
  }
  return w;
}

namespace detail {

// IDM car following; no lane changes. The work zone acts as a stationary
// lead for vehicles in its lane.
inline double idm_accel(const WorldState& w, const VehicleState& v) {
  constexpr double kAccel = 1.5;
  constexpr double kDecel = 2.0;
  constexpr double kMinGap = 2.0;
  constexpr int kExponent = 4;
  const double v0 = w.config.background_speed;
  const double T = w.config.th_level;

  // Nearest obstacle ahead in the same lane: background, ego, or work zone.
  double gap = 1e300;
  double lead_speed = v0;
  auto consider = [&](double obstacle_rear, double obstacle_speed) {
    const double g = obstacle_rear - (v.x + v.length / 2);
    if (g >= 0.0 && g < gap) {
      gap = g;
      lead_speed = obstacle_speed;
    }
  };
  for (const VehicleState& o : w.background) {
    if (o.id == v.id || o.lane != v.lane) continue;
    consider(o.x - o.length / 2, o.vx);
  }
  if (w.ego.lane == v.lane && w.terminated == Termination::running) {
    consider(w.ego.x - w.ego.length / 2, w.ego.vx);
  }
  if (w.workzone.lane == v.lane) consider(w.workzone.x_start, 0.0);

  const double free_term = 1.0 - std::pow(v.vx / v0, kExponent);
  if (gap >= 1e299) return kAccel * free_term;
  const double dv = v.vx - lead_speed;
  const double s_star =
      kMinGap + std::max(0.0, v.vx * T + v.vx * dv /
                                             (2.0 * std::sqrt(kAccel * kDecel)));
  const double s = std::max(gap, 0.1);
  return kAccel * (free_term - (s_star / s) * (s_star / s));
}

}  // namespace detail

/// Advances one decision step (5 physics substeps of 0.02 s). Pure function
/// of (world, action): background jitter was frozen at scenario creation.
inline WorldState step(const WorldState& world, const Action& ego_action) {
  if (world.terminated != Termination::running) {
    throw StateError("step called on terminated world");
  }
  WorldState w = world;
  const ScenarioConfig& cfg = w.config;
  const Action a = ego_action.clamped();
  constexpr int kSubsteps = 5;
  constexpr double kSubDt = kDt / kSubsteps;

  const double steer_angle = a.steer * cfg.max_steer;
  const double accel = a.longitudinal >= 0.0 ? a.longitudinal * cfg.max_accel
                                             : a.longitudinal * cfg.max_decel;

  for (int s = 0; s < kSubsteps; ++s) {
    // Ego: kinematic bicycle.
    double v = w.ego.speed();
    v = std::max(0.0, v + accel * kSubDt);
    w.ego.heading += v / cfg.wheelbase * std::tan(steer_angle) * kSubDt;
    w.ego.x += v * std::cos(w.ego.heading) * kSubDt;
    w.ego.y += v * std::sin(w.ego.heading) * kSubDt;
    w.ego.vx = v * std::cos(w.ego.heading);
    w.ego.vy = v * std::sin(w.ego.heading);

    // Background: IDM against a snapshot of positions from this substep.
    std::vector<double> acc(w.background.size());
    for (std::size_t i = 0; i < w.background.size(); ++i) {
      acc[i] = detail::idm_accel(w, w.background[i]);
    }
    for (std::size_t i = 0; i < w.background.size(); ++i) {
      VehicleState& b = w.background[i];
      b.vx = std::max(0.0, b.vx + acc[i] * kSubDt);
      b.x += b.vx * kSubDt;
    }
  }

  w.t += 1;
  w.ego.lane = nearest_lane(cfg, w.ego.y);

  const double half_w = w.ego.width / 2;
  if (auto col = detect_collision(w)) {
    w.terminated = Termination::crash;
    (void)col;
  } else if (w.ego.y < half_w || w.ego.y > cfg.road_width() - half_w) {
    w.terminated = Termination::off_road;
  } else if (w.ego.x > cfg.workzone_end() + 50.0) {
    w.terminated = Termination::success;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Scenario config file: keys exactly as ScenarioConfig field names.
// ---------------------------------------------------------------------------

inline ScenarioConfig scenario_from_key_values(
    const std::vector<std::pair<std::string, std::string>>& kv) {
  ScenarioConfig c;
  for (const auto& [key, value] : kv) {
    try {
      if (key == "lane_count") c.lane_count = std::stoi(value);
      else if (key == "lane_width") c.lane_width = std::stod(value);
      else if (key == "ego_speed0") c.ego_speed0 = std::stod(value);
      else if (key == "background_speed") c.background_speed = std::stod(value);
      else if (key == "th_level") c.th_level = std::stod(value);
      else if (key == "workzone_x") c.workzone_x = std::stod(value);
      else if (key == "workzone_length") c.workzone_length = std::stod(value);
      else if (key == "takeover_x") c.takeover_x = std::stod(value);
      else if (key == "tlt") c.tlt = std::stod(value);
      else if (key == "tor_id") c.tor_id = std::stoi(value);
      else if (key == "ndrt_id") c.ndrt_id = std::stoi(value);
      else if (key == "seed") c.seed = std::stoull(value);
      else if (key == "max_steer") c.max_steer = std::stod(value);
      else if (key == "max_accel") c.max_accel = std::stod(value);
      else if (key == "max_decel") c.max_decel = std::stod(value);
      else if (key == "wheelbase") c.wheelbase = std::stod(value);
      else if (key == "placement_back") c.placement_back = std::stod(value);
      else if (key == "placement_ahead") c.placement_ahead = std::stod(value);
      else throw ConfigError("unknown scenario key: " + key);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("bad value for scenario key " + key + ": " + value);
    }
  }
  c.validate();
  return c;
}

}  // namespace takeover
