#pragma once

#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <vector>

#include "takeover/cognition.hpp"
#include "takeover/core.hpp"
#include "takeover/env.hpp"
#include "takeover/error.hpp"
#include "takeover/rng.hpp"

namespace takeover {

inline constexpr double kVTarget = 27.8;  // m/s

// ---------------------------------------------------------------------------
// Reward shaping primitives
// ---------------------------------------------------------------------------

inline double huber(double x, double delta) {
  if (delta <= 0.0) throw DomainError("huber delta must be positive");
  const double ax = std::abs(x);
  if (ax <= delta) return 0.5 * x * x;
  return delta * (ax - 0.5 * delta);
}

/// ln(1 + e^x), stable for large |x|.
inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

struct RewardBreakdown {
  double success = 0.0;
  double road = 0.0;
  double crash = 0.0;
  double driving = 0.0;
  double track = 0.0;
  double wall = 0.0;
  double behavior = 0.0;
  double looming = 0.0;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// Forward-hazard geometry shared by the reward and the controller
// ---------------------------------------------------------------------------

/// Scalar range/closing-speed summary of one potential hazard. Ranges are
/// bumper gaps along the road axis, floored at 0.01 m.
struct HazardInfo {
  int id = 0;  // -1 for the work zone
  int lane = 0;
  bool ahead = false;
  double range = 0.0;
  double closing_speed = 0.0;  // positive while the gap shrinks
  double speed = 0.0;          // hazard's own longitudinal speed
};

inline constexpr double kMinRange = 0.01;

inline std::vector<HazardInfo> hazard_geometry(const WorldState& w) {
  std::vector<HazardInfo> out;
  const VehicleState& e = w.ego;
  for (const VehicleState& v : w.background) {
    HazardInfo h;
    h.id = v.id;
    h.lane = v.lane;
    h.ahead = v.x >= e.x;
    if (h.ahead) {
      h.range = (v.x - v.length / 2) - (e.x + e.length / 2);
      h.closing_speed = e.vx - v.vx;
    } else {
      h.range = (e.x - e.length / 2) - (v.x + v.length / 2);
      h.closing_speed = v.vx - e.vx;
    }
    h.range = std::max(h.range, kMinRange);
    h.speed = v.vx;
    out.push_back(h);
  }
  if (w.workzone.x_start >= e.x) {
    HazardInfo h;
    h.id = -1;
    h.lane = w.workzone.lane;
    h.ahead = true;
    h.range = std::max(w.workzone.x_start - (e.x + e.length / 2), kMinRange);
    h.closing_speed = e.vx;
    h.speed = 0.0;
    out.push_back(h);
  }
  return out;
}

/// Most-constraining forward target: nearest same-lane hazard ahead.
inline std::optional<HazardInfo> forward_hazard(const WorldState& w) {
  std::optional<HazardInfo> best;
  for (const HazardInfo& h : hazard_geometry(w)) {
    if (!h.ahead || h.lane != w.ego.lane) continue;
    if (!best || h.range < best->range) best = h;
  }
  return best;
}

/// Full per-step reward: sparse terms on termination, dense progress and
/// speed-regulation terms, and the looming-aversion cognitive term.
inline RewardBreakdown reward_step(const WorldState& prev, const Action& action,
                                   const WorldState& next,
                                   const CognitiveParams& params) {
  (void)action;
  if (next.t != prev.t + 1) {
    throw ContractError("reward_step: next.t must equal prev.t + 1");
  }
  const ScenarioConfig& cfg = next.config;
  RewardBreakdown r;

  switch (next.terminated) {
    case Termination::success: r.success = 100.0; break;
    case Termination::off_road: r.road = -8.0; break;
    case Termination::crash: r.crash = -8.0; break;
    case Termination::running: break;
  }

  const double v_prev = prev.ego.speed();
  const double v_now = next.ego.speed();
  const double dl = next.ego.x - prev.ego.x;
  const int lane = nearest_lane(cfg, next.ego.y);
  const double d_lat = next.ego.y - cfg.lane_center(lane);
  const double f_lat =
      std::clamp(1.0 - 2.0 * std::abs(d_lat / cfg.lane_width), 0.0, 1.0);
  const bool on_road = next.terminated != Termination::off_road &&
                       next.ego.y >= 0.0 && next.ego.y <= cfg.road_width();
  r.driving = 0.4 * dl * f_lat * (on_road ? 1.0 : 0.0);

  const double dv = v_now - kVTarget;
  r.track = -0.12 * huber(dv, 1.0);

  const bool over = v_now > kVTarget;
  if (over) {
    const double sp = softplus(dv);
    r.wall = -0.15 * sp * sp;
    const double acc = (v_now - v_prev) / kDt;
    r.behavior = 0.3 * std::max(-acc, 0.0) - 0.2 * std::max(acc, 0.0);
  }

  if (auto hz = forward_hazard(next)) {
    if (hz->closing_speed > 0.0) {
      r.looming = looming_reward(
          params.c, inverse_tau(hz->range, hz->closing_speed),
          hz->closing_speed);
    }
  }

  r.total = r.success + r.road + r.crash + r.driving + r.track + r.wall +
            r.behavior + r.looming;
  return r;
}

// ---------------------------------------------------------------------------
// Parametric bounded-rational controller
// ---------------------------------------------------------------------------

struct ControllerGains {
  double kp_speed = 1.0;
  double kp_lane = 0.6;
  double kd_lane = 0.3;
  double gap_accept = 1.5;       // s
  double commit_dist = 120.0;    // m
  double risk_brake_gain = 0.08;

  void validate() const {
    if (kp_speed < 0 || kp_lane < 0 || kd_lane < 0 || gap_accept < 0 ||
        commit_dist < 0 || risk_brake_gain < 0) {
      throw ConfigError("controller gains must be non-negative");
    }
  }

  double operator[](int i) const {
    switch (i) {
      case 0: return kp_speed;
      case 1: return kp_lane;
      case 2: return kd_lane;
      case 3: return gap_accept;
      case 4: return commit_dist;
      default: return risk_brake_gain;
    }
  }
  double& operator[](int i) {
    switch (i) {
      case 0: return kp_speed;
      case 1: return kp_lane;
      case 2: return kd_lane;
      case 3: return gap_accept;
      case 4: return commit_dist;
      default: return risk_brake_gain;
    }
  }
  static constexpr int kCount = 6;
};

/// Believed hazard state as seen through the Kalman range tracks.
struct TargetBelief {
  int id = 0;
  int lane = 0;
  bool ahead = false;
  double range = kMinRange;     // estimated
  double closing_speed = 0.0;   // estimated, positive while approaching
  double speed = 0.0;           // hazard speed implied by the estimate
};

/// Raw (pre-delay) control decision. Pure function of its inputs.
///
/// Longitudinal: proportional speed tracking minus a looming-scaled brake
/// term. Lateral: Stanley-style tracking of the target lane center, where
/// the target lane moves right when the same-lane hazard is inside
/// commit_dist and the adjacent-lane gaps are accepted.
inline Action decide(const std::vector<TargetBelief>& beliefs,
                     const VehicleState& ego, const ScenarioConfig& geom,
                     const CognitiveParams& params,
                     const ControllerGains& gains) {
  const double v = ego.speed();
  const int lane = nearest_lane(geom, ego.y);

  // Nearest believed hazard ahead in the current lane.
  const TargetBelief* hazard = nullptr;
  for (const TargetBelief& b : beliefs) {
    if (!b.ahead || b.lane != lane) continue;
    if (!hazard || b.range < hazard->range) hazard = &b;
  }

  double longitudinal = gains.kp_speed * (kVTarget - v) / kVTarget;
  double follow = longitudinal;
  if (hazard) {
    // Car-following cap on the believed gap: intelligent-driver-model
    // deceleration keeps the no-impairment baseline from rear-ending its
    // lead, while sigma/d impairments act through the belief and the delay.
    constexpr double kFollowAccel = 1.5;
    constexpr double kFollowDecel = 2.0;
    constexpr double kFollowMinGap = 2.0;
    constexpr double kFollowHeadway = 1.0;  // s
    const double s = std::max(hazard->range, kMinRange);
    const double dv = hazard->closing_speed;
    const double s_star =
        kFollowMinGap + std::max(0.0, v * kFollowHeadway +
                                          v * dv /
                                              (2.0 * std::sqrt(kFollowAccel *
                                                               kFollowDecel)));
    const double ratio = v / kVTarget;
    const double a_idm = kFollowAccel * (1.0 - ratio * ratio * ratio * ratio -
                                         (s_star / s) * (s_star / s));
    follow = a_idm >= 0.0 ? a_idm / geom.max_accel : a_idm / geom.max_decel;
    longitudinal = std::min(longitudinal, follow);
  }
  if (hazard && hazard->closing_speed > 0.0) {
    const double inv_tau = hazard->closing_speed / std::max(hazard->range, kMinRange);
    longitudinal -= gains.risk_brake_gain * params.c * std::tanh(inv_tau);
  }

  // Lane-change intent: the same-lane hazard either sits inside commit_dist
  // or already forces braking, and the adjacent (right) lane gaps are
  // accepted. A gap is accepted when the believed bumper gap clears a
  // minimum and the believed time-to-contact clears gap_accept seconds.
  int target_lane = lane;
  if (hazard && (hazard->range < gains.commit_dist || follow < 0.0) &&
      lane + 1 < geom.lane_count) {
    constexpr double kLaneChangeMinGap = 6.0;  // m
    double front_gap = 1e300;
    double front_closing = 0.0;
    double rear_gap = 1e300;
    double rear_closing = 0.0;
    for (const TargetBelief& b : beliefs) {
      if (b.lane != lane + 1) continue;
      if (b.ahead) {
        if (b.range < front_gap) {
          front_gap = b.range;
          front_closing = b.closing_speed;
        }
      } else if (b.range < rear_gap) {
        rear_gap = b.range;
        rear_closing = b.closing_speed;
      }
    }
    const auto accepted = [&](double gap, double closing) {
      if (gap < kLaneChangeMinGap) return false;
      return closing <= 0.0 || gap / closing > gains.gap_accept;
    };
    if (accepted(front_gap, front_closing) &&
        accepted(rear_gap, rear_closing)) {
      target_lane = lane + 1;
    }
  }

  // Evasive abort: while steering toward the adjacent lane, retreat as soon
  // as any believed target-lane vehicle closes inside the safety envelope.
  // Near ranges are perceived accurately (Weber-Fechner), so the trigger is
  // reliable; the action delay decides whether the evasion lands in time.
  if (target_lane != lane) {
    constexpr double kAbortGap = 4.0;  // m
    for (const TargetBelief& b : beliefs) {
      if (b.lane == target_lane && b.range < kAbortGap) {
        target_lane = lane;
        break;
      }
    }
  }

  // Damped Stanley tracking of the target lane center. The damping keeps
  // the per-step heading-loop gain low enough that moderate action delays
  // stay stable; extreme delays still oscillate, by design.
  constexpr double kSteerDamp = 0.25;
  const double lat_err = geom.lane_center(target_lane) - ego.y;
  const double steer_angle =
      kSteerDamp * (std::atan2(gains.kp_lane * lat_err, std::max(v, 1.0)) -
                    (1.0 + gains.kd_lane) * ego.heading);
  const double steer = steer_angle / geom.max_steer;

  return Action{steer, longitudinal}.clamped();
}

// ---------------------------------------------------------------------------
// Episode-confined perception/decision state and the full pipeline
// ---------------------------------------------------------------------------

struct TrackState {
  RangeTrack track;
  double last_disp = 0.0;  // posterior mean displacement over the last step
  bool has_disp = false;
};

inline constexpr int kWorkzoneTargetId = -1;

struct PolicyState {
  std::map<int, TrackState> tracks;
  std::deque<Action> raw_history;  // decisions, newest last
  double process_var = kDefaultProcessVar;

  void reset() {
    tracks.clear();
    raw_history.clear();
  }
};

/// One perception update for every hazard: noisy range draw, Kalman fuse.
/// Returns the beliefs the controller sees this step.
inline std::vector<TargetBelief> perceive(PolicyState& state,
                                          const WorldState& world,
                                          const CognitiveParams& params,
                                          Rng& rng, bool noisy = true) {
  std::vector<TargetBelief> beliefs;
  for (const HazardInfo& h : hazard_geometry(world)) {
    const double z = noisy ? perturb_range(h.range, params, rng) : h.range;
    const double sd = sigma_x(z, params.sigma0, params.sigma_max);
    const double meas_var = std::max(sd * sd, 1e-6);

    TrackState& ts = state.tracks[h.id];
    if (!ts.track.initialized()) {
      ts.track.target_id = h.id;
      ts.track.mean = z;
      ts.track.variance = meas_var;
      ts.last_disp = 0.0;
      ts.has_disp = false;
    } else if (sd == 0.0) {
      // Noise-free perception degenerates to the exact measurement.
      ts.last_disp = z - ts.track.mean;
      ts.has_disp = true;
      ts.track.mean = z;
      ts.track.variance = meas_var;
    } else {
      const double prev_mean = ts.track.mean;
      ts.track = kalman_update(ts.track, z, meas_var, state.process_var,
                               ts.has_disp ? ts.last_disp : 0.0);
      ts.last_disp = ts.track.mean - prev_mean;
      ts.has_disp = true;
    }
    ts.track.last_update = world.t;

    TargetBelief b;
    b.id = h.id;
    b.lane = h.lane;
    b.ahead = h.ahead;
    b.range = std::max(ts.track.mean, kMinRange);
    b.closing_speed = ts.has_disp ? -ts.last_disp / kDt : 0.0;
    b.speed = h.ahead ? world.ego.vx - b.closing_speed
                      : world.ego.vx + b.closing_speed;
    beliefs.push_back(b);
  }
  return beliefs;
}

/// Full bounded-rational step: perturb_range -> kalman_update -> decide ->
/// action delay. Mutates only policy_state. The delay is applied against
/// the decision history, so a drifting d stays consistent with the
/// delayed-execution rule.
inline Action act(PolicyState& policy_state, const WorldState& world,
                  const CognitiveParams& params, const ControllerGains& gains,
                  Rng& rng, bool noisy = true) {
  const auto beliefs = perceive(policy_state, world, params, rng, noisy);
  const Action raw = decide(beliefs, world.ego, world.config, params, gains);

  policy_state.raw_history.push_back(raw);
  constexpr std::size_t kHistoryCap = 32;
  while (policy_state.raw_history.size() > kHistoryCap) {
    policy_state.raw_history.pop_front();
  }

  const int d = params.delay_steps();
  const std::size_t n = policy_state.raw_history.size();
  if (static_cast<int>(n) > d) {
    return policy_state.raw_history[n - 1 - static_cast<std::size_t>(d)];
  }
  return Action{};  // still warming up after takeover
}

/// Vanilla (cognition-off) baseline parameters.
inline CognitiveParams cognition_off(const CognitiveParams& /*params*/ = {}) {
  return CognitiveParams{0.0, 0.0, 0.0, 0.0};
}

// ---------------------------------------------------------------------------
// Cross-entropy gain calibration (stands in for policy training)
// ---------------------------------------------------------------------------

struct GainsBounds {
  ControllerGains lo{0.2, 0.1, 0.0, 0.5, 40.0, 0.0};
  ControllerGains hi{3.0, 2.0, 1.0, 3.0, 250.0, 0.5};
};

/// Mean episode return of one gain vector over the scenario x theta grid.
inline double evaluate_gains(const ControllerGains& gains,
                             const std::vector<ScenarioConfig>& scenarios,
                             const std::vector<CognitiveParams>& thetas,
                             int max_steps, std::uint64_t seed,
                             int* crash_count = nullptr) {
  double total = 0.0;
  int episodes = 0;
  for (std::size_t si = 0; si < scenarios.size(); ++si) {
    for (std::size_t ti = 0; ti < thetas.size(); ++ti) {
      WorldState world = make_scenario(scenarios[si]);
      PolicyState ps;
      Rng rng = derive_rng(mix_seed(seed, si, ti), 1);
      double ret = 0.0;
      for (int k = 0; k < max_steps; ++k) {
        if (world.terminated != Termination::running) break;
        const Action a = act(ps, world, thetas[ti], gains, rng);
        WorldState next = step(world, a);
        ret += reward_step(world, a, next, thetas[ti]).total;
        world = std::move(next);
      }
      if (crash_count && world.terminated == Termination::crash) {
        ++*crash_count;
      }
      total += ret;
      ++episodes;
    }
  }
  return episodes > 0 ? total / episodes : 0.0;
}

struct CalibrationResult {
  ControllerGains gains;
  double initial_return = 0.0;
  double final_return = 0.0;
  bool all_crash_warning = false;
};

/// Cross-entropy method over ControllerGains maximizing mean episode
/// return. Returns the best elite-mean seen on the evaluation set.
inline CalibrationResult calibrate_gains(
    const std::vector<ScenarioConfig>& scenarios, const GainsBounds& bounds,
    int iterations, int population, Rng& rng,
    const std::vector<CognitiveParams>& thetas = {CognitiveParams{}},
    int max_steps = 400) {
  if (population < 8) throw ConfigError("population must be >= 8");

  ControllerGains mean;
  ControllerGains stddev;
  for (int i = 0; i < ControllerGains::kCount; ++i) {
    mean[i] = 0.5 * (bounds.lo[i] + bounds.hi[i]);
    stddev[i] = 0.5 * (bounds.hi[i] - bounds.lo[i]);
  }

  const std::uint64_t eval_seed = rng.next_u64();
  CalibrationResult result;
  result.gains = mean;
  result.initial_return =
      evaluate_gains(mean, scenarios, thetas, max_steps, eval_seed);
  result.final_return = result.initial_return;

  const int elite_count = std::max(2, population / 4);
  bool any_noncrash = false;

  for (int it = 0; it < iterations; ++it) {
    std::vector<std::pair<double, ControllerGains>> scored;
    scored.reserve(population);
    for (int p = 0; p < population; ++p) {
      ControllerGains g;
      for (int i = 0; i < ControllerGains::kCount; ++i) {
        g[i] = std::clamp(mean[i] + stddev[i] * rng.gauss(), bounds.lo[i],
                          bounds.hi[i]);
      }
      int crashes = 0;
      const double score =
          evaluate_gains(g, scenarios, thetas, max_steps, eval_seed, &crashes);
      if (crashes <
          static_cast<int>(scenarios.size() * thetas.size())) {
        any_noncrash = true;
      }
      scored.emplace_back(score, g);
    }
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    ControllerGains new_mean{0, 0, 0, 0, 0, 0};
    for (int e = 0; e < elite_count; ++e) {
      for (int i = 0; i < ControllerGains::kCount; ++i) {
        new_mean[i] += scored[e].second[i] / elite_count;
      }
    }
    ControllerGains new_std{0, 0, 0, 0, 0, 0};
    for (int e = 0; e < elite_count; ++e) {
      for (int i = 0; i < ControllerGains::kCount; ++i) {
        const double dv = scored[e].second[i] - new_mean[i];
        new_std[i] += dv * dv / elite_count;
      }
    }
    for (int i = 0; i < ControllerGains::kCount; ++i) {
      new_std[i] = std::sqrt(new_std[i]) + 1e-6;
    }
    mean = new_mean;
    stddev = new_std;

    const double score =
        evaluate_gains(mean, scenarios, thetas, max_steps, eval_seed);
    if (score >= result.final_return) {
      result.final_return = score;
      result.gains = mean;
    }
  }

  result.all_crash_warning = !any_noncrash;
  return result;
}

// ---------------------------------------------------------------------------
// Gains file: key/value text matching ControllerGains field names.
// ---------------------------------------------------------------------------

inline ControllerGains gains_from_key_values(
    const std::vector<std::pair<std::string, std::string>>& kv) {
  ControllerGains g;
  for (const auto& [key, value] : kv) {
    try {
      if (key == "kp_speed") g.kp_speed = std::stod(value);
      else if (key == "kp_lane") g.kp_lane = std::stod(value);
      else if (key == "kd_lane") g.kd_lane = std::stod(value);
      else if (key == "gap_accept") g.gap_accept = std::stod(value);
      else if (key == "commit_dist") g.commit_dist = std::stod(value);
      else if (key == "risk_brake_gain") g.risk_brake_gain = std::stod(value);
      else throw ConfigError("unknown gains key: " + key);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("bad value for gains key " + key + ": " + value);
    }
  }
  g.validate();
  return g;
}

inline void write_gains(const ControllerGains& g,
                        const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os << "kp_speed = " << detail::fmt_double(g.kp_speed) << "\n"
       << "kp_lane = " << detail::fmt_double(g.kp_lane) << "\n"
       << "kd_lane = " << detail::fmt_double(g.kd_lane) << "\n"
       << "gap_accept = " << detail::fmt_double(g.gap_accept) << "\n"
       << "commit_dist = " << detail::fmt_double(g.commit_dist) << "\n"
       << "risk_brake_gain = " << detail::fmt_double(g.risk_brake_gain)
       << "\n";
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace takeover
