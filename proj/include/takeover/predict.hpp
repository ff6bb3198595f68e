#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "takeover/filter.hpp"
#include "takeover/rollout.hpp"

namespace takeover {

inline constexpr int kDefaultHorizon = 30;

struct PredictionRecord {
  std::int64_t issue_step = 0;
  int horizon = kDefaultHorizon;
  std::vector<Frame> predicted;
  bool collision_flag = false;
  std::int64_t flagged_step = -1;  // absolute step of the first predicted crash
  double flagged_x = 0.0;
};

enum class PredictMethod { adaptive, cv, cognition_off };

inline const char* method_name(PredictMethod m) {
  switch (m) {
    case PredictMethod::adaptive: return "adaptive";
    case PredictMethod::cv: return "cv";
    case PredictMethod::cognition_off: return "off";
  }
  throw DomainError("unknown method");
}

inline PredictMethod method_from_name(const std::string& name) {
  if (name == "adaptive") return PredictMethod::adaptive;
  if (name == "cv") return PredictMethod::cv;
  if (name == "off" || name == "cognition_off") return PredictMethod::cognition_off;
  throw ConfigError("unknown method: " + name);
}

/// Closed-loop look-ahead under an inferred parameter estimate; flags the
/// first step whose rollout state is a crash.
inline PredictionRecord rollout_adaptive(const WorldState& anchor,
                                         const CognitiveParams& theta_hat,
                                         const ControllerGains& gains, int H,
                                         std::uint64_t seed,
                                         const RolloutOptions& options = {}) {
  if (H < 1) throw ConfigError("horizon must be >= 1");
  if (anchor.terminated != Termination::running) {
    throw StateError("prediction anchor already terminated");
  }
  PredictionRecord rec;
  rec.issue_step = anchor.t;
  rec.horizon = H;
  rec.predicted = rollout_window(anchor, theta_hat, gains, H, seed, options);
  for (const Frame& f : rec.predicted) {
    if (f.collision) {
      rec.collision_flag = true;
      rec.flagged_step = f.t;
      rec.flagged_x = f.ego.x;
      break;
    }
  }
  return rec;
}

/// Constant-velocity baseline: every vehicle keeps its current velocity and
/// heading; a flag is raised at the first step with geometric overlap.
inline PredictionRecord rollout_cv(const WorldState& anchor, int H) {
  if (H < 1) throw ConfigError("horizon must be >= 1");
  PredictionRecord rec;
  rec.issue_step = anchor.t;
  rec.horizon = H;
  VehicleState ego = anchor.ego;
  std::vector<VehicleState> others = anchor.background;
  for (int s = 1; s <= H; ++s) {
    ego.x += ego.vx * kDt;
    ego.y += ego.vy * kDt;
    for (VehicleState& v : others) {
      v.x += v.vx * kDt;
      v.y += v.vy * kDt;
    }
    Frame f;
    f.t = anchor.t + s;
    f.ego = ego;
    f.others = others;
    if (!rec.collision_flag) {
      WorldState probe = anchor;
      probe.ego = ego;
      probe.background = others;
      if (detect_collision(probe)) {
        rec.collision_flag = true;
        rec.flagged_step = f.t;
        rec.flagged_x = ego.x;
        f.collision = true;
      }
    }
    rec.predicted.push_back(std::move(f));
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Accuracy metrics
// ---------------------------------------------------------------------------

struct RmseTriple {
  double pos = 0.0;
  double vel = 0.0;
  double weighted = 0.0;
};

/// Horizon-averaged ego position/velocity RMSE plus the alpha/beta-weighted
/// combination (weighted^2 = alpha*pos^2 + beta*vel^2).
inline RmseTriple rmse_series(const std::vector<Frame>& predicted,
                              const std::vector<Frame>& realized, double alpha,
                              double beta) {
  if (predicted.size() != realized.size()) {
    throw ContractError("rmse_series: length mismatch");
  }
  if (predicted.empty()) throw ContractError("rmse_series: empty input");
  if (alpha < 0 || beta < 0 || std::abs(alpha + beta - 1.0) > 1e-9) {
    throw ContractError("rmse_series: alpha + beta must equal 1");
  }
  double pos_sq = 0.0, vel_sq = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const VehicleState& p = predicted[i].ego;
    const VehicleState& r = realized[i].ego;
    pos_sq += (p.x - r.x) * (p.x - r.x) + (p.y - r.y) * (p.y - r.y);
    vel_sq += (p.vx - r.vx) * (p.vx - r.vx) + (p.vy - r.vy) * (p.vy - r.vy);
  }
  pos_sq /= static_cast<double>(predicted.size());
  vel_sq /= static_cast<double>(predicted.size());
  RmseTriple out;
  out.pos = std::sqrt(pos_sq);
  out.vel = std::sqrt(vel_sq);
  out.weighted = std::sqrt(alpha * pos_sq + beta * vel_sq);
  return out;
}

struct EpisodeEvaluation {
  std::string episode;
  PredictMethod method = PredictMethod::adaptive;
  std::vector<PredictionRecord> records;
  std::optional<std::int64_t> t_flag;
  std::optional<std::int64_t> t_col;
  std::vector<RmseTriple> rmse;  // one triple per issued prediction
  double mean_rmse_pos = 0.0;
  double mean_rmse_vel = 0.0;
};

/// True iff both events exist and the flag led the collision by at least
/// `lead` seconds.
inline bool early_warning_hit(const EpisodeEvaluation& ev, double lead) {
  if (!ev.t_flag || !ev.t_col) return false;
  return static_cast<double>(*ev.t_col - *ev.t_flag) * kDt >= lead;
}

/// Coverage per lead-time threshold, over collision episodes only.
inline std::vector<double> lead_time_coverage(
    const std::vector<EpisodeEvaluation>& evals,
    const std::vector<double>& thresholds) {
  std::vector<double> coverage(thresholds.size(), 0.0);
  int collisions = 0;
  for (const EpisodeEvaluation& ev : evals) {
    if (!ev.t_col) continue;
    ++collisions;
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (early_warning_hit(ev, thresholds[i])) coverage[i] += 1.0;
    }
  }
  if (collisions > 0) {
    for (double& c : coverage) c /= collisions;
  }
  return coverage;
}

inline const std::vector<double>& default_thresholds() {
  static const std::vector<double> kThresholds = {0.5, 1.0, 2.0};
  return kThresholds;
}

// ---------------------------------------------------------------------------
// Rolling evaluation of a recorded episode
// ---------------------------------------------------------------------------

struct EvaluateOptions {
  int horizon = kDefaultHorizon;
  double alpha = 0.5;
  double beta = 0.5;
  std::uint64_t seed = 0;
  int max_history = 24;  // observed frames replayed to warm-start rollouts (covers max delay)
};

/// Replays a recorded episode step by step: at each step k >= L the chosen
/// method issues an H-step prediction using only frames <= k. For the
/// adaptive method a particle-filter update over the trailing window runs
/// first and the posterior mean drives the rollout.
inline EpisodeEvaluation rolling_evaluate(const std::vector<Frame>& frames,
                                          const ScenarioConfig& config,
                                          PredictMethod method,
                                          const FilterConfig& filter_config,
                                          const ControllerGains& gains,
                                          const EvaluateOptions& options = {}) {
  const int L = filter_config.window;
  if (static_cast<int>(frames.size()) < L + 1) {
    throw ContractError("episode shorter than window + 1");
  }
  EpisodeEvaluation ev;
  ev.method = method;
  for (const Frame& f : frames) {
    if (f.collision) {
      ev.t_col = f.t;
      break;
    }
  }

  FilterState fs = FilterState::create(filter_config, gains, options.seed);
  const std::int64_t t0 = frames.front().t;
  const std::int64_t last =
      ev.t_col ? *ev.t_col : frames.back().t;  // no prediction past the crash

  for (std::int64_t k = t0 + L; k < last; ++k) {
    const std::size_t idx = static_cast<std::size_t>(k - t0);
    const Frame& anchor_frame = frames[idx - L];
    WorldState anchor = world_from_frame(anchor_frame, config);

    PredictionRecord rec;
    if (method == PredictMethod::cv) {
      WorldState now = world_from_frame(frames[idx], config);
      rec = rollout_cv(now, options.horizon);
    } else {
      const std::size_t hist_begin =
          idx - L >= static_cast<std::size_t>(options.max_history)
              ? idx - L - options.max_history
              : 0;
      std::span<const Frame> history(frames.data() + hist_begin,
                                     idx - L - hist_begin);
      CognitiveParams theta_hat;  // zeros for cognition_off
      if (method == PredictMethod::adaptive) {
        TrajectoryWindow window;
        window.frames.assign(frames.begin() + (idx - L + 1),
                             frames.begin() + (idx + 1));
        theta_hat = pf_step(fs, anchor, window, history).mean;
      }
      WorldState now = world_from_frame(frames[idx], config);
      RolloutOptions opts;
      opts.perception = filter_config.rollout_perception;
      const std::size_t now_hist_begin =
          idx >= static_cast<std::size_t>(options.max_history)
              ? idx - options.max_history
              : 0;
      opts.history = std::span<const Frame>(frames.data() + now_hist_begin,
                                            idx - now_hist_begin);
      rec = rollout_adaptive(now, theta_hat, gains,
                             options.horizon,
                             mix_seed(options.seed, static_cast<std::uint64_t>(k),
                                      method == PredictMethod::adaptive ? 1 : 2),
                             opts);
    }

    if (rec.collision_flag && !ev.t_flag) ev.t_flag = k;

    // Score against the realized continuation (truncated at episode end).
    const std::size_t avail =
        std::min<std::size_t>(rec.predicted.size(), frames.size() - idx - 1);
    if (avail > 0) {
      std::vector<Frame> pred(rec.predicted.begin(),
                              rec.predicted.begin() + avail);
      std::vector<Frame> real(frames.begin() + idx + 1,
                              frames.begin() + idx + 1 + avail);
      ev.rmse.push_back(rmse_series(pred, real, options.alpha, options.beta));
    }
    ev.records.push_back(std::move(rec));
  }

  if (!ev.rmse.empty()) {
    for (const RmseTriple& r : ev.rmse) {
      ev.mean_rmse_pos += r.pos;
      ev.mean_rmse_vel += r.vel;
    }
    ev.mean_rmse_pos /= static_cast<double>(ev.rmse.size());
    ev.mean_rmse_vel /= static_cast<double>(ev.rmse.size());
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Benchmark report CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kBenchReportHeader =
    "episode,method,t_col,t_flag,lead_s,hit_0.5,hit_1,hit_2,mean_rmse_pos,"
    "mean_rmse_vel";

inline void write_bench_report(const std::vector<EpisodeEvaluation>& evals,
                               const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os << kBenchReportHeader << "\n";
    for (const EpisodeEvaluation& ev : evals) {
      os << ev.episode << ',' << method_name(ev.method) << ',';
      if (ev.t_col) os << *ev.t_col;
      os << ',';
      if (ev.t_flag) os << *ev.t_flag;
      os << ',';
      if (ev.t_col && ev.t_flag) {
        os << detail::fmt_double(static_cast<double>(*ev.t_col - *ev.t_flag) *
                                 kDt);
      }
      os << ',' << (early_warning_hit(ev, 0.5) ? 1 : 0) << ','
         << (early_warning_hit(ev, 1.0) ? 1 : 0) << ','
         << (early_warning_hit(ev, 2.0) ? 1 : 0) << ','
         << detail::fmt_double(ev.mean_rmse_pos) << ','
         << detail::fmt_double(ev.mean_rmse_vel) << "\n";
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace takeover
