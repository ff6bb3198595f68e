#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "takeover/core.hpp"
#include "takeover/env.hpp"
#include "takeover/policy.hpp"
#include "takeover/rng.hpp"

namespace takeover {

/// Rebuilds a full world from one observed frame plus the scenario the
/// episode was generated under (geometry and limits are not in the CSV).
inline WorldState world_from_frame(const Frame& frame,
                                   const ScenarioConfig& config) {
  WorldState w;
  w.config = config;
  w.t = frame.t;
  w.ego = frame.ego;
  w.background = frame.others;
  w.workzone = {0, config.workzone_x, config.workzone_end()};
  w.terminated = frame.collision ? Termination::crash : Termination::running;
  return w;
}

enum class PerceptionMode {
  noisy,     // perception noise drawn from a derived deterministic stream
  expected,  // noise disabled; sigma enters only through the Kalman gain
};

struct RolloutOptions {
  PerceptionMode perception = PerceptionMode::noisy;
  /// Observed frames immediately preceding the anchor, oldest first. Used
  /// to warm-start the perception tracks and the delayed-decision pipeline
  /// before simulation begins.
  std::span<const Frame> history = {};
};

/// Closed-loop rollout of `steps` decision steps from `anchor` under a
/// fixed theta. Deterministic given (anchor, theta, gains, seed, options).
/// If the rollout terminates early the final state is frozen and repeated
/// for the remaining frames.
inline std::vector<Frame> rollout_window(const WorldState& anchor,
                                         const CognitiveParams& theta,
                                         const ControllerGains& gains,
                                         int steps, std::uint64_t seed,
                                         const RolloutOptions& options = {}) {
  Rng rng = derive_rng(seed, 0);
  PolicyState ps;
  const bool noisy = options.perception == PerceptionMode::noisy;

  // Warm start: replay the decision pipeline over the observed history so
  // the delay buffer holds plausible in-flight decisions at the anchor.
  for (const Frame& f : options.history) {
    const WorldState hw = world_from_frame(f, anchor.config);
    (void)act(ps, hw, theta, gains, rng, noisy);
  }

  std::vector<Frame> out;
  out.reserve(steps);
  WorldState world = anchor;
  for (int s = 0; s < steps; ++s) {
    if (world.terminated != Termination::running) {
      Frame frozen;
      frozen.t = (out.empty() ? anchor.t : out.back().t) + 1;
      frozen.ego = world.ego;
      frozen.others = world.background;
      frozen.collision = world.terminated == Termination::crash;
      out.push_back(std::move(frozen));
      continue;
    }
    const Action a = act(ps, world, theta, gains, rng, noisy);
    world = step(world, a);
    Frame f;
    f.t = world.t;
    f.ego = world.ego;
    f.others = world.background;
    f.action = a;
    f.collision = world.terminated == Termination::crash;
    out.push_back(std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Episode generation (synthetic corpora)
// ---------------------------------------------------------------------------

/// Uniform prior draw over the cognitive parameter box, rejecting pairs
/// with sigma0 > sigma_max.
inline CognitiveParams sample_theta(Rng& rng) {
  CognitiveParams p;
  do {
    p.sigma0 = rng.uniform(0.0, CognitiveParams::kSigma0Max);
    p.sigma_max = rng.uniform(0.0, CognitiveParams::kSigmaMaxMax);
  } while (p.sigma0 > p.sigma_max);
  p.c = rng.uniform(0.0, CognitiveParams::kCMax);
  p.d = rng.uniform(0.0, CognitiveParams::kDMax);
  return p;
}

inline constexpr int kThetaRefreshSteps = 5;

struct EpisodeOptions {
  bool fixed_theta = false;            // hold theta constant all episode
  std::optional<CognitiveParams> theta;  // starting / fixed value
  int max_steps = 400;
  PerceptionMode perception = PerceptionMode::noisy;
};

struct Episode {
  std::vector<Frame> frames;             // frame t carries the action taken at t
  std::vector<CognitiveParams> theta_trace;  // one entry per frame
  Termination outcome = Termination::running;
  ScenarioConfig config;
};

/// Simulates one post-takeover episode under the bounded-rational policy.
/// In drifting mode theta is redrawn from the priors every 5 decision steps
/// and held piecewise-constant in between.
inline Episode simulate_episode(const ScenarioConfig& config,
                                const ControllerGains& gains,
                                const EpisodeOptions& options,
                                std::uint64_t seed) {
  Episode ep;
  ep.config = config;
  WorldState world = make_scenario(config);
  PolicyState ps;
  Rng theta_rng = derive_rng(seed, 1);
  Rng noise_rng = derive_rng(seed, 2);

  CognitiveParams theta =
      options.theta ? *options.theta : sample_theta(theta_rng);

  for (int k = 0; k < options.max_steps; ++k) {
    if (!options.fixed_theta && k > 0 && k % kThetaRefreshSteps == 0) {
      theta = sample_theta(theta_rng);
    }
    const Action executed =
        act(ps, world, theta, gains, noise_rng,
            options.perception == PerceptionMode::noisy);

    Frame f;
    f.t = world.t;
    f.ego = world.ego;
    f.others = world.background;
    f.action = executed;
    f.collision = false;
    ep.frames.push_back(std::move(f));
    ep.theta_trace.push_back(theta);

    world = step(world, executed);
    if (world.terminated != Termination::running) {
      Frame last;
      last.t = world.t;
      last.ego = world.ego;
      last.others = world.background;
      last.collision = world.terminated == Termination::crash;
      ep.frames.push_back(std::move(last));
      ep.theta_trace.push_back(theta);
      break;
    }
  }
  ep.outcome = world.terminated;
  return ep;
}

// Theta trace CSV: t,sigma0,sigma_max,c,d
inline void write_theta_trace(const Episode& ep,
                              const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os << "t,sigma0,sigma_max,c,d\n";
    for (std::size_t i = 0; i < ep.frames.size(); ++i) {
      const CognitiveParams& p = ep.theta_trace[i];
      os << ep.frames[i].t << ',' << detail::fmt_double(p.sigma0) << ','
         << detail::fmt_double(p.sigma_max) << ',' << detail::fmt_double(p.c)
         << ',' << detail::fmt_double(p.d) << "\n";
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace takeover
