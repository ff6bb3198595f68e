#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "takeover/core.hpp"
#include "takeover/error.hpp"
#include "takeover/rollout.hpp"
#include "takeover/rng.hpp"

namespace takeover {

struct Particle {
  CognitiveParams theta;
  double log_weight = 0.0;
};

using ParticleSet = std::vector<Particle>;

struct MeasurementSigma {
  double x = 1.0;
  double y = 0.5;
  double vx = 1.0;
  double vy = 0.5;
};

struct FilterConfig {
  int particle_count = 20;
  int window = kDefaultWindow;
  std::array<double, 4> process_noise = {0.05, 0.25, 0.5, 1.0};
  MeasurementSigma sigma;
  double ess_threshold_fraction = 0.5;
  PerceptionMode rollout_perception = PerceptionMode::noisy;
  int warmstart_frames = 24;  // observed frames replayed before each rollout (covers max delay)

  void validate() const {
    if (particle_count < 2) throw ConfigError("particle_count must be >= 2");
    if (window < 1) throw ConfigError("window must be >= 1");
    for (double q : process_noise) {
      if (q < 0.0) throw ConfigError("process noise must be non-negative");
    }
    if (sigma.x <= 0 || sigma.y <= 0 || sigma.vx <= 0 || sigma.vy <= 0) {
      throw ConfigError("measurement stddevs must be positive");
    }
    if (ess_threshold_fraction <= 0 || ess_threshold_fraction > 1) {
      throw ConfigError("ess_threshold_fraction must be in (0, 1]");
    }
  }
};

// ---------------------------------------------------------------------------
// Initialization: Latin hypercube over the parameter box
// ---------------------------------------------------------------------------

/// N particles stratified per dimension (one sample per 1/N-width stratum),
/// uniform weights. The sigma0/sigma_max pairing is order-aligned so the
/// sigma0 <= sigma_max constraint can always be satisfied within strata.
inline ParticleSet init_particles(const FilterConfig& config, Rng& rng) {
  config.validate();
  const int n = config.particle_count;
  const std::array<double, 4> hi = {
      CognitiveParams::kSigma0Max, CognitiveParams::kSigmaMaxMax,
      CognitiveParams::kCMax, CognitiveParams::kDMax};

  std::array<std::vector<int>, 4> strata;
  std::array<std::vector<double>, 4> samples;
  for (int dim = 0; dim < 4; ++dim) {
    strata[dim].resize(n);
    std::iota(strata[dim].begin(), strata[dim].end(), 0);
    // Fisher-Yates with the shared stream.
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform() * (i + 1));
      std::swap(strata[dim][i], strata[dim][std::min(j, i)]);
    }
    samples[dim].resize(n);
    for (int i = 0; i < n; ++i) {
      const double width = hi[dim] / n;
      samples[dim][i] = (strata[dim][i] + rng.uniform()) * width;
    }
  }

  // Pair sigma0 and sigma_max by ascending stratum so the constraint is
  // feasible; only the lowest-aligned strata can still collide, and those
  // are resampled inside their own strata.
  std::vector<int> order0(n), order1(n);
  std::iota(order0.begin(), order0.end(), 0);
  order1 = order0;
  std::sort(order0.begin(), order0.end(), [&](int a, int b) {
    return samples[0][a] < samples[0][b];
  });
  std::sort(order1.begin(), order1.end(), [&](int a, int b) {
    return samples[1][a] < samples[1][b];
  });

  ParticleSet particles(n);
  const double lw = -std::log(static_cast<double>(n));
  for (int i = 0; i < n; ++i) {
    Particle& p = particles[i];
    double s0 = samples[0][order0[i]];
    double smax = samples[1][order1[i]];
    const int stratum0 = strata[0][order0[i]];
    const int stratum1 = strata[1][order1[i]];
    int guard = 0;
    while (s0 > smax && guard++ < 1000) {
      s0 = (stratum0 + rng.uniform()) * hi[0] / n;
      smax = (stratum1 + rng.uniform()) * hi[1] / n;
    }
    p.theta.sigma0 = std::min(s0, smax);
    p.theta.sigma_max = smax;
    p.theta.c = samples[2][i];
    p.theta.d = samples[3][i];
    p.log_weight = lw;
  }
  return particles;
}

// ---------------------------------------------------------------------------
// Recursion pieces
// ---------------------------------------------------------------------------

/// Gaussian random-walk propagation, clamped to bounds with sigma0
/// re-projected below sigma_max. Weights unchanged.
inline void propagate(ParticleSet& particles,
                      const std::array<double, 4>& process_noise, Rng& rng) {
  for (Particle& p : particles) {
    for (int dim = 0; dim < 4; ++dim) {
      p.theta[dim] += process_noise[dim] * rng.gauss();
    }
    p.theta = p.theta.clamped();
  }
}

/// Window log-likelihood: closed-loop rollout of L steps from the anchor
/// under theta, scored against the observed ego (x, y, vx, vy) under a
/// diagonal Gaussian. Deterministic given seed.
inline double window_loglik(const WorldState& anchor,
                            const TrajectoryWindow& observed,
                            const CognitiveParams& theta,
                            const ControllerGains& gains,
                            const MeasurementSigma& sigma, std::uint64_t seed,
                            const RolloutOptions& options = {}) {
  if (observed.frames.empty()) throw ContractError("empty observation window");
  if (!observed.contiguous()) {
    throw ContractError("observation window is not contiguous");
  }
  if (observed.frames.front().t != anchor.t + 1) {
    throw ContractError("anchor does not precede the observation window");
  }
  const int L = static_cast<int>(observed.frames.size());
  const std::vector<Frame> predicted =
      rollout_window(anchor, theta, gains, L, seed, options);

  constexpr double kLog2Pi = 1.8378770664093455;
  double loglik = 0.0;
  auto score = [&](double obs, double pred, double sd) {
    const double z = (obs - pred) / sd;
    loglik += -0.5 * (kLog2Pi + z * z) - std::log(sd);
  };
  for (int s = 0; s < L; ++s) {
    const VehicleState& o = observed.frames[s].ego;
    const VehicleState& p = predicted[s].ego;
    score(o.x, p.x, sigma.x);
    score(o.y, p.y, sigma.y);
    score(o.vx, p.vx, sigma.vx);
    score(o.vy, p.vy, sigma.vy);
  }
  return loglik;
}

/// The analytic value window_loglik attains at zero residual.
inline double loglik_normalizer(const MeasurementSigma& sigma, int window) {
  constexpr double kLog2Pi = 1.8378770664093455;
  const double per_step = -0.5 * kLog2Pi * 4 - std::log(sigma.x) -
                          std::log(sigma.y) - std::log(sigma.vx) -
                          std::log(sigma.vy);
  return per_step * window;
}

/// Geometric-mean weight update: log w += loglik / L, then normalization
/// in log space. An all-(-inf) update resets to uniform weights.
/// Returns true when the degenerate fallback fired.
inline bool reweight(ParticleSet& particles, const std::vector<double>& logliks,
                     int window) {
  if (logliks.size() != particles.size()) {
    throw ContractError("one log-likelihood per particle required");
  }
  for (std::size_t i = 0; i < particles.size(); ++i) {
    if (std::isnan(logliks[i])) {
      throw FilterError("NaN log-likelihood for particle " +
                        std::to_string(i));
    }
    particles[i].log_weight += logliks[i] / window;
  }
  double max_lw = -std::numeric_limits<double>::infinity();
  for (const Particle& p : particles) max_lw = std::max(max_lw, p.log_weight);
  if (!std::isfinite(max_lw)) {
    const double lw = -std::log(static_cast<double>(particles.size()));
    for (Particle& p : particles) p.log_weight = lw;
    return true;
  }
  double sum = 0.0;
  for (const Particle& p : particles) sum += std::exp(p.log_weight - max_lw);
  const double log_norm = max_lw + std::log(sum);
  for (Particle& p : particles) p.log_weight -= log_norm;
  return false;
}

inline std::vector<double> weights_of(const ParticleSet& particles) {
  std::vector<double> w(particles.size());
  for (std::size_t i = 0; i < particles.size(); ++i) {
    w[i] = std::exp(particles[i].log_weight);
  }
  return w;
}

/// Effective sample size 1 / sum w^2, in [1, N] for normalized weights.
inline double ess(const std::vector<double>& weights) {
  double sum_sq = 0.0;
  for (double w : weights) sum_sq += w * w;
  return 1.0 / sum_sq;
}

/// Low-variance systematic resampling: one uniform offset, strided CDF
/// inversion, weights reset to 1/N.
inline void systematic_resample(ParticleSet& particles, Rng& rng) {
  const std::size_t n = particles.size();
  const std::vector<double> w = weights_of(particles);
  const double u0 = rng.uniform() / static_cast<double>(n);

  ParticleSet offspring;
  offspring.reserve(n);
  double cumulative = w[0];
  std::size_t i = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double u = u0 + static_cast<double>(k) / static_cast<double>(n);
    while (u > cumulative && i + 1 < n) cumulative += w[++i];
    offspring.push_back(particles[i]);
  }
  const double lw = -std::log(static_cast<double>(n));
  for (Particle& p : offspring) p.log_weight = lw;
  particles = std::move(offspring);
}

struct PosteriorSummary {
  CognitiveParams mean;
  std::array<double, 4> variance = {0, 0, 0, 0};
  int d_rounded = 0;
  double ess = 0.0;
  bool resampled = false;
};

/// Weighted mean and variance of the particle set.
inline PosteriorSummary posterior_summary(const ParticleSet& particles) {
  PosteriorSummary s;
  const std::vector<double> w = weights_of(particles);
  for (std::size_t i = 0; i < particles.size(); ++i) {
    for (int dim = 0; dim < 4; ++dim) {
      s.mean[dim] += w[i] * particles[i].theta[dim];
    }
  }
  for (std::size_t i = 0; i < particles.size(); ++i) {
    for (int dim = 0; dim < 4; ++dim) {
      const double dv = particles[i].theta[dim] - s.mean[dim];
      s.variance[dim] += w[i] * dv * dv;
    }
  }
  s.d_rounded = s.mean.delay_steps();
  s.ess = ess(w);
  return s;
}

// ---------------------------------------------------------------------------
// Full rolling-window recursion
// ---------------------------------------------------------------------------

struct FilterState {
  FilterConfig config;
  ControllerGains gains;
  ParticleSet particles;
  std::uint64_t seed = 0;
  std::int64_t updates = 0;

  static FilterState create(const FilterConfig& config,
                            const ControllerGains& gains, std::uint64_t seed) {
    FilterState st;
    st.config = config;
    st.gains = gains;
    st.seed = seed;
    Rng rng = derive_rng(seed, 10);
    st.particles = init_particles(config, rng);
    return st;
  }
};

/// One prediction-update cycle over a rolling window:
/// propagate -> per-particle window likelihood -> reweight -> ESS-gated
/// systematic resampling -> posterior summary.
inline PosteriorSummary pf_step(FilterState& state, const WorldState& anchor,
                                const TrajectoryWindow& window,
                                std::span<const Frame> history = {}) {
  state.config.validate();
  Rng walk_rng = derive_rng(state.seed, 20 + state.updates);
  propagate(state.particles, state.config.process_noise, walk_rng);

  std::vector<double> logliks(state.particles.size());
  for (std::size_t i = 0; i < state.particles.size(); ++i) {
    RolloutOptions opts;
    opts.perception = state.config.rollout_perception;
    opts.history = history;
    const std::uint64_t rollout_seed =
        mix_seed(state.seed, static_cast<std::uint64_t>(anchor.t), i);
    logliks[i] =
        window_loglik(anchor, window, state.particles[i].theta, state.gains,
                      state.config.sigma, rollout_seed, opts);
  }
  reweight(state.particles, logliks, static_cast<int>(window.frames.size()));

  PosteriorSummary before = posterior_summary(state.particles);
  bool resampled = false;
  if (before.ess <
      state.config.ess_threshold_fraction * state.particles.size()) {
    Rng rs_rng = derive_rng(state.seed, 1000 + state.updates);
    systematic_resample(state.particles, rs_rng);
    resampled = true;
  }
  ++state.updates;

  PosteriorSummary summary = posterior_summary(state.particles);
  summary.ess = before.ess;  // report pre-resampling diversity
  summary.resampled = resampled;
  return summary;
}

// ---------------------------------------------------------------------------
// Posterior trace CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kPosteriorTraceHeader =
    "t,mean_sigma0,mean_sigmax,mean_c,mean_d,var_sigma0,var_sigmax,var_c,"
    "var_d,ess,resampled";

struct PosteriorTraceRow {
  std::int64_t t = 0;
  PosteriorSummary summary;
};

inline void write_posterior_trace(const std::vector<PosteriorTraceRow>& rows,
                                  const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os << kPosteriorTraceHeader << "\n";
    for (const PosteriorTraceRow& r : rows) {
      os << r.t;
      for (int dim = 0; dim < 4; ++dim) {
        os << ',' << detail::fmt_double(r.summary.mean[dim]);
      }
      for (int dim = 0; dim < 4; ++dim) {
        os << ',' << detail::fmt_double(r.summary.variance[dim]);
      }
      os << ',' << detail::fmt_double(r.summary.ess) << ','
         << (r.summary.resampled ? 1 : 0) << "\n";
    }
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<PosteriorTraceRow> read_posterior_trace(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(is, line) ||
      (line != kPosteriorTraceHeader &&
       line != std::string(kPosteriorTraceHeader) + "\r")) {
    throw ParseError("unexpected posterior trace header");
  }
  std::vector<PosteriorTraceRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = detail::split_csv_line(line);
    if (cols.size() != 11) {
      throw ParseError("posterior trace line " + std::to_string(lineno) +
                       ": expected 11 columns");
    }
    PosteriorTraceRow r;
    try {
      r.t = std::stoll(cols[0]);
      for (int dim = 0; dim < 4; ++dim) {
        r.summary.mean[dim] = std::stod(cols[1 + dim]);
        r.summary.variance[dim] = std::stod(cols[5 + dim]);
      }
      r.summary.ess = std::stod(cols[9]);
      r.summary.resampled = cols[10] == "1";
    } catch (const std::exception&) {
      throw ParseError("posterior trace line " + std::to_string(lineno) +
                       ": malformed row");
    }
    r.summary.d_rounded = r.summary.mean.delay_steps();
    rows.push_back(r);
  }
  return rows;
}

}  // namespace takeover
