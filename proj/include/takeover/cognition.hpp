#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>

#include "takeover/core.hpp"
#include "takeover/error.hpp"
#include "takeover/rng.hpp"

namespace takeover {

inline constexpr double kRangeFar = 150.0;  // m, saturation range

/// Range-dependent perceptual noise with Weber-Fechner saturation:
/// min(sqrt(sigma0^2 + (k*r)^2), sigma_max) with k chosen so the curve
/// reaches sigma_max exactly at r_far.
inline double sigma_x(double r, double sigma0, double sigma_max,
                      double r_far = kRangeFar) {
  if (sigma0 > sigma_max) throw DomainError("sigma0 exceeds sigma_max");
  if (r < 0.0) throw DomainError("negative range");
  if (r >= r_far) return sigma_max;
  const double k2 = (sigma_max * sigma_max - sigma0 * sigma0) / (r_far * r_far);
  return std::min(std::sqrt(sigma0 * sigma0 + k2 * r * r), sigma_max);
}

/// Observed range: truth plus zero-mean Gaussian noise, clamped at 0.
inline double perturb_range(double r_true, const CognitiveParams& params,
                            Rng& rng) {
  const double sd = sigma_x(r_true, params.sigma0, params.sigma_max);
  if (sd == 0.0) return r_true;
  return std::max(0.0, r_true + sd * rng.gauss());
}

/// Scalar posterior over the range to one target.
struct RangeTrack {
  int target_id = 0;
  double mean = 0.0;
  double variance = 1.0;
  std::int64_t last_update = -1;

  bool initialized() const { return last_update >= 0; }
};

inline constexpr double kDefaultProcessVar = 0.25;  // m^2 per step

/// Scalar Kalman predict + update. Posterior variance is strictly below
/// the prior-plus-process variance whenever meas_var is finite.
inline RangeTrack kalman_update(RangeTrack track, double z, double meas_var,
                                double process_var, double predicted_motion) {
  if (meas_var <= 0.0) throw DomainError("meas_var must be positive");
  if (process_var < 0.0 || track.variance <= 0.0) {
    throw DomainError("non-positive variance");
  }
  track.mean += predicted_motion;
  track.variance += process_var;
  const double gain = track.variance / (track.variance + meas_var);
  track.mean += gain * (z - track.mean);
  track.variance *= (1.0 - gain);
  return track;
}

/// Inverse time-to-arrival: closing speed over range, zero when opening.
inline double inverse_tau(double range, double closing_speed) {
  if (range <= 0.0) throw DomainError("inverse_tau requires positive range");
  return closing_speed > 0.0 ? closing_speed / range : 0.0;
}

/// Looming-aversion penalty: -c*tanh(inv_tau) while closing, 0 otherwise.
inline double looming_reward(double c, double inv_tau, double closing_speed) {
  if (closing_speed <= 0.0) return 0.0;
  return -c * std::tanh(inv_tau);
}

/// FIFO action buffer implementing a fixed integer delay. While warming up
/// it returns neutral actions, matching the no-input interval right after
/// takeover.
class DelayBuffer {
 public:
  DelayBuffer() = default;
  explicit DelayBuffer(int delay_steps) { reset(delay_steps); }

  void reset(int delay_steps) {
    delay_ = std::max(0, delay_steps);
    queue_.clear();
  }

  /// Prefills with previously executed actions, oldest first. At most the
  /// last delay_steps entries are retained.
  void prefill(const std::vector<Action>& history) {
    queue_.assign(history.begin(), history.end());
    while (static_cast<int>(queue_.size()) > delay_) queue_.pop_front();
  }

  int delay_steps() const { return delay_; }

  /// Pushes the newly decided action and pops the one decided delay_steps
  /// ago; neutral (0,0) while the queue is still filling.
  Action push(const Action& a) {
    if (delay_ == 0) return a;
    queue_.push_back(a);
    if (static_cast<int>(queue_.size()) > delay_) {
      Action out = queue_.front();
      queue_.pop_front();
      return out;
    }
    return Action{};
  }

 private:
  int delay_ = 0;
  std::deque<Action> queue_;
};

inline Action delay_apply(DelayBuffer& buffer, const Action& a) {
  return buffer.push(a);
}

}  // namespace takeover
