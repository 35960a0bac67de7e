#include "diffedit/schedule.hpp"

#include <string>

#include "diffedit/error.hpp"

namespace diffedit {

NoiseSchedule make_linear_schedule(int steps, double beta_start,
                                   double beta_end) {
  if (steps < 2) throw ConfigError("schedule: T must be >= 2, got " + std::to_string(steps));
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1, got [" +
                      std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
  }
  NoiseSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  const auto n = static_cast<std::size_t>(steps);
  s.beta_.resize(n);
  s.alpha_.resize(n);
  s.alpha_bar_.resize(n + 1);
  s.alpha_bar_[0] = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(n - 1);
    s.beta_[i] = beta_start + (beta_end - beta_start) * frac;
    s.alpha_[i] = 1.0 - s.beta_[i];
    s.alpha_bar_[i + 1] = s.alpha_bar_[i] * s.alpha_[i];
  }
  return s;
}

namespace {
void check_t(int t, int lo, int hi, const char* what) {
  if (t < lo || t > hi) {
    throw ConfigError(std::string(what) + ": timestep " + std::to_string(t) +
                      " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}
}  // namespace

double NoiseSchedule::beta(int t) const {
  check_t(t, 1, steps(), "beta");
  return beta_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha(int t) const {
  check_t(t, 1, steps(), "alpha");
  return alpha_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_t(t, 0, steps(), "alpha_bar");
  return alpha_bar_[static_cast<std::size_t>(t)];
}

StepSequence uniform_subsequence(const NoiseSchedule& schedule, int k, int t0) {
  if (t0 < 1 || t0 > schedule.steps()) {
    throw ConfigError("subsequence: t0 = " + std::to_string(t0) + " outside [1, " +
                      std::to_string(schedule.steps()) + "]");
  }
  if (k < 1 || k > t0) {
    throw ConfigError("subsequence: need 1 <= k <= t0, got k = " + std::to_string(k) +
                      ", t0 = " + std::to_string(t0));
  }
  StepSequence seq;
  seq.t0 = t0;
  seq.steps.reserve(static_cast<std::size_t>(k));
  const long long kk = k;
  for (long long i = 1; i <= kk; ++i) {
    const auto step = static_cast<int>((2 * i * t0 + kk) / (2 * kk));
    if (!seq.steps.empty() && step <= seq.steps.back()) {
      throw ConfigError("subsequence: steps " + std::to_string(seq.steps.back()) +
                        " and " + std::to_string(step) + " collide after rounding");
    }
    seq.steps.push_back(step);
  }
  return seq;
}

}  // namespace diffedit
