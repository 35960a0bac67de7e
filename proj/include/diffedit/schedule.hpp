#pragma once

#include <cstddef>
#include <vector>

namespace diffedit {

// Linear beta schedule over timesteps t = 1..T. alpha_bar(0) is defined as 1,
// so a DDIM step that lands on t = 0 returns the clean estimate exactly.
class NoiseSchedule {
 public:
  static constexpr int kDefaultSteps = 1000;
  static constexpr double kDefaultBetaStart = 1e-4;
  static constexpr double kDefaultBetaEnd = 0.02;

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

  // 1-based accessors; throw ConfigError outside [1, T] ([0, T] for alpha_bar).
  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;

  friend NoiseSchedule make_linear_schedule(int steps, double beta_start,
                                            double beta_end);

 private:
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;  // index 0 holds alpha_bar(0) = 1
};

// beta_t interpolated linearly with both endpoints included; alpha_bar built
// as a left-to-right running product.
NoiseSchedule make_linear_schedule(int steps = NoiseSchedule::kDefaultSteps,
                                   double beta_start = NoiseSchedule::kDefaultBetaStart,
                                   double beta_end = NoiseSchedule::kDefaultBetaEnd);

// Strictly increasing timesteps t_1 < ... < t_k = t0 for a k-step DDIM pass.
struct StepSequence {
  std::vector<int> steps;
  int t0 = 0;

  std::size_t size() const { return steps.size(); }
  int last() const { return steps.back(); }
};

// steps[i-1] = round(i * t0 / k), i = 1..k (halves round up).
StepSequence uniform_subsequence(const NoiseSchedule& schedule, int k, int t0);

}  // namespace diffedit
