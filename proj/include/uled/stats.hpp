#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace uled {

// Lifelong normalization state for one editable module. Mergeable running
// moments over the stream of editing features: mu is the running mean, m2
// the accumulated squared deviations, count the total feature rows seen.
// turns_merged distinguishes the first-turn sigma rule from the general one.
struct RunningMoments {
  std::size_t dim = 0;
  std::vector<double> mu;
  std::vector<double> m2;
  std::uint64_t count = 0;
  std::uint64_t turns_merged = 0;
  double eps = 1e-5;

  explicit RunningMoments(std::size_t dim_ = 0, double eps_ = 1e-5)
      : dim(dim_), mu(dim_, 0.0), m2(dim_, 0.0), eps(eps_) {}

  bool initialized() const { return count > 0; }
  bool operator==(const RunningMoments&) const = default;
};

struct BatchMoments {
  std::vector<double> mean;
  std::vector<double> var;  // population variance (divide by n)
};

// Mean and population variance of a non-empty batch of same-dim vectors.
BatchMoments batch_moments(const std::vector<std::vector<double>>& z);

// Folds one turn's batch moments into the running state. First turn
// initializes mu <- mean, m2 <- n * var. Later turns use the parallel
// merge with all fractional terms computed from the pre-merge count.
void merge_turn(RunningMoments& s, const std::vector<double>& mean,
                const std::vector<double>& var, std::uint64_t n);

// Per-coordinate running standard deviation. After a single merged turn
// this is sqrt(m2 / count + eps); afterwards sqrt(m2 / (count - 1 + eps)).
std::vector<double> sigma(const RunningMoments& s);

// (z - mu) / (sigma + eps), coordinate-wise. Requires initialized state.
std::vector<double> normalize(const RunningMoments& s, std::span<const double> z);

}  // namespace uled
