#include "uled/stats.hpp"

#include <cmath>

#include "uled/errors.hpp"

namespace uled {

BatchMoments batch_moments(const std::vector<std::vector<double>>& z) {
  if (z.empty()) throw EmptyBatchError("batch_moments: empty batch");
  const std::size_t dim = z[0].size();
  for (const auto& row : z) {
    if (row.size() != dim) throw ShapeError("batch_moments: ragged batch");
  }
  const double n = static_cast<double>(z.size());
  BatchMoments out;
  out.mean.assign(dim, 0.0);
  out.var.assign(dim, 0.0);
  for (const auto& row : z) {
    for (std::size_t j = 0; j < dim; ++j) out.mean[j] += row[j];
  }
  for (std::size_t j = 0; j < dim; ++j) out.mean[j] /= n;
  for (const auto& row : z) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = row[j] - out.mean[j];
      out.var[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < dim; ++j) out.var[j] /= n;
  return out;
}

void merge_turn(RunningMoments& s, const std::vector<double>& mean,
                const std::vector<double>& var, std::uint64_t n) {
  if (n == 0) throw EmptyBatchError("merge_turn: empty turn");
  if (mean.size() != s.dim || var.size() != s.dim) {
    throw ShapeError("merge_turn: moment dim mismatch");
  }
  if (s.count == 0) {
    const double nd = static_cast<double>(n);
    for (std::size_t j = 0; j < s.dim; ++j) {
      s.mu[j] = mean[j];
      s.m2[j] = nd * var[j];
    }
    s.count = n;
    s.turns_merged = 1;
    return;
  }
  const double big_n = static_cast<double>(s.count);  // pre-merge total
  const double nd = static_cast<double>(n);
  const double total = big_n + nd;
  for (std::size_t j = 0; j < s.dim; ++j) {
    const double delta = mean[j] - s.mu[j];
    s.m2[j] += nd * var[j] + (big_n * nd / total) * delta * delta;
    s.mu[j] += (nd / total) * delta;
  }
  s.count += n;
  s.turns_merged += 1;
}

std::vector<double> sigma(const RunningMoments& s) {
  if (s.count == 0) throw UninitializedError("sigma: no turns merged");
  std::vector<double> out(s.dim);
  const double cnt = static_cast<double>(s.count);
  if (s.turns_merged == 1) {
    // One merged turn: the batch's own population variance, regularized.
    for (std::size_t j = 0; j < s.dim; ++j) {
      out[j] = std::sqrt(s.m2[j] / cnt + s.eps);
    }
  } else {
    for (std::size_t j = 0; j < s.dim; ++j) {
      out[j] = std::sqrt(s.m2[j] / (cnt - 1.0 + s.eps));
    }
  }
  return out;
}

std::vector<double> normalize(const RunningMoments& s, std::span<const double> z) {
  if (s.count == 0) throw UninitializedError("normalize: no turns merged");
  if (z.size() != s.dim) throw ShapeError("normalize: input dim mismatch");
  const std::vector<double> sd = sigma(s);
  std::vector<double> out(s.dim);
  for (std::size_t j = 0; j < s.dim; ++j) {
    out[j] = (z[j] - s.mu[j]) / (sd[j] + s.eps);
  }
  return out;
}

}  // namespace uled
