#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <vector>

#include "uled/errors.hpp"
#include "uled/rng.hpp"
#include "uled/stats.hpp"

using namespace uled;

namespace {

// Two-pass oracle over a flat sample: exact mean, then squared deviations.
struct TwoPass {
  std::vector<double> mean;
  std::vector<double> m2;  // sum of squared deviations from the mean
};

TwoPass two_pass(const std::vector<std::vector<double>>& rows) {
  const std::size_t dim = rows.front().size();
  TwoPass out{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < dim; ++j) out.mean[j] += r[j];
  }
  for (std::size_t j = 0; j < dim; ++j) out.mean[j] /= static_cast<double>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = r[j] - out.mean[j];
      out.m2[j] += d * d;
    }
  }
  return out;
}

double rel_err(double got, double want) {
  return std::fabs(got - want) / std::max(1.0, std::fabs(want));
}

}  // namespace

TEST_CASE("batch moments of a hand sample") {
  std::vector<std::vector<double>> z = {{1.0, 10.0}, {3.0, 14.0}};
  BatchMoments bm = batch_moments(z);
  CHECK(bm.mean[0] == 2.0);
  CHECK(bm.mean[1] == 12.0);
  CHECK(bm.var[0] == 1.0);  // population variance
  CHECK(bm.var[1] == 4.0);
}

TEST_CASE("batch moments rejects empty and ragged input") {
  CHECK_THROWS_AS(batch_moments({}), EmptyBatchError);
  CHECK_THROWS_AS(batch_moments({{1.0, 2.0}, {1.0}}), ShapeError);
}

TEST_CASE("two-turn worked example: [1,3] then [5,7]") {
  RunningMoments s(1);
  {
    BatchMoments bm = batch_moments({{1.0}, {3.0}});
    merge_turn(s, bm.mean, bm.var, 2);
  }
  CHECK(s.mu[0] == 2.0);
  CHECK(s.m2[0] == 2.0);  // n * population var = 2 * 1
  {
    BatchMoments bm = batch_moments({{5.0}, {7.0}});
    merge_turn(s, bm.mean, bm.var, 2);
  }
  CHECK(std::fabs(s.mu[0] - 4.0) < 1e-12);
  CHECK(std::fabs(s.m2[0] - 20.0) < 1e-12);
  CHECK(s.count == 4);
  // sqrt(20 / (4 - 1 + 1e-5)) = 2.581985...
  CHECK(std::fabs(sigma(s)[0] - std::sqrt(20.0 / (3.0 + 1e-5))) < 1e-12);
  CHECK(std::fabs(sigma(s)[0] - 2.581985) < 1e-5);
}

TEST_CASE("first-turn sigma uses the population rule plus eps") {
  RunningMoments s(2, 1e-5);
  BatchMoments bm = batch_moments({{1.0, 5.0}, {3.0, 5.0}});
  merge_turn(s, bm.mean, bm.var, 2);
  CHECK(s.turns_merged == 1);
  auto sd = sigma(s);
  CHECK(sd[0] == doctest::Approx(std::sqrt(1.0 + 1e-5)).epsilon(1e-14));
  // constant coordinate: variance zero, sigma floors at sqrt(eps)
  CHECK(sd[1] == doctest::Approx(std::sqrt(1e-5)).epsilon(1e-14));
}

TEST_CASE("streamed merge matches the two-pass oracle over the whole stream") {
  Rng rng(101);
  const std::size_t dim = 8;
  RunningMoments s(dim);
  std::vector<std::vector<double>> all;
  for (int turn = 0; turn < 40; ++turn) {
    const std::size_t n = 1 + rng.below(30);
    std::vector<std::vector<double>> batch;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row(dim);
      for (auto& x : row) x = rng.uniform(-3.0, 3.0) + (turn % 5) * 0.7;
      batch.push_back(row);
      all.push_back(row);
    }
    BatchMoments bm = batch_moments(batch);
    merge_turn(s, bm.mean, bm.var, n);
  }
  TwoPass oracle = two_pass(all);
  CHECK(s.count == all.size());
  for (std::size_t j = 0; j < dim; ++j) {
    CHECK(rel_err(s.mu[j], oracle.mean[j]) < 1e-12);
    CHECK(rel_err(s.m2[j], oracle.m2[j]) < 1e-12);
  }
}

TEST_CASE("single-row turns accumulate like a running Welford pass") {
  Rng rng(102);
  RunningMoments s(3);
  std::vector<std::vector<double>> all;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> row = {rng.uniform(), rng.uniform(-5, 5), 42.0};
    all.push_back(row);
    BatchMoments bm = batch_moments({row});
    merge_turn(s, bm.mean, bm.var, 1);
  }
  TwoPass oracle = two_pass(all);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(rel_err(s.mu[j], oracle.mean[j]) < 1e-12);
    CHECK(std::fabs(s.m2[j] - oracle.m2[j]) < 1e-9);
  }
  CHECK(s.m2[2] < 1e-9);  // constant coordinate stays at zero spread
}

TEST_CASE("merge validates dimensions and zero-sized turns") {
  RunningMoments s(2);
  CHECK_THROWS_AS(merge_turn(s, {1.0}, {0.0}, 1), ShapeError);
  CHECK_THROWS_AS(merge_turn(s, {1.0, 2.0}, {0.0, 0.0}, 0), EmptyBatchError);
}

TEST_CASE("sigma and normalize require an initialized state") {
  RunningMoments s(2);
  CHECK_FALSE(s.initialized());
  CHECK_THROWS_AS(sigma(s), UninitializedError);
  CHECK_THROWS_AS(normalize(s, std::vector<double>{1.0, 2.0}), UninitializedError);
}

TEST_CASE("normalize centers and scales coordinate-wise") {
  RunningMoments s(2);
  BatchMoments bm = batch_moments({{0.0, 10.0}, {2.0, 14.0}});
  merge_turn(s, bm.mean, bm.var, 2);
  auto sd = sigma(s);
  auto out = normalize(s, std::vector<double>{3.0, 10.0});
  CHECK(out[0] == doctest::Approx((3.0 - 1.0) / (sd[0] + s.eps)).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx((10.0 - 12.0) / (sd[1] + s.eps)).epsilon(1e-15));
  CHECK_THROWS_AS(normalize(s, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("merging is deterministic") {
  auto run = [] {
    RunningMoments s(4);
    Rng rng(7);
    for (int t = 0; t < 10; ++t) {
      std::vector<std::vector<double>> batch;
      for (int i = 0; i < 5; ++i) {
        batch.push_back({rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()});
      }
      BatchMoments bm = batch_moments(batch);
      merge_turn(s, bm.mean, bm.var, batch.size());
    }
    return s;
  };
  CHECK(run() == run());
}
