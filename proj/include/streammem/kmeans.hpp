#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "streammem/common.hpp"

namespace streammem {

struct KMeansOptions {
  std::size_t max_iter = 50;
  std::size_t restarts = 10;  // independent seeded runs; the lowest objective wins
};

struct KMeansResult {
  Matrix centroids;                      // k' x d, k' = min(k, distinct points)
  std::vector<std::size_t> assignment;   // one label per input row, input order
  double objective = 0.0;                // sum of squared distances
  std::vector<double> objective_history; // after every assignment step of the winning run
  std::size_t iterations = 0;
};

/// Lloyd's algorithm from a k-means++ seeding. Rows are sorted into a
/// canonical order before seeding, so the result does not depend on the
/// input row order. Empty clusters are re-seeded at the farthest point.
/// Throws InputError on empty input, k == 0 or non-finite values.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    const KMeansOptions& opts = {});

std::size_t count_distinct_rows(const Matrix& points);

double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace streammem
