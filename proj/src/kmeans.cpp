#include "streammem/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace streammem {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

namespace {

bool row_less(const Matrix& m, std::size_t a, std::size_t b) {
  const auto ra = m.row(a), rb = m.row(b);
  return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
}

bool row_equal(const Matrix& m, std::size_t a, std::size_t b) {
  const auto ra = m.row(a), rb = m.row(b);
  return std::equal(ra.begin(), ra.end(), rb.begin());
}

struct Run {
  Matrix centroids;
  std::vector<std::size_t> labels;  // canonical order
  std::vector<double> history;
  std::size_t iterations = 0;
};

Matrix seed_plus_plus(const Matrix& pts, std::size_t k, std::mt19937_64& rng) {
  const std::size_t m = pts.rows, d = pts.cols;
  Matrix c(k, d);
  std::size_t first = static_cast<std::size_t>(unit_draw(rng) * static_cast<double>(m));
  if (first >= m) first = m - 1;
  std::copy_n(pts.row(first).begin(), d, c.row(0).begin());

  std::vector<double> best(m);
  for (std::size_t i = 0; i < m; ++i) best[i] = squared_distance(pts.row(i), c.row(0));
  for (std::size_t j = 1; j < k; ++j) {
    const double total = std::accumulate(best.begin(), best.end(), 0.0);
    std::size_t pick = m;
    if (total > 0.0) {
      const double target = unit_draw(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        if (best[i] <= 0.0) continue;
        acc += best[i];
        pick = i;
        if (acc > target) break;
      }
    }
    if (pick == m) {
      // Only reachable if every point already coincides with a centroid.
      pick = static_cast<std::size_t>(std::max_element(best.begin(), best.end()) - best.begin());
    }
    std::copy_n(pts.row(pick).begin(), d, c.row(j).begin());
    for (std::size_t i = 0; i < m; ++i) best[i] = std::min(best[i], squared_distance(pts.row(i), c.row(j)));
  }
  return c;
}

// Assigns every point to its nearest centroid (ties to the lower index).
// Returns the objective; `dist` receives each point's squared distance.
double assign(const Matrix& pts, const Matrix& c, std::vector<std::size_t>& labels,
              std::vector<double>& dist, bool& changed) {
  changed = false;
  double obj = 0.0;
  for (std::size_t i = 0; i < pts.rows; ++i) {
    std::size_t best_j = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c.rows; ++j) {
      const double dd = squared_distance(pts.row(i), c.row(j));
      if (dd < best) {
        best = dd;
        best_j = j;
      }
    }
    if (labels[i] != best_j) changed = true;
    labels[i] = best_j;
    dist[i] = best;
    obj += best;
  }
  return obj;
}

void update(const Matrix& pts, Matrix& c, const std::vector<std::size_t>& labels,
            const std::vector<double>& dist) {
  const std::size_t k = c.rows, d = c.cols;
  Matrix sum(k, d);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < pts.rows; ++i) {
    auto dst = sum.row(labels[i]);
    const auto src = pts.row(i);
    for (std::size_t t = 0; t < d; ++t) dst[t] += src[t];
    ++count[labels[i]];
  }
  std::vector<bool> taken(pts.rows, false);
  for (std::size_t j = 0; j < k; ++j) {
    if (count[j] > 0) {
      for (std::size_t t = 0; t < d; ++t) c(j, t) = sum(j, t) / static_cast<double>(count[j]);
      continue;
    }
    std::size_t far = pts.rows;
    double far_d = -1.0;
    for (std::size_t i = 0; i < pts.rows; ++i) {
      if (!taken[i] && dist[i] > far_d) {
        far_d = dist[i];
        far = i;
      }
    }
    if (far == pts.rows) continue;
    taken[far] = true;
    std::copy_n(pts.row(far).begin(), d, c.row(j).begin());
  }
}

Run lloyd(const Matrix& pts, std::size_t k, std::mt19937_64& rng, std::size_t max_iter) {
  Run run;
  run.centroids = seed_plus_plus(pts, k, rng);
  run.labels.assign(pts.rows, std::numeric_limits<std::size_t>::max());
  std::vector<double> dist(pts.rows);
  bool changed = false;
  run.history.push_back(assign(pts, run.centroids, run.labels, dist, changed));
  for (std::size_t it = 0; it < max_iter; ++it) {
    update(pts, run.centroids, run.labels, dist);
    run.history.push_back(assign(pts, run.centroids, run.labels, dist, changed));
    ++run.iterations;
    if (!changed) break;
  }
  return run;
}

}  // namespace

std::size_t count_distinct_rows(const Matrix& points) {
  std::vector<std::size_t> order(points.rows);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return row_less(points, a, b); });
  std::size_t distinct = points.rows ? 1 : 0;
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (!row_equal(points, order[i - 1], order[i])) ++distinct;
  }
  return distinct;
}

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& opts) {
  if (points.rows == 0 || points.cols == 0) throw InputError("kmeans: empty input");
  if (k == 0) throw InputError("kmeans: k must be >= 1");
  for (double v : points.data) {
    if (!std::isfinite(v)) throw InputError("kmeans: non-finite input value");
  }

  // Canonical order: lexicographic by row values, stable on ties.
  std::vector<std::size_t> order(points.rows);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return row_less(points, a, b); });
  Matrix pts(points.rows, points.cols);
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::copy_n(points.row(order[i]).begin(), points.cols, pts.row(i).begin());
    if (i == 0 || !row_equal(points, order[i - 1], order[i])) ++distinct;
  }
  const std::size_t kk = std::min(k, distinct);

  std::mt19937_64 rng(seed);
  Run best;
  bool have = false;
  for (std::size_t r = 0; r < std::max<std::size_t>(opts.restarts, 1); ++r) {
    Run run = lloyd(pts, kk, rng, opts.max_iter);
    if (!have || run.history.back() < best.history.back()) {
      best = std::move(run);
      have = true;
    }
  }

  KMeansResult out;
  out.centroids = std::move(best.centroids);
  out.objective = best.history.back();
  out.objective_history = std::move(best.history);
  out.iterations = best.iterations;
  out.assignment.resize(points.rows);
  for (std::size_t i = 0; i < order.size(); ++i) out.assignment[order[i]] = best.labels[i];
  return out;
}

}  // namespace streammem
