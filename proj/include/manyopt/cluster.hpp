#pragma once

// k-means (k-means++ seeding, Lloyd iterations) and silhouette scores.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "manyopt/embed.hpp"
#include "manyopt/error.hpp"
#include "manyopt/random.hpp"

namespace manyopt {

struct ClusterAssignment {
  std::vector<std::size_t> cluster_of;  // parallel to the matrix rows
  std::size_t k = 0;
  std::vector<std::vector<double>> centroids;
  std::vector<double> objective_trace;  // sum of squared distances after each assignment
  std::size_t iterations = 0;

  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> m(k);
    for (std::size_t i = 0; i < cluster_of.size(); ++i) m[cluster_of[i]].push_back(i);
    return m;
  }
};

struct KMeansOptions {
  std::size_t max_iterations = 100;
  double tolerance = 1e-6;
};

namespace detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

}  // namespace detail

/// Squared-Euclidean k-means. On unit vectors this orders points exactly as
/// cosine distance does. Empty clusters are reseeded with the point farthest
/// from its centroid. Deterministic per seed.
inline ClusterAssignment kmeans(const EmbeddingMatrix& x, std::size_t k, std::uint64_t seed,
                                const KMeansOptions& opts = {}) {
  const std::size_t n = x.size();
  if (k == 0) throw ValidationError("kmeans: K must be >= 1");
  if (k > n)
    throw ValidationError("kmeans: K=" + std::to_string(k) + " exceeds " + std::to_string(n) +
                          " rows");
  rng::Stream rs(seed);
  ClusterAssignment out;
  out.k = k;

  // k-means++ seeding
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> chosen;
  chosen.push_back(static_cast<std::size_t>(rs.below(n)));
  while (chosen.size() < k) {
    const auto& last = x.rows[chosen.back()];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], detail::sq_dist(x.rows[i], last));
      total += nearest[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      double target = rs.open_unit() * total;
      for (std::size_t i = 0; i < n; ++i) {
        target -= nearest[i];
        if (target <= 0.0 && nearest[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    if (pick == n) {
      // All remaining mass sits on duplicates: take the first unchosen row.
      for (std::size_t i = 0; i < n && pick == n; ++i)
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pick = i;
    }
    chosen.push_back(pick);
  }
  for (auto c : chosen) out.centroids.push_back(x.rows[c]);

  out.cluster_of.assign(n, 0);
  for (std::size_t iter = 0; iter < opts.max_iterations; ++iter) {
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = detail::sq_dist(x.rows[i], out.centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      out.cluster_of[i] = best;
      objective += best_d;
    }

    std::vector<std::size_t> counts(k, 0);
    for (auto c : out.cluster_of) ++counts[c];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[out.cluster_of[i]] <= 1) continue;
        const double d = detail::sq_dist(x.rows[i], out.centroids[out.cluster_of[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      objective -= far_d;
      --counts[out.cluster_of[far]];
      out.cluster_of[far] = c;
      counts[c] = 1;
    }
    out.objective_trace.push_back(objective);

    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> mean(x.dim, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        if (out.cluster_of[i] == c)
          for (std::size_t d = 0; d < x.dim; ++d) mean[d] += x.rows[i][d];
      for (double& v : mean) v /= static_cast<double>(counts[c]);
      shift = std::max(shift, std::sqrt(detail::sq_dist(mean, out.centroids[c])));
      out.centroids[c] = std::move(mean);
    }
    out.iterations = iter + 1;
    if (shift < opts.tolerance) break;
  }
  return out;
}

enum class DistanceMode { cosine, euclidean };

struct SilhouetteResult {
  std::vector<double> scores;
  double mean = 0.0;
};

/// s(i) = (b - a) / max(a, b) with a the mean distance to the rest of i's
/// class and b the smallest mean distance to another class; S is the mean of
/// s(i). Members of singleton classes score 0. Cosine mode expects unit rows.
inline SilhouetteResult silhouette(const EmbeddingMatrix& x, const std::vector<std::string>& classes,
                                   DistanceMode mode = DistanceMode::cosine) {
  const std::size_t n = x.size();
  if (classes.size() != n) throw ValidationError("silhouette: one class per row required");
  std::map<std::string, std::size_t> class_index;
  for (const auto& c : classes) class_index.emplace(c, class_index.size());
  if (class_index.size() < 2) throw ValidationError("silhouette: needs at least two classes");

  std::vector<std::size_t> cls(n);
  std::vector<std::size_t> class_size(class_index.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    cls[i] = class_index[classes[i]];
    ++class_size[cls[i]];
  }

  auto dist = [&](std::size_t i, std::size_t j) {
    if (mode == DistanceMode::euclidean) return std::sqrt(detail::sq_dist(x.rows[i], x.rows[j]));
    double dot = 0.0;
    for (std::size_t d = 0; d < x.dim; ++d) dot += x.rows[i][d] * x.rows[j][d];
    return 1.0 - dot;
  };

  SilhouetteResult out;
  out.scores.assign(n, 0.0);
  std::vector<double> sums(class_index.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (class_size[cls[i]] == 1) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sums[cls[j]] += dist(i, j);
    const double a = sums[cls[i]] / static_cast<double>(class_size[cls[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sums.size(); ++c)
      if (c != cls[i]) b = std::min(b, sums[c] / static_cast<double>(class_size[c]));
    const double denom = std::max(a, b);
    out.scores[i] = denom > 0.0 ? (b - a) / denom : 0.0;
  }
  double total = 0.0;
  for (double s : out.scores) total += s;
  out.mean = total / static_cast<double>(n);
  return out;
}

}  // namespace manyopt
