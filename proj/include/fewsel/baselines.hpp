#pragma once

// Non-learned selectors: Laplacian Score over a symmetric kNN heat-kernel
// graph, plus random and top-variance floors.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewsel/matrix.hpp"
#include "fewsel/rng.hpp"

namespace fewsel {

struct LSConfig {
  std::size_t k_neighbors = 5;
  double heat_t = 1.0;
};

inline const std::vector<double>& ls_heat_grid() {
  static const std::vector<double> grid{0.1, 1.0, 10.0, 100.0};
  return grid;
}

namespace detail {

// Neighbour order: distance, then row contents, then index. Ties on content
// only arise for identical rows, whose choice does not change any score.
inline bool row_less(const Matrix& x, std::size_t a, std::size_t b) {
  for (std::size_t d = 0; d < x.cols(); ++d) {
    if (x(a, d) != x(b, d)) return x(a, d) < x(b, d);
  }
  return a < b;
}

}  // namespace detail

/// Symmetric (union) kNN graph with heat-kernel weights.
inline Matrix knn_heat_graph(const Matrix& x, const LSConfig& cfg) {
  const std::size_t n = x.rows();
  if (cfg.k_neighbors < 1 || cfg.k_neighbors >= n) {
    throw std::invalid_argument("laplacian_score: k_neighbors = " + std::to_string(cfg.k_neighbors) +
                                " needs 1 <= k < instances (" + std::to_string(n) + ")");
  }
  if (!(cfg.heat_t > 0.0)) throw std::invalid_argument("laplacian_score: heat_t must be positive");
  Matrix d2(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const double t = x(i, c) - x(j, c);
        s += t * t;
      }
      d2(i, j) = d2(j, i) = s;
    }
  }
  std::vector<char> edge(n * n, 0);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.k_neighbors), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (d2(i, a) != d2(i, b)) return d2(i, a) < d2(i, b);
                        return detail::row_less(x, a, b);
                      });
    for (std::size_t r = 0; r < cfg.k_neighbors; ++r) {
      edge[i * n + order[r]] = 1;
      edge[order[r] * n + i] = 1;
    }
  }
  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (edge[i * n + j]) w(i, j) = std::exp(-d2(i, j) / cfg.heat_t);
  return w;
}

/// One score per feature; smaller is more relevant. Degenerate features
/// (weighted variance below 1e-12) score +inf.
inline std::vector<double> laplacian_score(const Matrix& x, const LSConfig& cfg) {
  const Matrix w = knn_heat_graph(x, cfg);
  const std::size_t n = x.rows();
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) deg[i] += w(i, j);
  const double vol = std::accumulate(deg.begin(), deg.end(), 0.0);

  std::vector<double> scores(x.cols(), std::numeric_limits<double>::infinity());
  std::vector<double> f(n);
  for (std::size_t r = 0; r < x.cols(); ++r) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x(i, r) * deg[i];
    mean = vol > 0.0 ? mean / vol : 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      f[i] = x(i, r) - mean;
      den += f[i] * f[i] * deg[i];
    }
    if (den < 1e-12) continue;
    double num = 0.0;  // f'Lf = sum_{i<j} w_ij (f_i - f_j)^2
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (w(i, j) != 0.0) num += w(i, j) * (f[i] - f[j]) * (f[i] - f[j]);
    scores[r] = num / den;
  }
  return scores;
}

/// First k indices by score; stable, so ties go to the lower index.
inline std::vector<std::size_t> select_by_score(const std::vector<double>& scores, std::size_t k, bool ascending) {
  if (k > scores.size()) {
    throw std::invalid_argument("select_by_score: K = " + std::to_string(k) + " exceeds " +
                                std::to_string(scores.size()) + " features");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return ascending ? scores[a] < scores[b] : scores[a] > scores[b];
  });
  idx.resize(k);
  return idx;
}

inline std::vector<std::size_t> random_selection(Rng& rng, std::size_t features, std::size_t k) {
  if (k > features) throw std::invalid_argument("random_selection: K exceeds feature count");
  return rng.sample_without_replacement(features, k);
}

/// Sample variance (n-1 denominator; 0 for a single row).
inline std::vector<double> column_variance(const Matrix& x) {
  std::vector<double> var(x.cols(), 0.0);
  if (x.rows() < 2) return var;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) mean += x(i, c);
    mean /= static_cast<double>(x.rows());
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) s += (x(i, c) - mean) * (x(i, c) - mean);
    var[c] = s / static_cast<double>(x.rows() - 1);
  }
  return var;
}

inline std::vector<std::size_t> variance_selection(const Matrix& x, std::size_t k) {
  return select_by_score(column_variance(x), k, false);
}

struct LSCandidate {
  LSConfig cfg;
  std::vector<std::size_t> indices;
};

/// LS-T: target support only, k in {1,3,5} (those below the support size)
/// crossed with the heat grid. The caller picks the best candidate on test.
inline std::vector<LSCandidate> ls_t_candidates(const Matrix& support, std::size_t budget) {
  std::vector<LSCandidate> out;
  for (std::size_t k : {1, 3, 5}) {
    if (k >= support.rows()) continue;
    for (double t : ls_heat_grid()) {
      LSConfig cfg{k, t};
      out.push_back({cfg, select_by_score(laplacian_score(support, cfg), budget, true)});
    }
  }
  if (out.empty()) throw std::invalid_argument("LS-T: support of " + std::to_string(support.rows()) + " rows is too small");
  return out;
}

/// LS-ST: target support stacked on pooled source instances, k = 5.
inline std::vector<LSCandidate> ls_st_candidates(const Matrix& support, const Matrix& pooled_sources,
                                                 std::size_t budget) {
  if (pooled_sources.cols() != support.cols()) throw std::invalid_argument("LS-ST: feature count mismatch");
  Matrix all(support.rows() + pooled_sources.rows(), support.cols());
  std::copy(support.data().begin(), support.data().end(), all.data().begin());
  std::copy(pooled_sources.data().begin(), pooled_sources.data().end(),
            all.data().begin() + static_cast<std::ptrdiff_t>(support.size()));
  std::vector<LSCandidate> out;
  for (double t : ls_heat_grid()) {
    LSConfig cfg{5, t};
    out.push_back({cfg, select_by_score(laplacian_score(all, cfg), budget, true)});
  }
  return out;
}

}  // namespace fewsel
