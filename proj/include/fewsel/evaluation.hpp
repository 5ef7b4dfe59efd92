#pragma once

// Reconstruction error, K-means on selected columns, and the two partition
// agreement scores (ARI, NMI) used to judge a feature subset.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fewsel/data.hpp"
#include "fewsel/matrix.hpp"
#include "fewsel/rng.hpp"

namespace fewsel {

/// Mean over rows of the squared Euclidean error.
inline double msre(const Matrix& x, const Matrix& x_hat) {
  if (!x.same_shape(x_hat)) {
    throw std::invalid_argument("msre: shape mismatch " + x.shape() + " vs " + x_hat.shape());
  }
  if (x.rows() == 0) throw std::invalid_argument("msre: no rows");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - x_hat[i];
    total += d * d;
  }
  return total / static_cast<double>(x.rows());
}

struct ClusterConfig {
  std::size_t k = 2;
  std::size_t restarts = 10;
  std::size_t max_iters = 300;
  double tol = 1e-4;  // relative inertia improvement
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1) throw std::invalid_argument("cluster.k must be >= 1");
    if (restarts < 1) throw std::invalid_argument("cluster.restarts must be >= 1");
  }
};

struct KMeansResult {
  std::vector<int> labels;
  double inertia = 0.0;
  std::size_t best_restart = 0;
  // inertia after every assignment step, one trace per restart
  std::vector<std::vector<double>> traces;
};

namespace detail {

inline double sq_dist(const Matrix& x, std::size_t i, const Matrix& c, std::size_t j) {
  double s = 0.0;
  for (std::size_t d = 0; d < x.cols(); ++d) {
    const double t = x(i, d) - c(j, d);
    s += t * t;
  }
  return s;
}

inline Matrix kmeanspp_init(const Matrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows();
  Matrix c(k, x.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.index(n);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t d = 0; d < x.cols(); ++d) c(j, d) = x(pick, d);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(x, i, c, j));
      total += d2[i];
    }
    if (j + 1 == k) break;
    if (total <= 0.0) {
      pick = rng.index(n);  // every point already sits on a centroid
      continue;
    }
    double r = rng.uniform() * total;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      r -= d2[i];
      if (r < 0.0) {
        pick = i;
        break;
      }
    }
  }
  return c;
}

inline double assign(const Matrix& x, const Matrix& c, std::vector<int>& labels) {
  double inertia = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::size_t best = 0;
    double best_d = sq_dist(x, i, c, 0);
    for (std::size_t j = 1; j < c.rows(); ++j) {
      const double d = sq_dist(x, i, c, j);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    labels[i] = static_cast<int>(best);
    inertia += best_d;
  }
  return inertia;
}

// Recompute centroids; an empty cluster takes the point farthest from its
// current centroid, which only lowers the inertia.
inline void update(const Matrix& x, Matrix& c, std::vector<int>& labels) {
  const std::size_t k = c.rows();
  std::vector<std::size_t> count(k, 0);
  Matrix sum(k, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto j = static_cast<std::size_t>(labels[i]);
    ++count[j];
    for (std::size_t d = 0; d < x.cols(); ++d) sum(j, d) += x(i, d);
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (count[j] == 0) continue;
    for (std::size_t d = 0; d < x.cols(); ++d) c(j, d) = sum(j, d) / static_cast<double>(count[j]);
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (count[j] != 0) continue;
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto own = static_cast<std::size_t>(labels[i]);
      if (count[own] < 2) continue;
      const double d = sq_dist(x, i, c, own);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far_d < 0.0) continue;
    const auto old = static_cast<std::size_t>(labels[far]);
    for (std::size_t d = 0; d < x.cols(); ++d) {
      c(old, d) = (c(old, d) * static_cast<double>(count[old]) - x(far, d)) / static_cast<double>(count[old] - 1);
      c(j, d) = x(far, d);
    }
    --count[old];
    count[j] = 1;
    labels[far] = static_cast<int>(j);
  }
}

}  // namespace detail

/// Sum of squared distances of each row to the mean of its cluster.
inline double inertia_of(const Matrix& x, const std::vector<int>& labels) {
  if (labels.size() != x.rows()) throw std::invalid_argument("inertia_of: label count does not match rows");
  std::map<int, std::pair<std::vector<double>, std::size_t>> acc;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto& [sum, n] = acc[labels[i]];
    sum.resize(x.cols(), 0.0);
    for (std::size_t d = 0; d < x.cols(); ++d) sum[d] += x(i, d);
    ++n;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto& [sum, n] = acc[labels[i]];
    for (std::size_t d = 0; d < x.cols(); ++d) {
      const double t = x(i, d) - sum[d] / static_cast<double>(n);
      total += t * t;
    }
  }
  return total;
}

/// Lloyd's algorithm from a given starting labelling (used by tests as an
/// independent bound); returns the converged inertia trace.
inline std::vector<double> lloyd(const Matrix& x, Matrix& centroids, std::vector<int>& labels, std::size_t max_iters,
                                 double tol) {
  std::vector<double> trace;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < std::max<std::size_t>(max_iters, 1); ++it) {
    const double cur = detail::assign(x, centroids, labels);
    trace.push_back(cur);
    if (std::isfinite(prev) && prev - cur <= tol * prev) break;
    prev = cur;
    detail::update(x, centroids, labels);
  }
  return trace;
}

inline KMeansResult kmeans(const Matrix& x, const ClusterConfig& cfg) {
  cfg.validate();
  if (x.rows() < cfg.k) {
    throw std::invalid_argument("kmeans: " + std::to_string(x.rows()) + " points for k = " + std::to_string(cfg.k));
  }
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Rng rng = Rng::stream(cfg.seed, r);
    Matrix c = detail::kmeanspp_init(x, cfg.k, rng);
    std::vector<int> labels(x.rows(), 0);
    std::vector<double> trace = lloyd(x, c, labels, cfg.max_iters, cfg.tol);
    const double final_inertia = trace.back();
    best.traces.push_back(std::move(trace));
    if (final_inertia < best.inertia) {
      best.inertia = final_inertia;
      best.labels = labels;
      best.best_restart = r;
    }
  }
  return best;
}

namespace detail {

inline void check_labelings(const std::vector<int>& a, const std::vector<int>& b, const char* who) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(who) + ": label lengths differ (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  if (a.size() < 2) throw std::invalid_argument(std::string(who) + ": need at least 2 points");
}

struct Contingency {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> rows;
  std::map<int, double> cols;
  double n = 0.0;
};

inline Contingency contingency(const std::vector<int>& a, const std::vector<int>& b) {
  Contingency c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.joint[{a[i], b[i]}] += 1.0;
    c.rows[a[i]] += 1.0;
    c.cols[b[i]] += 1.0;
  }
  c.n = static_cast<double>(a.size());
  return c;
}

inline double comb2(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace detail

/// Adjusted Rand index. Two single-cluster partitions score 1.
inline double ari(const std::vector<int>& a, const std::vector<int>& b) {
  detail::check_labelings(a, b, "ari");
  const auto c = detail::contingency(a, b);
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [key, v] : c.joint) index += detail::comb2(v);
  for (const auto& [key, v] : c.rows) sa += detail::comb2(v);
  for (const auto& [key, v] : c.cols) sb += detail::comb2(v);
  const double expected = sa * sb / detail::comb2(c.n);
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

/// Mutual information over the arithmetic mean of the two entropies.
inline double nmi(const std::vector<int>& a, const std::vector<int>& b) {
  detail::check_labelings(a, b, "nmi");
  const auto c = detail::contingency(a, b);
  auto entropy = [&](const std::map<int, double>& m) {
    double h = 0.0;
    for (const auto& [key, v] : m) h -= (v / c.n) * std::log(v / c.n);
    return h;
  };
  const double ha = entropy(c.rows);
  const double hb = entropy(c.cols);
  if (ha == 0.0 && hb == 0.0) return 0.0;
  double mi = 0.0;
  for (const auto& [key, v] : c.joint) {
    mi += (v / c.n) * std::log(v * c.n / (c.rows.at(key.first) * c.cols.at(key.second)));
  }
  const double denom = 0.5 * (ha + hb);
  return std::clamp(mi / denom, 0.0, 1.0);
}

inline std::vector<std::size_t> dedup_indices(std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

struct ClusterScores {
  double ari = 0.0;
  double nmi = 0.0;
};

/// K-means on the deduplicated selected columns, scored against the labels.
inline ClusterScores evaluate_selection(const Matrix& x, const std::vector<int>& labels, std::size_t class_count,
                                        const std::vector<std::size_t>& indices, ClusterConfig cfg) {
  const auto cols = dedup_indices(indices);
  if (cols.empty()) throw std::invalid_argument("evaluate_selection: empty feature set");
  for (auto c : cols) {
    if (c >= x.cols()) throw std::out_of_range("evaluate_selection: feature " + std::to_string(c) + " out of range");
  }
  if (labels.size() != x.rows()) throw std::invalid_argument("evaluate_selection: label count does not match rows");
  cfg.k = class_count;
  const auto result = kmeans(x.gather_cols(cols), cfg);
  return {ari(labels, result.labels), nmi(labels, result.labels)};
}

inline ClusterScores evaluate_selection(const TaskDataset& task, const std::vector<std::size_t>& indices,
                                        const ClusterConfig& cfg) {
  if (!task.labels) throw data_error("task '" + task.id + "' has no labels to score clustering against");
  std::size_t k = task.class_count.value_or(0);
  if (k == 0) k = static_cast<std::size_t>(*std::max_element(task.labels->begin(), task.labels->end())) + 1;
  return evaluate_selection(task.x, *task.labels, k, indices, cfg);
}

/// |dedup ∩ signal| / |dedup|.
inline double recovery_precision(const std::vector<std::size_t>& selected, const std::vector<std::size_t>& signal) {
  const auto d = dedup_indices(selected);
  if (d.empty()) throw std::invalid_argument("recovery_precision: empty selection");
  std::size_t hit = 0;
  for (auto i : d) hit += std::find(signal.begin(), signal.end(), i) != signal.end() ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(d.size());
}

}  // namespace fewsel
