#pragma once

// Independent reference implementations for the metric tests. They follow
// the textbook definitions directly and are slow on purpose.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "fewsel/matrix.hpp"

namespace oracle {

using fewsel::Matrix;

/// ARI from explicit pair agreement counts.
inline double ari(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  double both = 0, in_a = 0, in_b = 0, pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      both += sa && sb;
      in_a += sa;
      in_b += sb;
      pairs += 1;
    }
  const double expected = in_a * in_b / pairs;
  const double max_index = 0.5 * (in_a + in_b);
  if (max_index == expected) return 1.0;
  return (both - expected) / (max_index - expected);
}

/// NMI with arithmetic-mean normalisation from explicit probabilities.
inline double nmi(const std::vector<int>& a, const std::vector<int>& b) {
  const double n = static_cast<double>(a.size());
  const int ka = *std::max_element(a.begin(), a.end()) + 1;
  const int kb = *std::max_element(b.begin(), b.end()) + 1;
  // Integer counts first so that a constant labeling has probability exactly 1.
  std::vector<double> pa(ka, 0), pb(kb, 0), pab(ka * kb, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1;
    pb[b[i]] += 1;
    pab[a[i] * kb + b[i]] += 1;
  }
  for (double& p : pa) p /= n;
  for (double& p : pb) p /= n;
  for (double& p : pab) p /= n;
  double ha = 0, hb = 0, mi = 0;
  for (double p : pa)
    if (p > 0) ha -= p * std::log(p);
  for (double p : pb)
    if (p > 0) hb -= p * std::log(p);
  for (int i = 0; i < ka; ++i)
    for (int j = 0; j < kb; ++j) {
      const double p = pab[i * kb + j];
      if (p > 0) mi += p * std::log(p / (pa[i] * pb[j]));
    }
  if (ha == 0 && hb == 0) return 0.0;
  return std::clamp(mi / ((ha + hb) / 2), 0.0, 1.0);
}

/// Calls f on every labeling of n points with labels in [0, k).
inline void for_each_labeling(std::size_t n, int k, const std::function<void(const std::vector<int>&)>& f) {
  std::vector<int> v(n, 0);
  while (true) {
    f(v);
    std::size_t i = 0;
    while (i < n && ++v[i] == k) v[i++] = 0;
    if (i == n) return;
  }
}

/// Laplacian Score through dense matrices: L = D - W, f~ = f - (f'D1 / 1'D1) 1,
/// score = f~' L f~ / f~' D f~. The graph is the union of exact kNN lists.
inline std::vector<double> laplacian_score(const Matrix& x, std::size_t k, double t) {
  const std::size_t n = x.rows(), m = x.cols();
  auto dist2 = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t c = 0; c < m; ++c) s += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
    return s;
  };
  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) others.push_back(j);
    std::sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) { return dist2(i, a) < dist2(i, b); });
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t j = others[r];
      w(i, j) = w(j, i) = std::exp(-dist2(i, j) / t);
    }
  }
  Matrix d(n, n), l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d(i, i) += w(i, j);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) l(i, j) = d(i, j) - w(i, j);

  auto quad = [&](const Matrix& a, const std::vector<double>& u, const std::vector<double>& v) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) s += u[i] * a(i, j) * v[j];
    return s;
  };
  const std::vector<double> ones(n, 1.0);
  std::vector<double> scores(m);
  for (std::size_t r = 0; r < m; ++r) {
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i) f[i] = x(i, r);
    const double shift = quad(d, f, ones) / quad(d, ones, ones);
    for (double& v : f) v -= shift;
    scores[r] = quad(l, f, f) / quad(d, f, f);
  }
  return scores;
}

}  // namespace oracle
