#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace iars {

enum class RankSumMethod { automatic, exact, normal };

struct RankSumResult {
  double u_statistic = 0.0;  // U of the first sample
  double z = 0.0;            // tie-corrected normal approximation
  double p_two_sided = 1.0;
  RankSumMethod method = RankSumMethod::normal;  // resolved: exact or normal
};

namespace detail {

// Midranks of the pooled sample in input order. Ties share the average of the
// rank positions they span; tie_term accumulates sum(t^3 - t) over tie groups.
inline std::vector<double> midranks(const std::vector<double>& pooled, double& tie_term) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> ranks(n, 0.0);
  tie_term = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && pooled[order[j]] == pooled[order[i]]) ++j;
    const double shared = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = shared;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  return ranks;
}

inline double binomial(int n, int k) {
  double v = 1.0;
  for (int i = 1; i <= k; ++i) v = v * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(v);
}

// Walks every size-n position subset of ranks, calling fn(rank_sum) once per
// labeling. Recursion over sorted positions; cost is C(N,n) leaf visits.
template <typename Fn>
void for_each_rank_sum(const std::vector<double>& ranks, int n, Fn&& fn) {
  const int N = static_cast<int>(ranks.size());
  std::function<void(int, int, double)> walk = [&](int pos, int left, double acc) {
    if (left == 0) {
      fn(acc);
      return;
    }
    if (N - pos < left) return;
    walk(pos + 1, left - 1, acc + ranks[pos]);
    walk(pos + 1, left, acc);
  };
  walk(0, n, 0.0);
}

}  // namespace detail

inline RankSumResult rank_sum_test(const std::vector<double>& x, const std::vector<double>& y,
                                   RankSumMethod method = RankSumMethod::automatic) {
  if (x.empty() || y.empty()) throw std::invalid_argument("rank_sum_test: empty sample");
  const int n = static_cast<int>(x.size());
  const int m = static_cast<int>(y.size());
  const int N = n + m;

  std::vector<double> pooled = x;
  pooled.insert(pooled.end(), y.begin(), y.end());
  double tie_term = 0.0;
  const std::vector<double> ranks = detail::midranks(pooled, tie_term);

  double r1 = 0.0;
  for (int i = 0; i < n; ++i) r1 += ranks[i];
  const double u = r1 - 0.5 * n * (n + 1);
  const double mean_u = 0.5 * n * m;

  RankSumResult result;
  result.u_statistic = u;

  // tie-corrected variance with continuity correction toward the mean
  const double var = n * m / 12.0 *
                     (N + 1 - tie_term / (static_cast<double>(N) * (N - 1)));
  if (var > 0.0) {
    const double shift = std::abs(u - mean_u) <= 0.5 ? 0.0 : std::abs(u - mean_u) - 0.5;
    result.z = (u >= mean_u ? shift : -shift) / std::sqrt(var);
  }

  RankSumMethod resolved = method;
  if (resolved == RankSumMethod::automatic)
    resolved = N <= 20 ? RankSumMethod::exact : RankSumMethod::normal;
  result.method = resolved;

  if (resolved == RankSumMethod::exact) {
    const double total = detail::binomial(N, n);
    if (total > 2e7)
      throw std::invalid_argument("rank_sum_test: exact enumeration too large for n+m = " +
                                  std::to_string(N));
    const double d_obs = std::abs(u - mean_u);
    const double base = 0.5 * n * (n + 1);
    std::int64_t hits = 0;
    detail::for_each_rank_sum(ranks, n, [&](double rank_sum) {
      if (std::abs(rank_sum - base - mean_u) >= d_obs - 1e-12) ++hits;
    });
    result.p_two_sided = static_cast<double>(hits) / total;
  } else {
    result.p_two_sided = var > 0.0 ? std::erfc(std::abs(result.z) / std::sqrt(2.0)) : 1.0;
  }
  result.p_two_sided = std::clamp(result.p_two_sided, 0.0, 1.0);
  return result;
}

}  // namespace iars
