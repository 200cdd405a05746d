#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <vector>

#include "iars/stats.hpp"

using iars::RankSumMethod;
using iars::rank_sum_test;

namespace {

// Oracle midranks via a sort-free quadratic count; deliberately different from
// the library's sort-based implementation.
std::vector<double> oracle_ranks(const std::vector<double>& pooled) {
  std::vector<double> r(pooled.size());
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    double below = 0, equal = 0;
    for (double v : pooled) {
      if (v < pooled[i]) ++below;
      if (v == pooled[i]) ++equal;
    }
    r[i] = below + 0.5 * (equal + 1);
  }
  return r;
}

// Oracle exact two-sided p by iterating every bitmask of pooled positions.
double oracle_exact_p(const std::vector<double>& x, const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  const int N = n + static_cast<int>(y.size());
  REQUIRE(N <= 20);
  std::vector<double> pooled = x;
  pooled.insert(pooled.end(), y.begin(), y.end());
  const auto ranks = oracle_ranks(pooled);
  const double mean = 0.5 * n * (N - n) + 0.5 * n * (n + 1);
  double r_obs = 0;
  for (int i = 0; i < n; ++i) r_obs += ranks[i];
  long hits = 0, total = 0;
  for (std::uint32_t mask = 0; mask < (1u << N); ++mask) {
    if (std::popcount(mask) != n) continue;
    ++total;
    double r = 0;
    for (int i = 0; i < N; ++i)
      if (mask & (1u << i)) r += ranks[i];
    if (std::abs(r - mean) >= std::abs(r_obs - mean) - 1e-12) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<double> random_sample(std::mt19937_64& rng, int count, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(count);
  for (double& e : v) e = dist(rng);
  return v;
}

}  // namespace

TEST_CASE("separated samples give the textbook exact p") {
  auto r = rank_sum_test({1, 2, 3}, {4, 5, 6}, RankSumMethod::exact);
  CHECK(r.u_statistic == 0.0);
  CHECK(r.p_two_sided == Catch::Approx(0.1).margin(1e-15));
  CHECK(r.method == RankSumMethod::exact);
}

TEST_CASE("identical samples are maximally insignificant") {
  auto exact = rank_sum_test({1, 2, 3}, {1, 2, 3}, RankSumMethod::exact);
  CHECK(exact.p_two_sided == 1.0);
  auto normal = rank_sum_test({1, 2, 3}, {1, 2, 3}, RankSumMethod::normal);
  CHECK(normal.p_two_sided == 1.0);
  CHECK(normal.z == 0.0);

  // every pooled value equal: variance collapses to zero
  auto flat = rank_sum_test({5, 5}, {5, 5, 5}, RankSumMethod::normal);
  CHECK(flat.p_two_sided == 1.0);
  CHECK(rank_sum_test({5, 5}, {5, 5, 5}, RankSumMethod::exact).p_two_sided == 1.0);
}

TEST_CASE("exact p matches a bitmask enumeration oracle") {
  std::mt19937_64 rng(404);
  for (int trial = 0; trial < 40; ++trial) {
    auto x = random_sample(rng, 4, 0, 10);
    auto y = random_sample(rng, 5, 2, 12);
    if (trial % 2 == 0) {
      // integer-valued samples to force ties through the midrank path
      for (double& v : x) v = std::floor(v);
      for (double& v : y) v = std::floor(v);
    }
    auto r = rank_sum_test(x, y, RankSumMethod::exact);
    INFO("trial " << trial);
    CHECK(r.p_two_sided == Catch::Approx(oracle_exact_p(x, y)).margin(1e-12));
    // denominator is C(9,4): the reported p times it must be a whole count
    const double scaled = r.p_two_sided * 126.0;
    CHECK(std::abs(scaled - std::round(scaled)) < 1e-9);
  }
}

TEST_CASE("labeling enumerator visits exactly C(N,n) subsets") {
  for (auto [N, n] : std::vector<std::pair<int, int>>{{6, 3}, {9, 4}, {12, 6}, {12, 1}}) {
    std::vector<double> ranks(N);
    for (int i = 0; i < N; ++i) ranks[i] = i + 1;
    long count = 0;
    iars::detail::for_each_rank_sum(ranks, n, [&](double) { ++count; });
    CHECK(static_cast<double>(count) == iars::detail::binomial(N, n));
  }
}

TEST_CASE("p depends only on ranks") {
  std::mt19937_64 rng(77);
  for (auto method : {RankSumMethod::exact, RankSumMethod::normal}) {
    auto x = random_sample(rng, 6, 0.1, 4);
    auto y = random_sample(rng, 7, 0.5, 5);
    auto cube = [](std::vector<double> v) {
      for (double& e : v) e = e * e * e;
      return v;
    };
    auto r = rank_sum_test(x, y, method);
    auto rt = rank_sum_test(cube(x), cube(y), method);
    CHECK(r.p_two_sided == rt.p_two_sided);
    CHECK(r.u_statistic == rt.u_statistic);
  }
}

TEST_CASE("two-sided p is symmetric in the sample order") {
  std::mt19937_64 rng(99);
  for (auto method : {RankSumMethod::exact, RankSumMethod::normal}) {
    auto x = random_sample(rng, 5, 0, 3);
    auto y = random_sample(rng, 8, 1, 4);
    auto fwd = rank_sum_test(x, y, method);
    auto rev = rank_sum_test(y, x, method);
    CHECK(fwd.p_two_sided == Catch::Approx(rev.p_two_sided).margin(1e-12));
    CHECK(rev.u_statistic == Catch::Approx(5.0 * 8.0 - fwd.u_statistic).margin(1e-12));
  }
}

TEST_CASE("normal approximation tracks the exact test at n=m=8") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    // distinct values: uniform draws collide with probability 0
    auto x = random_sample(rng, 8, 0, 1);
    auto y = random_sample(rng, 8, 0.15, 1.15);
    auto ex = rank_sum_test(x, y, RankSumMethod::exact);
    auto ap = rank_sum_test(x, y, RankSumMethod::normal);
    INFO("trial " << trial << " exact " << ex.p_two_sided << " normal " << ap.p_two_sided);
    CHECK(std::abs(ex.p_two_sided - ap.p_two_sided) <= 0.02);
  }
}

TEST_CASE("auto method switches on pooled size") {
  std::mt19937_64 rng(5);
  auto small = rank_sum_test(random_sample(rng, 10, 0, 1), random_sample(rng, 10, 0, 1));
  CHECK(small.method == RankSumMethod::exact);
  auto large = rank_sum_test(random_sample(rng, 10, 0, 1), random_sample(rng, 11, 0, 1));
  CHECK(large.method == RankSumMethod::normal);
}

TEST_CASE("normal p agrees with a Monte Carlo permutation oracle at n=m=30") {
  std::mt19937_64 rng(31337);
  auto x = random_sample(rng, 30, 0, 1);
  auto y = random_sample(rng, 30, 0.25, 1.25);
  auto r = rank_sum_test(x, y);
  REQUIRE(r.method == RankSumMethod::normal);

  std::vector<double> pooled = x;
  pooled.insert(pooled.end(), y.begin(), y.end());
  double tie_term = 0;
  auto ranks = iars::detail::midranks(pooled, tie_term);
  double r_obs = 0;
  for (int i = 0; i < 30; ++i) r_obs += ranks[i];
  const double mean = 0.5 * 30 * 61;
  long hits = 0;
  const int permutations = 100000;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(ranks.begin(), ranks.end(), rng);
    double s = 0;
    for (int i = 0; i < 30; ++i) s += ranks[i];
    if (std::abs(s - mean) >= std::abs(r_obs - mean) - 1e-12) ++hits;
  }
  const double p_mc = static_cast<double>(hits) / permutations;
  INFO("normal " << r.p_two_sided << " monte carlo " << p_mc);
  CHECK(std::abs(r.p_two_sided - p_mc) <= 0.02);
}

TEST_CASE("tie-corrected variance matches a direct computation") {
  // pooled: 1 1 2 2 2 3 -> tie groups 2, 3, 1
  const std::vector<double> x = {1, 2, 2}, y = {1, 2, 3};
  auto r = rank_sum_test(x, y, RankSumMethod::normal);
  const double tie = (8 - 2) + (27 - 3);
  const double var = 9.0 / 12.0 * (7 - tie / (6.0 * 5.0));
  // ranks: 1.5 1.5 4 4 4 6; R1 = 1.5+4+4 = 9.5; U = 9.5-6 = 3.5
  const double z = -(std::abs(3.5 - 4.5) - 0.5) / std::sqrt(var);
  CHECK(r.u_statistic == 3.5);
  CHECK(r.z == Catch::Approx(z).margin(1e-12));
  CHECK(r.p_two_sided == Catch::Approx(std::erfc(std::abs(z) / std::sqrt(2.0))).margin(1e-12));
}

TEST_CASE("rank sum input validation") {
  CHECK_THROWS_AS(rank_sum_test({}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(rank_sum_test({1.0}, {}), std::invalid_argument);
  // forced exact on a pooled size whose enumeration would explode
  std::vector<double> big(40);
  for (int i = 0; i < 40; ++i) big[i] = i;
  CHECK_THROWS_AS(rank_sum_test(big, big, RankSumMethod::exact), std::invalid_argument);
}
