//
// Copyright 2026 The delaylens Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "delaylens/error.hpp"

namespace delaylens::stats {

enum class Alternative { TwoSided, Greater, Less };

inline std::string_view alternative_name(Alternative a) {
  switch (a) {
    case Alternative::TwoSided: return "two-sided";
    case Alternative::Greater: return "greater";
    case Alternative::Less: return "less";
  }
  return "";
}

inline Alternative parse_alternative(std::string_view s) {
  if (s == "two-sided" || s == "two_sided") return Alternative::TwoSided;
  if (s == "greater") return Alternative::Greater;
  if (s == "less") return Alternative::Less;
  throw DataError("unknown alternative '" + std::string(s) + "'");
}

struct TestResult {
  double statistic = 0;
  double p_value = 1;
  Alternative alternative = Alternative::TwoSided;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  bool exact = false;
};

// Midranks (1-based) of the pooled values, plus the tie term sum(t^3 - t).
struct Ranking {
  std::vector<double> ranks;
  double tie_term = 0;
};

inline Ranking midranks(std::span<const double> values) {
  Ranking r;
  std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  r.ranks.resize(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) r.ranks[order[k]] = mid;
    double t = static_cast<double>(j - i);
    r.tie_term += t * t * t - t;
    i = j;
  }
  return r;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline constexpr std::size_t kExactThreshold = 12;

// U of sample a. "less" tests whether a tends to be smaller than b.
// Exact permutation p-values (midranks kept) when n1 + n2 <= 12.
inline TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                                 Alternative alternative = Alternative::TwoSided,
                                 bool continuity_correction = true) {
  if (a.empty() || b.empty()) throw DataError("mann_whitney_u: empty sample");
  TestResult res;
  res.alternative = alternative;
  res.n1 = a.size();
  res.n2 = b.size();
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  auto rk = midranks(pooled);
  double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  double ra = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ra += rk.ranks[i];
  double u = ra - n1 * (n1 + 1) / 2;
  res.statistic = u;

  double p_less = 1, p_greater = 1;
  std::size_t n = pooled.size();
  if (n <= kExactThreshold) {
    res.exact = true;
    constexpr double eps = 1e-9;
    std::size_t total = 0, le = 0, ge = 0;
    // Enumerate every n1-subset of positions through a bitmask.
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != a.size()) continue;
      double r = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (mask & (1u << i)) r += rk.ranks[i];
      double uu = r - n1 * (n1 + 1) / 2;
      ++total;
      if (uu <= u + eps) ++le;
      if (uu >= u - eps) ++ge;
    }
    p_less = static_cast<double>(le) / static_cast<double>(total);
    p_greater = static_cast<double>(ge) / static_cast<double>(total);
  } else {
    double nn = static_cast<double>(n);
    double mu = n1 * n2 / 2;
    double var = n1 * n2 / 12 * ((nn + 1) - rk.tie_term / (nn * (nn - 1)));
    if (var > 0) {
      double sd = std::sqrt(var);
      double cc = continuity_correction ? 0.5 : 0.0;
      p_less = normal_cdf((u - mu + cc) / sd);
      p_greater = 1 - normal_cdf((u - mu - cc) / sd);
    }
  }
  switch (alternative) {
    case Alternative::Less: res.p_value = p_less; break;
    case Alternative::Greater: res.p_value = p_greater; break;
    case Alternative::TwoSided: res.p_value = std::min(1.0, 2 * std::min(p_less, p_greater)); break;
  }
  res.p_value = std::clamp(res.p_value, 0.0, 1.0);
  return res;
}

// H with tie correction, chi-squared reference on k - 1 degrees of freedom.
inline TestResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw DataError("kruskal_wallis: need at least two groups");
  std::vector<double> pooled;
  for (const auto& g : groups) {
    if (g.empty()) throw DataError("kruskal_wallis: empty group");
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  auto rk = midranks(pooled);
  double nn = static_cast<double>(pooled.size());
  double sum = 0;
  std::size_t offset = 0;
  for (const auto& g : groups) {
    double r = 0;
    for (std::size_t i = 0; i < g.size(); ++i) r += rk.ranks[offset + i];
    offset += g.size();
    sum += r * r / static_cast<double>(g.size());
  }
  TestResult res;
  res.n1 = groups[0].size();
  res.n2 = groups[1].size();
  double denom = 1 - rk.tie_term / (nn * nn * nn - nn);
  if (denom <= 0) {
    res.statistic = 0;
    res.p_value = 1;
    return res;
  }
  double h = (12 / (nn * (nn + 1)) * sum - 3 * (nn + 1)) / denom;
  h = std::max(0.0, h);
  res.statistic = h;
  double df = static_cast<double>(groups.size() - 1);
  res.p_value = h == 0 ? 1.0 : boost::math::gamma_q(df / 2, h / 2);
  return res;
}

// Step-up adjustment; results in input order.
inline std::vector<double> benjamini_hochberg(std::span<const double> p) {
  for (double v : p)
    if (!(v >= 0 && v <= 1)) throw DataError("benjamini_hochberg: p-value outside [0,1]");
  std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  std::vector<double> out(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    double q = p[order[r]] * static_cast<double>(m) / static_cast<double>(r + 1);
    running = std::min(running, q);
    out[order[r]] = running;
  }
  return out;
}

}  // namespace delaylens::stats
