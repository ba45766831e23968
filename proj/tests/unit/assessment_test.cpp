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

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>

#include <gtest/gtest.h>

#include "delaylens/assessment.hpp"
#include "test_support.hpp"

namespace delaylens {
namespace {

using testing::d;
using testing::rec;
using testing::store_from;

const OutcomeCodeSet kHba1c("hba1c", "SNOMED", {"43396009"});

struct Spec {
  std::string id;
  std::string practice = "PR1";
  std::string race = "White";  // "" never reports
  bool hispanic = false;
  int birth_year = 1970;
  std::optional<Date> dob_record = Date::from_ymd(2016, 1, 1);
  std::optional<Date> report = Date::from_ymd(2016, 1, 1);
  std::optional<Date> visit = Date::from_ymd(2018, 2, 1);
  std::optional<Date> outcome;
  std::string state = "CA";
};

std::string emit(const Spec& s) {
  std::string out;
  if (s.dob_record)
    out += rec(s.id, s.practice, s.dob_record->str(), "DateOfBirth", std::to_string(s.birth_year) + "-06-15");
  if (s.report && !s.race.empty()) {
    out += rec(s.id, s.practice, s.report->str(), "RaceText", s.race);
    if (s.hispanic) out += rec(s.id, s.practice, s.report->str(), "EthnicityText", "Hispanic or Latino");
  }
  if (s.visit) out += rec(s.id, s.practice, s.visit->str(), "Visit", "office");
  if (s.outcome) out += rec(s.id, s.practice, s.outcome->str(), "OutcomeCode", "43396009");
  out += rec(s.id, s.practice, "2015-01-01", "Geography", s.state + "/0001");
  return out;
}

struct World {
  EventStore store;
  RaceHarmonizer harmonizer;
  std::optional<DelayEngine> engine;
  explicit World(const std::vector<Spec>& specs) {
    std::string s;
    for (const auto& p : specs) s += emit(p);
    store = store_from(s);
    engine.emplace(store, harmonizer);
  }
  Cohort cohort(const CohortSpec& spec) const { return build_cohort(*engine, spec, {kHba1c}); }
};

const CohortSpec kQ1 = CohortSpec::for_quarter({2018, 1});

std::optional<AssessmentGroup> group_of(const Spec& s) {
  if (s.race.empty() || !s.report) return std::nullopt;
  if (s.hispanic) return AssessmentGroup::Hispanic;
  if (s.race == "White") return AssessmentGroup::White;
  if (s.race == "Black") return AssessmentGroup::Black;
  if (s.race == "Asian") return AssessmentGroup::API;
  if (s.race == "American Indian") return AssessmentGroup::AIAN;
  return std::nullopt;
}

std::vector<Spec> random_specs(std::mt19937_64& rng, int n, int practices) {
  const std::vector<std::string> races = {"White", "Black", "Asian", "American Indian", "Other", ""};
  std::uniform_int_distribution<int> race(0, static_cast<int>(races.size()) - 1), coin(0, 9), day(0, 2000),
      by(1990, 2004), pr(0, practices - 1);
  Date origin = d("2015-06-01");
  std::vector<Spec> out;
  for (int i = 0; i < n; ++i) {
    Spec s;
    s.id = "R" + std::to_string(i);
    s.practice = "PR" + std::to_string(pr(rng));
    s.race = races[race(rng)];
    s.hispanic = coin(rng) < 2;
    s.birth_year = by(rng);
    s.dob_record = coin(rng) == 0 ? std::nullopt : std::optional<Date>(origin + day(rng) / 2);
    s.report = coin(rng) == 0 ? std::nullopt : std::optional<Date>(origin + day(rng));
    s.visit = coin(rng) < 3 ? std::nullopt : std::optional<Date>(d("2017-10-01") + day(rng) / 8);
    s.outcome = coin(rng) < 5 ? std::nullopt : std::optional<Date>(d("2017-10-01") + day(rng) / 8);
    s.state = coin(rng) < 5 ? "CA" : "NY";
    out.push_back(s);
  }
  return out;
}

// Filter oracle written against the generating specs.
std::map<std::string, bool> expected_outcomes(const std::vector<Spec>& specs, const CohortSpec& spec) {
  std::map<std::string, Date> baseline;
  for (const auto& s : specs)
    if (group_of(s) || (s.report && s.race == "Other"))
      if (!baseline.count(s.practice) || *s.report < baseline.at(s.practice))
        baseline.insert_or_assign(s.practice, *s.report);
  auto period = spec.period();
  std::map<std::string, bool> out;
  for (const auto& s : specs) {
    if (!group_of(s)) continue;
    if (spec.quarter.year - s.birth_year < spec.min_age_years) continue;
    if (!s.dob_record || !(*s.dob_record < spec.dob_cutoff())) continue;
    if (!baseline.count(s.practice) || !(baseline.at(s.practice) < spec.practice_cutoff())) continue;
    if (spec.require_visit_in_period && !(s.visit && *s.visit >= period.start && *s.visit <= period.end)) continue;
    if (spec.scope.kind == Scope::State && s.state != spec.scope.value) continue;
    out[s.id] = s.outcome && *s.outcome >= period.start && *s.outcome <= period.end;
  }
  return out;
}

TEST(Cohort, FilterExamples) {
  std::vector<Spec> specs(8);
  for (std::size_t i = 0; i < specs.size(); ++i) specs[i].id = "P" + std::to_string(i);
  specs[0].outcome = d("2018-03-31");
  specs[1].race = "";  // never reports
  specs[2].birth_year = 2001;  // 17 in 2018
  specs[3].birth_year = 2000;  // 18 in 2018
  specs[3].outcome = d("2017-12-31");  // outside the quarter
  specs[4].dob_record = d("2018-01-01");
  specs[5].visit = d("2018-04-01");
  specs[6].practice = "LATE";
  specs[6].report = d("2018-01-01");
  specs[7].race = "Other";
  World w(specs);
  auto c = w.cohort(kQ1);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(w.store.patient_id(c.members[0].patient), "P0");
  EXPECT_EQ(c.outcomes[0][0], 1);
  EXPECT_EQ(w.store.patient_id(c.members[1].patient), "P3");
  EXPECT_EQ(c.outcomes[0][1], 0);
  const auto& dg = c.diagnostics;
  EXPECT_EQ(dg.no_mappable_race, 2u);
  EXPECT_EQ(dg.no_dob_or_underage, 1u);
  EXPECT_EQ(dg.dob_not_before_cutoff, 1u);
  EXPECT_EQ(dg.no_visit_in_period, 1u);
  EXPECT_EQ(dg.practice_not_reporting_before_cutoff, 1u);
  EXPECT_EQ(c.outcome_index("hba1c"), 0u);

  auto relaxed = kQ1;
  relaxed.require_visit_in_period = false;
  EXPECT_EQ(w.cohort(relaxed).size(), 3u);
}

TEST(Cohort, EmptyCohortCarriesDiagnostics) {
  Spec s;
  s.id = "kid";
  s.birth_year = 2010;
  World w({s});
  try {
    w.cohort(kQ1);
    FAIL() << "expected EmptyCohortError";
  } catch (const EmptyCohortError& e) {
    EXPECT_EQ(e.diagnostics().no_dob_or_underage, 1u);
    EXPECT_NE(std::string(e.what()).find("no_dob_or_underage=1"), std::string::npos) << e.what();
  }
  auto bad = kQ1;
  bad.min_age_years = -1;
  EXPECT_THROW(w.cohort(bad), ContractError);
}

TEST(Cohort, RandomStoresMatchFilterOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 15; ++trial) {
    auto specs = random_specs(rng, 300, 6);
    World w(specs);
    for (auto scope : {GeographyScope{}, GeographyScope::parse("state:NY")}) {
      auto spec = kQ1;
      spec.scope = scope;
      spec.require_visit_in_period = trial % 2 == 0;
      auto want = expected_outcomes(specs, spec);
      std::map<std::string, bool> got;
      try {
        auto c = w.cohort(spec);
        for (std::size_t i = 0; i < c.size(); ++i) got[w.store.patient_id(c.members[i].patient)] = c.outcomes[0][i];
      } catch (const EmptyCohortError&) {
      }
      EXPECT_EQ(got, want) << "trial " << trial << " scope " << scope.str();
    }
  }
}

TEST(Cohort, BirthYearForms) {
  EXPECT_EQ(birth_year("1980-02-29"), 1980);
  EXPECT_EQ(birth_year(" 1975 "), 1975);
  EXPECT_EQ(birth_year("n/a"), std::nullopt);
}

TEST(Scope, ParseAndPrint) {
  EXPECT_EQ(GeographyScope::parse("national").str(), "national");
  EXPECT_EQ(GeographyScope::parse("State:CA").str(), "state:CA");
  EXPECT_EQ(GeographyScope::parse("practice:PR7").value, "PR7");
  EXPECT_THROW(GeographyScope::parse("state:"), DataError);
  EXPECT_THROW(GeographyScope::parse("county:X"), DataError);
}

TEST(Prevalence, Examples) {
  std::vector<std::uint8_t> a = {1, 0, 0, 1}, z(7, 0), none;
  EXPECT_DOUBLE_EQ(*prevalence(a), 0.5);
  EXPECT_DOUBLE_EQ(*prevalence(z), 0.0);
  EXPECT_FALSE(prevalence(none));
  EXPECT_FALSE(prevalence(0, 0));
  std::mt19937_64 rng(1);
  std::bernoulli_distribution b(0.37);
  std::vector<std::uint8_t> flags(1000);
  long double sum = 0;
  for (auto& f : flags) {
    f = b(rng);
    sum += f;
  }
  EXPECT_NEAR(*prevalence(flags), static_cast<double>(sum / 1000), 1e-15);
}

TEST(Prevalence, WilsonInterval) {
  // Reference values for k=3, n=10 at z=1.96.
  auto [lo, hi] = wilson_interval(3, 10);
  EXPECT_NEAR(lo, 0.10779, 1e-4);
  EXPECT_NEAR(hi, 0.60322, 1e-4);
  auto [l0, h0] = wilson_interval(0, 20);
  EXPECT_DOUBLE_EQ(l0, 0.0);
  EXPECT_GT(h0, 0.0);
  EXPECT_TRUE(std::isnan(wilson_interval(0, 0).first));
}

TEST(Series, NoDelayIsConstant) {
  std::vector<Spec> specs;
  for (int i = 0; i < 20; ++i) {
    Spec s;
    s.id = "N" + std::to_string(i);
    s.race = i % 2 ? "White" : "Black";
    s.outcome = i % 3 ? std::nullopt : std::optional<Date>(d("2018-02-01"));
    specs.push_back(s);
  }
  World w(specs);
  auto c = w.cohort(kQ1);
  auto s = snapshot_series(c, 0);
  ASSERT_EQ(s.as_of.size(), 1u);
  EXPECT_EQ(s.t_initial, d("2018-04-01"));
  EXPECT_EQ(s.t_final, d("2018-04-01"));
  auto rep = error_report(s);
  EXPECT_EQ(rep.groups_used, 2u);
  EXPECT_DOUBLE_EQ(*rep.average_prevalence_error, 0.0);
}

TEST(Series, DatesAreQuarterlyThenFinal) {
  std::vector<Spec> specs(3);
  specs[0].id = "a";
  specs[1].id = "b";
  specs[1].report = d("2018-06-15");
  specs[2].id = "c";
  specs[2].report = d("2019-02-10");
  World w(specs);
  auto c = w.cohort(kQ1);
  auto s = snapshot_series(c, 0);
  std::vector<Date> want = {d("2018-04-01"), d("2018-07-01"), d("2018-10-01"), d("2019-01-01"), d("2019-02-10")};
  EXPECT_EQ(s.as_of, want);
  EXPECT_FALSE(s.truncated);
  EXPECT_EQ(s.t_final, d("2019-02-10"));

  auto capped = snapshot_series(c, 0, SeriesOptions{.max_quarters = 2});
  std::vector<Date> want_capped = {d("2018-04-01"), d("2018-07-01"), d("2018-10-01")};
  EXPECT_EQ(capped.as_of, want_capped);
  EXPECT_TRUE(capped.truncated);
}

// Recomputes each row from the store's as-of view and the harmonizer.
TEST(Series, MatchesAsOfReplayOracle) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 6; ++trial) {
    auto specs = random_specs(rng, 400, 5);
    World w(specs);
    auto spec = kQ1;
    spec.require_visit_in_period = false;
    auto c = w.cohort(spec);
    auto s = snapshot_series(c, 0);
    ASSERT_GE(s.as_of.size(), 2u);
    for (std::size_t r = 0; r < s.as_of.size(); ++r) {
      std::array<std::size_t, kGroupCount> num{}, den{};
      for (std::size_t i = 0; i < c.size(); ++i) {
        auto visible = w.store.as_of_records(c.members[i].patient, s.as_of[r]);
        auto obs = w.harmonizer.first_reported_race(visible);
        if (!obs) continue;
        auto g = group_index(*assessment_group(*obs));
        ++den[g];
        num[g] += c.outcomes[0][i];
      }
      for (std::size_t g = 0; g < kGroupCount; ++g) {
        EXPECT_EQ(s.rows[r][g].denominator, den[g]);
        EXPECT_EQ(s.rows[r][g].numerator, num[g]);
        if (r > 0) {
          EXPECT_GE(s.rows[r][g].denominator, s.rows[r - 1][g].denominator);
        }
      }
    }
    // Final row covers every member.
    std::array<std::size_t, kGroupCount> sizes{};
    for (const auto& m : c.members) ++sizes[group_index(m.group)];
    for (std::size_t g = 0; g < kGroupCount; ++g) EXPECT_EQ(s.rows.back()[g].denominator, sizes[g]);
    // The direct recompute agrees.
    std::vector<std::size_t> all(c.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto direct = series_rows(c, 0, all, s.as_of);
    for (std::size_t r = 0; r < s.rows.size(); ++r)
      for (std::size_t g = 0; g < kGroupCount; ++g) {
        EXPECT_EQ(direct[r][g].numerator, s.rows[r][g].numerator);
        EXPECT_EQ(direct[r][g].denominator, s.rows[r][g].denominator);
      }
    // Error against itself at t_final is exactly zero.
    auto self = error_report(s, s.rows.size() - 1);
    for (const auto& ge : self.groups)
      if (ge.prevalence_error) {
        EXPECT_EQ(*ge.prevalence_error, 0.0);
      }
  }
}

TEST(Series, EmptyGroupAtEarlyDateIsUndefinedOnlyThere) {
  std::vector<Spec> specs(2);
  specs[0].id = "w";
  specs[1].id = "b";
  specs[1].race = "Black";
  specs[1].report = d("2018-05-01");
  World w(specs);
  auto s = snapshot_series(w.cohort(kQ1), 0);
  auto black = group_index(AssessmentGroup::Black);
  EXPECT_FALSE(s.rows.front()[black].prevalence);
  EXPECT_TRUE(s.rows.back()[black].prevalence);
  auto rep = error_report(s);
  EXPECT_EQ(rep.groups_used, 1u);
  EXPECT_FALSE(rep.average_disparity_error);
  EXPECT_FALSE(rep.omissions.empty());
}

TEST(Errors, ArithmeticExample) {
  GroupPrevalences init{}, fin{};
  init[4] = 0.25;
  fin[4] = 0.30;
  init[2] = 0.10;
  fin[2] = 0.10;
  auto r = error_report(init, fin);
  const auto& white = r.groups[4];
  EXPECT_NEAR(*white.prevalence_error, 0.05, 1e-12);
  EXPECT_NEAR(*white.relative_absolute_error, 0.05 / 0.30, 1e-12);
  EXPECT_NEAR(*white.relative_absolute_error, 0.1667, 5e-5);
  EXPECT_EQ(r.groups_used, 2u);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.omissions.size(), 3u);
}

TEST(Errors, ZeroFinalHasNoRelativeError) {
  GroupPrevalences init{}, fin{};
  for (std::size_t g = 0; g < kGroupCount; ++g) init[g] = fin[g] = 0.1;
  fin[0] = 0.0;
  auto r = error_report(init, fin);
  EXPECT_FALSE(r.groups[0].relative_absolute_error);
  EXPECT_TRUE(r.groups[0].prevalence_error);
  EXPECT_EQ(r.groups_used, 5u);
}

TEST(Errors, FiveGroupsGiveTenPairs) {
  GroupPrevalences init{}, fin{};
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    init[g] = 0.1 * g;
    fin[g] = 0.1 * g + 0.01 * (g + 1);
  }
  auto r = error_report(init, fin);
  ASSERT_EQ(r.pairs.size(), 10u);
  double sum = 0;
  for (const auto& p : r.pairs) sum += std::abs(p.disparity_error);
  EXPECT_NEAR(*r.average_disparity_error, sum * 2.0 / (5 * 4), 1e-15);
}

// Independent reimplementation of the per-group, per-pair and averaged formulas.
TEST(Errors, RandomInputsMatchBruteForce) {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    GroupPrevalences init{}, fin{};
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      if (u(rng) < 0.15) continue;
      init[g] = u(rng);
      fin[g] = u(rng);
    }
    auto r = error_report(init, fin);
    std::vector<std::size_t> defined;
    for (std::size_t g = 0; g < kGroupCount; ++g)
      if (init[g] && fin[g]) defined.push_back(g);
    ASSERT_EQ(r.groups_used, defined.size());
    double ape = 0;
    for (auto g : defined) {
      double e = *fin[g] - *init[g];
      EXPECT_DOUBLE_EQ(*r.groups[g].prevalence_error, e);
      EXPECT_DOUBLE_EQ(*r.groups[g].relative_absolute_error, std::fabs(e) / *fin[g]);
      ape += std::fabs(e);
    }
    double ade = 0;
    int pairs = 0;
    for (std::size_t x = 0; x < defined.size(); ++x)
      for (std::size_t y = x + 1; y < defined.size(); ++y) {
        auto j = defined[x], k = defined[y];
        double di = *init[j] - *init[k], df = *fin[j] - *fin[k];
        const auto& pe = r.pairs[static_cast<std::size_t>(pairs)];
        EXPECT_EQ(pe.a, kAllGroups[j]);
        EXPECT_EQ(pe.b, kAllGroups[k]);
        EXPECT_DOUBLE_EQ(pe.disparity_initial, di);
        EXPECT_DOUBLE_EQ(pe.disparity_final, df);
        EXPECT_DOUBLE_EQ(pe.disparity_error, df - di);
        // Antisymmetry: swapping the pair flips both disparities.
        EXPECT_DOUBLE_EQ(-pe.disparity_initial, *init[k] - *init[j]);
        ade += std::fabs(df - di);
        ++pairs;
      }
    ASSERT_EQ(r.pairs.size(), static_cast<std::size_t>(pairs));
    if (defined.empty()) {
      EXPECT_FALSE(r.average_prevalence_error);
    } else {
      EXPECT_NEAR(*r.average_prevalence_error, ape / defined.size(), 1e-12);
    }
    if (pairs > 0) {
      EXPECT_NEAR(*r.average_disparity_error, ade / pairs, 1e-12);
    } else {
      EXPECT_FALSE(r.average_disparity_error);
    }
    // Relabeling the groups leaves the averages unchanged.
    GroupPrevalences ri{}, rf{};
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      ri[g] = init[kGroupCount - 1 - g];
      rf[g] = fin[kGroupCount - 1 - g];
    }
    auto rr = error_report(ri, rf);
    if (r.average_disparity_error) {
      EXPECT_NEAR(*rr.average_disparity_error, *r.average_disparity_error, 1e-12);
    }
    if (r.average_prevalence_error) {
      EXPECT_NEAR(*rr.average_prevalence_error, *r.average_prevalence_error, 1e-12);
    }
  }
}

TEST(Classify, Examples) {
  EXPECT_EQ(classify_pair(0.02, -0.01), DisparityClass::SignSwitch);
  EXPECT_EQ(classify_pair(0.05, 0.02), DisparityClass::Exacerbation);
  EXPECT_EQ(classify_pair(0.01, 0.04), DisparityClass::Minimization);
  EXPECT_EQ(classify_pair(-0.05, -0.02), DisparityClass::Exacerbation);
  EXPECT_EQ(classify_pair(0.03, -0.03), DisparityClass::SignSwitch);
  EXPECT_EQ(classify_pair(0.0, 0.02), DisparityClass::Minimization);
  EXPECT_EQ(classify_pair(0.02, 0.0), DisparityClass::Exacerbation);
  EXPECT_EQ(class_name(DisparityClass::SignSwitch), "sign_switch");
}

TEST(Classify, TieIsMinimizationAndFlagged) {
  GroupPrevalences init{}, fin{};
  init[0] = 0.3;
  init[1] = 0.2;
  fin[0] = 0.4;
  fin[1] = 0.3;
  auto r = error_report(init, fin);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0].classification, DisparityClass::Minimization);
  EXPECT_TRUE(r.pairs[0].magnitude_tie);
}

TEST(Classify, TotalOverRandomPairs) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  std::map<DisparityClass, int> freq;
  for (int i = 0; i < 10000; ++i) {
    double a = u(rng), b = u(rng);
    auto c = classify_pair(a, b);
    bool sw = (a < 0 && b > 0) || (a > 0 && b < 0);
    bool ex = !sw && std::fabs(a) > std::fabs(b) + 1e-12;
    EXPECT_EQ(c, sw ? DisparityClass::SignSwitch : ex ? DisparityClass::Exacerbation : DisparityClass::Minimization);
    ++freq[c];
  }
  EXPECT_EQ(freq[DisparityClass::SignSwitch] + freq[DisparityClass::Exacerbation] + freq[DisparityClass::Minimization],
            10000);
}

std::vector<Spec> bootstrap_specs(int seed) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
  const std::vector<std::string> races = {"White", "Black", "Asian", "American Indian"};
  std::uniform_int_distribution<int> race(0, 3), day(0, 700), coin(0, 9);
  std::vector<Spec> out;
  for (int i = 0; i < 400; ++i) {
    Spec s;
    s.id = "B" + std::to_string(i);
    s.practice = "PR" + std::to_string(i % 9);
    s.race = races[race(rng)];
    s.hispanic = coin(rng) == 0;
    s.report = coin(rng) < 6 ? d("2016-01-01") : d("2017-06-01") + day(rng);
    if (i % 9 == 0) s.report = d("2016-01-01");
    s.outcome = coin(rng) < 3 ? std::optional<Date>(d("2018-02-02")) : std::nullopt;
    out.push_back(s);
  }
  return out;
}

TEST(Bootstrap, DeterministicAndThreadIndependent) {
  World w(bootstrap_specs(1));
  auto c = w.cohort(kQ1);
  BootstrapOptions o;
  o.replicates = 30;
  o.seed = 99;
  o.threads = 1;
  auto a = bootstrap(c, 0, o);
  o.threads = 4;
  auto b = bootstrap(c, 0, o);
  ASSERT_EQ(a.replicates.size(), 30u);
  for (std::size_t r = 0; r < a.replicates.size(); ++r)
    for (std::size_t m = 0; m < a.metric_names.size(); ++m) {
      if (std::isnan(a.replicates[r][m])) {
        EXPECT_TRUE(std::isnan(b.replicates[r][m]));
      } else {
        EXPECT_EQ(a.replicates[r][m], b.replicates[r][m]);
      }
    }
  o.seed = 100;
  auto other = bootstrap(c, 0, o);
  EXPECT_NE(other.metric("average_prevalence_error").mean, a.metric("average_prevalence_error").mean);
  EXPECT_EQ(a.metric_names.size(), 4 * kGroupCount + 30 + 2 + a.as_of.size() * kGroupCount);
  EXPECT_THROW(a.metric("nope"), ContractError);
}

TEST(Bootstrap, ReplicateEqualsDirectComputationOnResample) {
  World w(bootstrap_specs(2));
  auto c = w.cohort(kQ1);
  for (auto scheme : {BootstrapScheme::TwoStage, BootstrapScheme::PatientOnly}) {
    BootstrapOptions o;
    o.replicates = 5;
    o.seed = 7;
    o.scheme = scheme;
    auto res = bootstrap(c, 0, o);
    for (std::size_t r = 0; r < o.replicates; ++r) {
      std::mt19937_64 rng(replicate_seed(o.seed, r));
      auto idx = resample_members(c, scheme, rng);
      if (scheme == BootstrapScheme::PatientOnly) {
        EXPECT_EQ(idx.size(), c.size());
      }
      auto rows = series_rows(c, 0, idx, res.as_of);
      auto direct = replicate_metrics(rows);
      ASSERT_EQ(direct.size(), res.replicates[r].size());
      for (std::size_t m = 0; m < direct.size(); ++m) {
        if (std::isnan(direct[m])) {
          EXPECT_TRUE(std::isnan(res.replicates[r][m]));
        } else {
          EXPECT_NEAR(direct[m], res.replicates[r][m], 1e-12) << res.metric_names[m];
        }
      }
    }
  }
}

TEST(Bootstrap, TwoStageKeepsPracticeBlocks) {
  World w(bootstrap_specs(3));
  auto c = w.cohort(kQ1);
  std::mt19937_64 rng(5);
  auto idx = resample_members(c, BootstrapScheme::TwoStage, rng);
  // Each drawn practice block has the practice's size; all indices in a
  // block share a practice.
  std::map<PracticeIndex, std::size_t> size;
  for (const auto& m : c.members) ++size[m.practice];
  std::size_t pos = 0;
  while (pos < idx.size()) {
    auto pr = c.members[idx[pos]].practice;
    for (std::size_t k = 0; k < size[pr]; ++k) EXPECT_EQ(c.members[idx[pos + k]].practice, pr);
    pos += size[pr];
  }
  EXPECT_EQ(pos, idx.size());
}

TEST(Bootstrap, DegenerateCohortHasZeroWidth) {
  std::vector<Spec> specs;
  for (int i = 0; i < 10; ++i) {
    Spec s;
    s.id = "D" + std::to_string(i);
    s.race = i % 2 ? "White" : "Black";
    s.outcome = d("2018-02-02");
    specs.push_back(s);
  }
  World w(specs);
  BootstrapOptions o;
  o.replicates = 20;
  o.seed = 1;
  auto res = bootstrap(w.cohort(kQ1), 0, o);
  for (const auto& name : {"prevalence_initial[White]", "prevalence_final[Black]", "average_prevalence_error"}) {
    const auto& m = res.metric(name);
    EXPECT_EQ(m.ci_low, m.ci_high) << name;
    EXPECT_EQ(m.valid, 20u);
  }
  // AIAN never appears: every replicate skips it.
  EXPECT_EQ(res.metric("prevalence_initial[AIAN]").skipped, 20u);
  EXPECT_TRUE(std::isnan(res.metric("prevalence_initial[AIAN]").mean));
}

TEST(Bootstrap, PercentileSummary) {
  std::vector<std::vector<double>> reps;
  for (int i = 0; i <= 100; ++i) reps.push_back({static_cast<double>(i), i % 2 ? std::nan("") : 1.0});
  auto s = summarize_replicates({"x", "y"}, reps);
  EXPECT_DOUBLE_EQ(s[0].ci_low, 2.5);
  EXPECT_DOUBLE_EQ(s[0].ci_high, 97.5);
  EXPECT_DOUBLE_EQ(s[0].mean, 50.0);
  EXPECT_EQ(s[1].skipped, 50u);
  EXPECT_EQ(s[1].valid, 51u);
}

std::vector<Spec> quarterly_specs(bool delayed) {
  std::vector<Spec> out;
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> day(30, 600), coin(0, 9), race(0, 1);
  for (int q = 0; q < 4; ++q) {
    Date visit = Date::from_ymd(2018, static_cast<unsigned>(3 * q + 2), 1);
    for (int i = 0; i < 60; ++i) {
      Spec s;
      s.id = "Q" + std::to_string(q) + "-" + std::to_string(i);
      s.practice = "PR" + std::to_string(i % 3);
      s.race = race(rng) ? "White" : "Black";
      s.visit = visit;
      s.dob_record = d("2016-01-01");
      bool late = delayed && coin(rng) < 5;
      s.report = late ? visit + day(rng) : d("2016-01-01");
      s.outcome = (late ? coin(rng) < 6 : coin(rng) < 2) ? std::optional<Date>(visit) : std::nullopt;
      out.push_back(s);
    }
  }
  return out;
}

TEST(Monitor, ShapeAndSameSignedErrors) {
  World w(quarterly_specs(true));
  auto quarters = quarter_range({2018, 1}, {2018, 4});
  ASSERT_EQ(quarters.size(), 4u);
  auto res = monitor(*w.engine, quarters, kHba1c);
  EXPECT_TRUE(res.errors.empty());
  std::map<std::pair<AssessmentGroup, AssessmentGroup>, int> rows;
  for (const auto& p : res.pairs) ++rows[{p.a, p.b}];
  for (const auto& [pair, n] : rows) EXPECT_EQ(n, 4);
  ASSERT_TRUE(res.selected_pair);
  EXPECT_EQ(res.selected_pair->first, AssessmentGroup::White);
  // Delayed patients carry more outcomes, so the initial estimate is low.
  for (const auto& g : res.groups) {
    if (g.initial && g.revised && (g.group == AssessmentGroup::White || g.group == AssessmentGroup::Black)) {
      EXPECT_GT(*g.revised, *g.initial) << g.quarter.str() << " " << group_name(g.group);
    }
  }
}

TEST(Monitor, ZeroDelayGivesIdenticalEstimates) {
  World w(quarterly_specs(false));
  auto res = monitor(*w.engine, quarter_range({2018, 1}, {2018, 4}), kHba1c);
  for (const auto& g : res.groups) EXPECT_EQ(g.initial, g.revised);
  for (const auto& p : res.pairs) EXPECT_EQ(p.disparity_initial, p.disparity_revised);
}

TEST(Monitor, EmptyQuarterIsReportedNotFatal) {
  World w(quarterly_specs(true));
  MonitorOptions o;
  o.pair = std::make_pair(AssessmentGroup::White, AssessmentGroup::Black);
  auto res = monitor(*w.engine, quarter_range({2018, 4}, {2019, 1}), kHba1c, o);
  ASSERT_EQ(res.errors.size(), 1u);
  EXPECT_EQ(res.errors[0].first.str(), "2019Q1");
  EXPECT_EQ(res.groups.size(), kGroupCount);
  for (const auto& p : res.pairs) EXPECT_EQ(p.selected, p.b == AssessmentGroup::Black);
}

TEST(Sweep, SizesMatchFilterOracle) {
  std::mt19937_64 rng(43);
  auto specs = random_specs(rng, 500, 5);
  World w(specs);
  auto quarters = quarter_range({2017, 3}, {2018, 4});
  auto rows = cohort_sweep(*w.engine, quarters);
  ASSERT_EQ(rows.size(), quarters.size());
  for (const auto& row : rows) {
    auto want = expected_outcomes(specs, CohortSpec::for_quarter(row.quarter));
    EXPECT_EQ(row.cohort_size, want.size()) << row.quarter.str();
    if (want.empty()) {
      EXPECT_TRUE(std::isnan(row.mean_delay_days));
    }
  }
  auto one = cohort_sweep(*w.engine, quarter_range({2018, 1}, {2018, 1}));
  EXPECT_EQ(one.size(), 1u);
}

}  // namespace
}  // namespace delaylens
