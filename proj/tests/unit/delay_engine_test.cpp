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
#include <map>
#include <optional>
#include <random>

#include <gtest/gtest.h>

#include "delaylens/delay_engine.hpp"
#include "test_support.hpp"

namespace delaylens {
namespace {

using testing::d;
using testing::rec;
using testing::store_from;

// A patient with a DOB record and, optionally, a race report.
std::string patient(const std::string& id, const std::string& practice, std::optional<Date> dob,
                    std::optional<Date> report, const std::string& race = "White") {
  std::string s;
  if (dob) s += rec(id, practice, dob->str(), "DateOfBirth", "1970-01-01");
  if (report) s += rec(id, practice, report->str(), "RaceText", race);
  if (!dob && !report) s += rec(id, practice, "2018-01-01", "Visit", "x");
  return s;
}

std::string anchor(const std::string& practice, Date baseline) {
  return patient("anchor-" + practice, practice, baseline, baseline);
}

struct Built {
  EventStore store;
  RaceHarmonizer harmonizer;
  std::optional<DelayEngine> engine;
  explicit Built(const std::string& jsonl, DelayOptions opts = {}) : store(store_from(jsonl)) {
    engine.emplace(store, harmonizer, opts);
  }
  PatientIndex idx(const std::string& id) const { return *store.find_patient(id); }
};

TEST(Opportunity, DobAfterBaseline) {
  Built b(anchor("PR1", d("2017-06-01")) + patient("A", "PR1", d("2018-01-01"), std::nullopt));
  auto o = b.engine->opportunity_date("A");
  ASSERT_TRUE(o.date);
  EXPECT_EQ(*o.date, d("2018-01-01"));
  EXPECT_EQ(o.anomalies, kNoAnomaly);
}

TEST(Opportunity, BaselineAfterDob) {
  Built b(anchor("PR1", d("2018-01-01")) + patient("A", "PR1", d("2017-06-01"), std::nullopt));
  EXPECT_EQ(*b.engine->opportunity_date("A").date, d("2018-01-01"));
}

TEST(Opportunity, MissingIngredientsAreFlagged) {
  Built b(anchor("PR1", d("2018-01-01")) + patient("A", "PR1", std::nullopt, std::nullopt) +
          patient("B", "PR2", d("2018-01-01"), std::nullopt));
  auto a = b.engine->opportunity_date("A");
  EXPECT_FALSE(a.date);
  EXPECT_TRUE(a.anomalies & kNoDobRecord);
  auto bb = b.engine->opportunity_date("B");
  EXPECT_FALSE(bb.date);
  EXPECT_TRUE(bb.anomalies & kNoPracticeBaseline);
  EXPECT_FALSE(b.engine->delay("B").delay_days);
  EXPECT_THROW(b.engine->opportunity_date("nobody"), DataError);
  EXPECT_THROW(b.engine->delay("nobody"), DataError);
}

TEST(Opportunity, EarliestDobRecordUnlessSkipped) {
  std::string s = anchor("PR1", d("2016-01-01")) + patient("A", "PR1", d("2017-01-01"), std::nullopt) +
                  patient("A", "PR1", d("2017-05-01"), d("2017-06-01"));
  Built plain(s);
  EXPECT_EQ(*plain.engine->opportunity_date("A").date, d("2017-01-01"));
  Built skip(s, DelayOptions{.skip_first_dob = true});
  EXPECT_EQ(*skip.engine->opportunity_date("A").date, d("2017-05-01"));
  EXPECT_EQ(*skip.engine->delay("A").delay_days, 31);
}

TEST(Delay, Examples) {
  Built b(anchor("PR1", d("2017-06-01")) + patient("A", "PR1", d("2018-01-01"), d("2018-03-02")) +
          patient("B", "PR1", d("2018-01-01"), d("2018-01-01")) +
          patient("C", "PR1", d("2018-01-01"), d("2017-12-01")));
  const auto& a = b.engine->delay("A");
  EXPECT_EQ(*a.delay_days, 60);
  EXPECT_TRUE(a.delayed());
  const auto& bb = b.engine->delay("B");
  EXPECT_EQ(*bb.delay_days, 0);
  EXPECT_FALSE(bb.delayed());
  const auto& c = b.engine->delay("C");
  EXPECT_EQ(*c.delay_days, 0);
  EXPECT_TRUE(c.has(kReportBeforeOpportunity));
  EXPECT_EQ(*c.race_report_date, d("2017-12-01"));
}

TEST(Delay, NeverReportedHasNoDelay) {
  Built b(anchor("PR1", d("2017-06-01")) + patient("A", "PR1", d("2018-01-01"), d("2018-02-01"), "declined"));
  const auto& a = b.engine->delay("A");
  EXPECT_TRUE(a.opportunity_date);
  EXPECT_FALSE(a.race_report_date);
  EXPECT_FALSE(a.delay_days);
  EXPECT_FALSE(b.engine->group(b.idx("A")));
}

// Independent recomputation from the generated rows.
TEST(Delay, RandomStoresMatchOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    struct Truth {
      std::string practice;
      std::optional<Date> dob;
      std::optional<Date> report;
    };
    std::map<std::string, Truth> truth;
    std::string jsonl;
    Date origin = d("2016-01-01");
    std::uniform_int_distribution<int> day(0, 1500), coin(0, 3);
    for (int i = 0; i < 60; ++i) {
      std::string id = "P" + std::to_string(i);
      Truth t;
      t.practice = "PR" + std::to_string(i % 4);
      if (coin(rng) != 0) {
        int a = day(rng), b = day(rng);
        t.dob = origin + std::min(a, b);
        jsonl += rec(id, t.practice, (origin + std::max(a, b)).str(), "DateOfBirth", "1980");
        jsonl += rec(id, t.practice, t.dob->str(), "DateOfBirth", "1980");
      }
      jsonl += rec(id, t.practice, (origin + day(rng)).str(), "RaceText", "unknown");
      if (coin(rng) != 0) {
        int a = day(rng), b = day(rng);
        t.report = origin + std::min(a, b);
        jsonl += rec(id, t.practice, (origin + std::max(a, b)).str(), "RaceText", "Asian");
        jsonl += rec(id, t.practice, t.report->str(), "RaceText", "Black");
      }
      jsonl += rec(id, t.practice, (origin + day(rng)).str(), "Visit", "v");
      truth[id] = t;
    }
    std::map<std::string, Date> baseline;
    for (const auto& [id, t] : truth)
      if (t.report && (!baseline.count(t.practice) || *t.report < baseline.at(t.practice)))
        baseline.insert_or_assign(t.practice, *t.report);

    Built b(jsonl);
    for (const auto& [id, t] : truth) {
      const auto& prof = b.engine->delay(id);
      std::optional<Date> opp;
      if (t.dob && baseline.count(t.practice)) opp = std::max(*t.dob, baseline.at(t.practice));
      EXPECT_EQ(prof.opportunity_date, opp) << id;
      EXPECT_EQ(prof.race_report_date, t.report) << id;
      if (opp && t.report) {
        int want = std::max(0, *t.report - *opp);
        ASSERT_TRUE(prof.delay_days) << id;
        EXPECT_EQ(*prof.delay_days, want) << id;
        EXPECT_EQ(prof.has(kReportBeforeOpportunity), *t.report < *opp) << id;
        EXPECT_EQ(b.engine->group(b.idx(id)), AssessmentGroup::Black);
      } else {
        EXPECT_FALSE(prof.delay_days) << id;
      }
    }
  }
}

// Builds one patient per delay, all at practice PR1 with opportunity 2018-01-01.
std::string cohort_with_delays(const std::vector<std::pair<std::string, int>>& delays) {
  std::string s = anchor("PR1", d("2018-01-01"));
  int i = 0;
  for (const auto& [race, days] : delays) {
    auto id = "C" + std::to_string(i++);
    s += patient(id, "PR1", d("2018-01-01"), d("2018-01-01") + days, race);
  }
  return s;
}

std::vector<PatientIndex> non_anchor(const EventStore& store) {
  std::vector<PatientIndex> out;
  for (auto p : all_patients(store))
    if (store.patient_id(p).rfind("anchor", 0) != 0) out.push_back(p);
  return out;
}

TEST(Curves, AllZeroIsConstantOne) {
  Built b(cohort_with_delays({{"White", 0}, {"White", 0}, {"White", 0}}));
  auto pats = non_anchor(b.store);
  auto set = cumulative_curves(*b.engine, pats, 30);
  ASSERT_EQ(set.curves.size(), 1u);
  EXPECT_EQ(set.curves[0].group, AssessmentGroup::White);
  for (const auto& pt : set.curves[0].points) EXPECT_DOUBLE_EQ(pt.cumulative_fraction, 1.0);
  EXPECT_EQ(set.warnings.size(), 4u);
}

TEST(Curves, StepFunctionWithDenominatorBeyondHorizon) {
  Built b(cohort_with_delays({{"Asian", 0}, {"Asian", 30}, {"Asian", 90}}));
  auto pats = non_anchor(b.store);
  auto set = cumulative_curves(*b.engine, pats, 60);
  ASSERT_EQ(set.curves.size(), 1u);
  const auto& c = set.curves[0];
  EXPECT_EQ(c.group, AssessmentGroup::API);
  ASSERT_EQ(c.points.size(), 61u);
  EXPECT_NEAR(c.points[0].cumulative_fraction, 1.0 / 3, 1e-12);
  EXPECT_NEAR(c.points[29].cumulative_fraction, 1.0 / 3, 1e-12);
  EXPECT_NEAR(c.points[30].cumulative_fraction, 2.0 / 3, 1e-12);
  EXPECT_NEAR(c.points[60].cumulative_fraction, 2.0 / 3, 1e-12);
}

TEST(Curves, OrderedSamplesDoNotCrossAndMatchBruteForce) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> dd(0, 400);
  std::vector<std::pair<std::string, int>> delays;
  std::vector<int> white, black;
  for (int i = 0; i < 150; ++i) {
    int x = dd(rng);
    delays.push_back({"White", x});
    delays.push_back({"Black", x + 25});
    white.push_back(x);
    black.push_back(x + 25);
  }
  Built b(cohort_with_delays(delays));
  auto pats = non_anchor(b.store);
  auto set = cumulative_curves(*b.engine, pats, 500);
  ASSERT_EQ(set.curves.size(), 2u);
  const auto& cb = set.curves[0];
  const auto& cw = set.curves[1];
  ASSERT_EQ(cb.group, AssessmentGroup::Black);
  ASSERT_EQ(cw.group, AssessmentGroup::White);
  for (int day = 0; day <= 500; ++day) {
    auto frac = [&](const std::vector<int>& v) {
      return static_cast<double>(std::count_if(v.begin(), v.end(), [&](int x) { return x <= day; })) / v.size();
    };
    EXPECT_NEAR(cw.points[day].cumulative_fraction, frac(white), 1e-12);
    EXPECT_NEAR(cb.points[day].cumulative_fraction, frac(black), 1e-12);
    EXPECT_GE(cw.points[day].cumulative_fraction, cb.points[day].cumulative_fraction);
    if (day > 0) {
      EXPECT_GE(cw.points[day].cumulative_fraction, cw.points[day - 1].cumulative_fraction);
    }
  }
  auto shorter = cumulative_curves(*b.engine, pats, 100);
  for (std::size_t g = 0; g < 2; ++g)
    for (int day = 0; day <= 100; ++day)
      EXPECT_EQ(shorter.curves[g].points[day].cumulative_fraction, set.curves[g].points[day].cumulative_fraction);
  EXPECT_THROW(cumulative_curves(*b.engine, pats, -1), ContractError);
}

TEST(Summary, FractionsAndSuppression) {
  Built b(cohort_with_delays({{"White", 0}, {"White", 0}, {"White", 61}, {"White", 90}}));
  auto pats = non_anchor(b.store);
  auto rows = delay_summary(*b.engine, Scope::National, pats, 3);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].patient_count, 4u);
  EXPECT_DOUBLE_EQ(rows[0].fraction_delayed, 0.5);
  EXPECT_DOUBLE_EQ(rows[0].fraction_delay_ge_60d, 0.5);
  EXPECT_FALSE(rows[0].suppressed);

  std::vector<std::pair<std::string, int>> nine(9, {"White", 5});
  Built c(cohort_with_delays(nine));
  auto small = delay_summary(*c.engine, Scope::Practice, non_anchor(c.store));
  ASSERT_EQ(small.size(), 1u);
  EXPECT_EQ(small[0].patient_count, 9u);
  EXPECT_TRUE(small[0].suppressed);
}

TEST(Summary, NationalIsPatientWeightedMeanOfPractices) {
  std::mt19937_64 rng(5);
  std::string s;
  std::uniform_int_distribution<int> dd(0, 200), sz(3, 40);
  for (int pr = 0; pr < 12; ++pr) {
    auto practice = "PR" + std::to_string(pr);
    s += anchor(practice, d("2018-01-01"));
    int n = sz(rng);
    for (int i = 0; i < n; ++i) {
      auto id = practice + "-" + std::to_string(i);
      int x = dd(rng) < 80 ? 0 : dd(rng);
      s += patient(id, practice, d("2018-01-01"), d("2018-01-01") + x);
      s += rec(id, practice, "2018-01-01", "Geography", pr % 2 ? "CA/0001" : "NY/0002");
    }
  }
  Built b(s);
  auto pats = all_patients(b.store);
  auto national = delay_summary(*b.engine, Scope::National, pats);
  auto practices = delay_summary(*b.engine, Scope::Practice, pats);
  auto states = delay_summary(*b.engine, Scope::State, pats);
  ASSERT_EQ(national.size(), 1u);
  ASSERT_EQ(practices.size(), 12u);
  double num = 0, num60 = 0, den = 0;
  for (const auto& r : practices) {
    num += r.fraction_delayed * r.patient_count;
    num60 += r.fraction_delay_ge_60d * r.patient_count;
    den += r.patient_count;
  }
  EXPECT_EQ(den, national[0].patient_count);
  EXPECT_NEAR(num / den, national[0].fraction_delayed, 1e-12);
  EXPECT_NEAR(num60 / den, national[0].fraction_delay_ge_60d, 1e-12);
  // Anchors carry no geography.
  ASSERT_EQ(states.size(), 3u);
  EXPECT_EQ(states[0].unit, "CA");
  EXPECT_EQ(states[1].unit, "NA");
  EXPECT_EQ(states[1].patient_count, 12u);
  EXPECT_EQ(states[2].unit, "NY");
}

TEST(Summary, ParseScope) {
  EXPECT_EQ(parse_scope("STATE"), Scope::State);
  EXPECT_EQ(parse_scope("county"), std::nullopt);
}

TEST(Engine, ThreadCountDoesNotChangeResults) {
  std::string s = anchor("PR1", d("2017-01-01"));
  for (int i = 0; i < 300; ++i)
    s += patient("X" + std::to_string(i), "PR1", d("2017-01-01") + i % 50, d("2017-03-01") + (i * 7) % 300,
                 i % 3 ? "White" : "Black");
  Built one(s, DelayOptions{.threads = 1});
  Built four(s, DelayOptions{.threads = 4});
  for (auto p : all_patients(one.store)) {
    EXPECT_EQ(one.engine->delay(p).delay_days, four.engine->delay(p).delay_days);
    EXPECT_EQ(one.engine->group(p), four.engine->group(p));
  }
}

}  // namespace
}  // namespace delaylens
