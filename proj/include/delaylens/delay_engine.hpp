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
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "delaylens/date.hpp"
#include "delaylens/error.hpp"
#include "delaylens/event_store.hpp"
#include "delaylens/parallel.hpp"
#include "delaylens/race_harmonizer.hpp"

namespace delaylens {

enum DelayAnomaly : std::uint8_t {
  kNoAnomaly = 0,
  kReportBeforeOpportunity = 1 << 0,
  kNoDobRecord = 1 << 1,
  kNoPracticeBaseline = 1 << 2,
};

struct DelayProfile {
  PatientIndex patient = 0;
  std::optional<Date> opportunity_date;
  std::optional<Date> race_report_date;
  std::optional<std::int32_t> delay_days;  // clamped at 0
  std::uint8_t anomalies = kNoAnomaly;

  bool has(DelayAnomaly a) const { return (anomalies & a) != 0; }
  bool delayed() const { return delay_days && *delay_days > 0; }
};

struct Opportunity {
  std::optional<Date> date;
  std::uint8_t anomalies = kNoAnomaly;
};

struct DelayOptions {
  // Ignore each patient's first DOB timestamp (intake-visit robustness check).
  bool skip_first_dob = false;
  unsigned threads = 0;
};

// Per-patient reporting delays over an immutable store. The opportunity date
// is the later of the patient's first DOB timestamp and the first race report
// anywhere in the patient's practice (the patient's own report included).
class DelayEngine {
 public:
  DelayEngine(const EventStore& store, const RaceHarmonizer& harmonizer, DelayOptions options = {})
      : store_(&store), options_(options) {
    std::size_t n = store.patient_count();
    first_report_.resize(n);
    group_.resize(n);
    dob_.resize(n);
    parallel_for(n, options.threads, [&](std::size_t i) {
      auto p = static_cast<PatientIndex>(i);
      auto recs = store.records(p);
      first_report_[i] = harmonizer.first_reported_race(recs);
      if (first_report_[i]) group_[i] = assessment_group(*first_report_[i]);
      int seen = 0;
      for (const auto& r : recs) {
        if (r.kind != RecordKind::DateOfBirth) continue;
        if (options.skip_first_dob && seen++ == 0) continue;
        dob_[i] = r.event_date;
        break;
      }
    });
    baseline_.resize(store.practice_count());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& rep = first_report_[i];
      if (!rep) continue;
      auto& b = baseline_[rep->practice];
      if (!b || rep->report_date < *b) b = rep->report_date;
    }
    profiles_.resize(n);
    parallel_for(n, options.threads, [&](std::size_t i) { profiles_[i] = compute(static_cast<PatientIndex>(i)); });
  }

  const EventStore& store() const { return *store_; }
  const DelayOptions& options() const { return options_; }

  const std::optional<RaceObservation>& first_report(PatientIndex p) const { return first_report_.at(p); }
  std::optional<AssessmentGroup> group(PatientIndex p) const { return group_.at(p); }
  std::optional<Date> first_dob_record(PatientIndex p) const { return dob_.at(p); }
  std::optional<Date> practice_baseline(PracticeIndex pr) const {
    return pr < baseline_.size() ? baseline_[pr] : std::nullopt;
  }

  Opportunity opportunity_date(PatientIndex p) const {
    Opportunity o;
    auto dob = dob_.at(p);
    auto base = practice_baseline(store_->home_practice(p));
    if (!dob) o.anomalies |= kNoDobRecord;
    if (!base) o.anomalies |= kNoPracticeBaseline;
    if (dob && base) o.date = std::max(*dob, *base);
    return o;
  }

  Opportunity opportunity_date(std::string_view patient_id) const {
    auto p = store_->find_patient(patient_id);
    if (!p) throw DataError("unknown patient '" + std::string(patient_id) + "'");
    return opportunity_date(*p);
  }

  const DelayProfile& delay(PatientIndex p) const { return profiles_.at(p); }
  const DelayProfile& delay(std::string_view patient_id) const {
    auto p = store_->find_patient(patient_id);
    if (!p) throw DataError("unknown patient '" + std::string(patient_id) + "'");
    return profiles_[*p];
  }
  const std::vector<DelayProfile>& profiles() const { return profiles_; }

 private:
  DelayProfile compute(PatientIndex p) const {
    DelayProfile d;
    d.patient = p;
    auto opp = opportunity_date(p);
    d.opportunity_date = opp.date;
    d.anomalies = opp.anomalies;
    if (first_report_[p]) d.race_report_date = first_report_[p]->report_date;
    if (d.opportunity_date && d.race_report_date) {
      auto days = *d.race_report_date - *d.opportunity_date;
      if (days < 0) {
        d.anomalies |= kReportBeforeOpportunity;
        days = 0;
      }
      d.delay_days = days;
    }
    return d;
  }

  const EventStore* store_;
  DelayOptions options_;
  std::vector<std::optional<RaceObservation>> first_report_;
  std::vector<std::optional<AssessmentGroup>> group_;
  std::vector<std::optional<Date>> dob_;
  std::vector<std::optional<Date>> baseline_;
  std::vector<DelayProfile> profiles_;
};

struct CurvePoint {
  std::int32_t day = 0;
  double cumulative_fraction = 0.0;
};

struct ReportingCurve {
  AssessmentGroup group{};
  std::size_t members = 0;
  std::vector<CurvePoint> points;  // day = 0..horizon
};

struct CurveSet {
  std::vector<ReportingCurve> curves;
  std::vector<std::string> warnings;
};

// Fraction of each group's members (with a computable delay) whose delay is
// at most d, for d = 0..horizon_days. Members past the horizon stay in the
// denominator.
inline CurveSet cumulative_curves(const DelayEngine& engine, std::span<const PatientIndex> cohort,
                                  std::int32_t horizon_days) {
  if (horizon_days < 0) throw ContractError("cumulative_curves: negative horizon");
  std::array<std::vector<std::int64_t>, kGroupCount> hist;
  std::array<std::size_t, kGroupCount> members{};
  for (auto& h : hist) h.assign(static_cast<std::size_t>(horizon_days) + 1, 0);
  for (auto p : cohort) {
    auto g = engine.group(p);
    const auto& d = engine.delay(p);
    if (!g || !d.delay_days) continue;
    auto gi = group_index(*g);
    ++members[gi];
    if (*d.delay_days <= horizon_days) ++hist[gi][static_cast<std::size_t>(*d.delay_days)];
  }
  CurveSet out;
  for (std::size_t gi = 0; gi < kGroupCount; ++gi) {
    if (members[gi] == 0) {
      out.warnings.push_back("group " + std::string(kGroupNames[gi]) + " has no members; curve omitted");
      continue;
    }
    ReportingCurve c;
    c.group = kAllGroups[gi];
    c.members = members[gi];
    std::int64_t cum = 0;
    for (std::int32_t day = 0; day <= horizon_days; ++day) {
      cum += hist[gi][static_cast<std::size_t>(day)];
      c.points.push_back({day, static_cast<double>(cum) / static_cast<double>(members[gi])});
    }
    out.curves.push_back(std::move(c));
  }
  return out;
}

inline std::vector<PatientIndex> all_patients(const EventStore& store) {
  std::vector<PatientIndex> v(store.patient_count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<PatientIndex>(i);
  return v;
}

enum class Scope { National, State, Practice };

inline std::optional<Scope> parse_scope(std::string_view s) {
  auto l = text::lower(s);
  if (l == "national") return Scope::National;
  if (l == "state") return Scope::State;
  if (l == "practice") return Scope::Practice;
  return std::nullopt;
}

struct DelaySummaryRow {
  std::string unit;
  std::size_t patient_count = 0;
  std::size_t delayed = 0;
  std::size_t delayed_ge_60 = 0;
  double fraction_delayed = 0.0;
  double fraction_delay_ge_60d = 0.0;
  bool suppressed = false;  // patient_count below the threshold; fractions withheld
};

inline constexpr std::size_t kDefaultSuppressionThreshold = 10;

// Per-unit delay fractions over patients with a computable delay. Units are
// ordered by name.
inline std::vector<DelaySummaryRow> delay_summary(const DelayEngine& engine, Scope scope,
                                                  std::span<const PatientIndex> patients,
                                                  std::size_t suppression_threshold = kDefaultSuppressionThreshold) {
  const auto& store = engine.store();
  std::map<std::string, DelaySummaryRow> units;
  for (auto p : patients) {
    const auto& d = engine.delay(p);
    if (!d.delay_days) continue;
    std::string unit;
    switch (scope) {
      case Scope::National: unit = "national"; break;
      case Scope::State: unit = store.state_of(p); break;
      case Scope::Practice: unit = store.practice_id(store.home_practice(p)); break;
    }
    auto& row = units[unit];
    row.unit = unit;
    ++row.patient_count;
    if (*d.delay_days > 0) ++row.delayed;
    if (*d.delay_days >= 60) ++row.delayed_ge_60;
  }
  std::vector<DelaySummaryRow> out;
  for (auto& [name, row] : units) {
    row.fraction_delayed = static_cast<double>(row.delayed) / static_cast<double>(row.patient_count);
    row.fraction_delay_ge_60d = static_cast<double>(row.delayed_ge_60) / static_cast<double>(row.patient_count);
    row.suppressed = row.patient_count < suppression_threshold;
    out.push_back(row);
  }
  return out;
}

}  // namespace delaylens
