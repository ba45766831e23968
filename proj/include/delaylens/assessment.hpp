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
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "delaylens/date.hpp"
#include "delaylens/delay_engine.hpp"
#include "delaylens/error.hpp"
#include "delaylens/event_store.hpp"
#include "delaylens/parallel.hpp"
#include "delaylens/race_harmonizer.hpp"

namespace delaylens {

// ---------------------------------------------------------------------------
// Cohorts

struct GeographyScope {
  Scope kind = Scope::National;
  std::string value;  // state code or practice id

  // "national", "state:CA" or "practice:PR0001".
  static GeographyScope parse(std::string_view s) {
    auto colon = s.find(':');
    auto head = text::lower(text::trim(s.substr(0, colon)));
    std::string tail = colon == std::string_view::npos ? std::string{} : std::string(text::trim(s.substr(colon + 1)));
    if (head == "national" && tail.empty()) return {Scope::National, {}};
    if (head == "state" && !tail.empty()) return {Scope::State, tail};
    if (head == "practice" && !tail.empty()) return {Scope::Practice, tail};
    throw DataError("bad geography scope '" + std::string(s) + "'");
  }
  std::string str() const {
    switch (kind) {
      case Scope::National: return "national";
      case Scope::State: return "state:" + value;
      case Scope::Practice: return "practice:" + value;
    }
    return "national";
  }
  bool matches(const EventStore& store, PatientIndex p) const {
    switch (kind) {
      case Scope::National: return true;
      case Scope::State: return store.state_of(p) == value;
      case Scope::Practice: return store.practice_id(store.home_practice(p)) == value;
    }
    return false;
  }
};

struct CohortSpec {
  Quarter quarter;
  int min_age_years = 18;
  std::optional<Date> require_dob_before;            // default: period start
  std::optional<Date> require_practice_race_before;  // default: period start
  bool require_visit_in_period = true;
  GeographyScope scope;

  static CohortSpec for_quarter(Quarter q) {
    CohortSpec s;
    s.quarter = q;
    return s;
  }
  DateInterval period() const { return quarter.interval(); }
  Date dob_cutoff() const { return require_dob_before.value_or(quarter.start()); }
  Date practice_cutoff() const { return require_practice_race_before.value_or(quarter.start()); }
};

struct CohortDiagnostics {
  std::size_t total_patients = 0;
  std::size_t no_mappable_race = 0;
  std::size_t no_dob_or_underage = 0;
  std::size_t dob_not_before_cutoff = 0;
  std::size_t practice_not_reporting_before_cutoff = 0;
  std::size_t no_visit_in_period = 0;
  std::size_t outside_scope = 0;
  std::size_t included = 0;

  std::string str() const {
    return "patients=" + std::to_string(total_patients) + " no_mappable_race=" + std::to_string(no_mappable_race) +
           " no_dob_or_underage=" + std::to_string(no_dob_or_underage) +
           " dob_not_before_cutoff=" + std::to_string(dob_not_before_cutoff) +
           " practice_not_reporting_before_cutoff=" + std::to_string(practice_not_reporting_before_cutoff) +
           " no_visit_in_period=" + std::to_string(no_visit_in_period) +
           " outside_scope=" + std::to_string(outside_scope) + " included=" + std::to_string(included);
  }
};

class EmptyCohortError : public DataError {
 public:
  explicit EmptyCohortError(CohortDiagnostics d)
      : DataError("empty cohort: " + d.str()), diagnostics_(d) {}
  const CohortDiagnostics& diagnostics() const { return diagnostics_; }

 private:
  CohortDiagnostics diagnostics_;
};

struct CohortMember {
  PatientIndex patient = 0;
  PracticeIndex practice = 0;
  AssessmentGroup group{};
  Date report_date;  // first reported race, from the full record set
  std::int32_t delay_days = 0;
};

struct Cohort {
  CohortSpec spec;
  std::vector<std::string> outcome_names;
  std::vector<CohortMember> members;
  std::vector<std::vector<std::uint8_t>> outcomes;  // [outcome][member], 0/1
  CohortDiagnostics diagnostics;

  std::size_t size() const { return members.size(); }
  std::size_t outcome_index(std::string_view name) const {
    for (std::size_t i = 0; i < outcome_names.size(); ++i)
      if (outcome_names[i] == name) return i;
    throw DataError("outcome '" + std::string(name) + "' not in cohort");
  }
};

// Birth date from a DateOfBirth value: "YYYY-MM-DD" or a bare year.
inline std::optional<int> birth_year(std::string_view value) {
  value = text::trim(value);
  if (auto d = Date::parse(value)) return d->year();
  if (value.size() == 4) {
    int y = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + 4, y);
    if (ec == std::errc() && p == value.data() + 4) return y;
  }
  return std::nullopt;
}

namespace detail {

enum class CohortFilter : std::uint8_t {
  Included,
  NoMappableRace,
  NoDobOrUnderage,
  DobAfterCutoff,
  PracticeAfterCutoff,
  NoVisit,
  OutsideScope,
};

inline CohortFilter cohort_filter(const DelayEngine& engine, const CohortSpec& spec, PatientIndex p) {
  const auto& store = engine.store();
  if (!engine.group(p)) return CohortFilter::NoMappableRace;
  const auto* dob = store.first_of_kind(p, RecordKind::DateOfBirth);
  auto by = dob ? birth_year(dob->value) : std::nullopt;
  if (!by || spec.quarter.year - *by < spec.min_age_years) return CohortFilter::NoDobOrUnderage;
  auto dob_date = engine.first_dob_record(p);
  if (!dob_date || !(*dob_date < spec.dob_cutoff())) return CohortFilter::DobAfterCutoff;
  auto base = engine.practice_baseline(store.home_practice(p));
  if (!base || !(*base < spec.practice_cutoff())) return CohortFilter::PracticeAfterCutoff;
  if (spec.require_visit_in_period) {
    auto period = spec.period();
    bool visit = false;
    for (const auto& r : store.records(p)) {
      if (r.event_date > period.end) break;
      if (r.kind == RecordKind::Visit && r.event_date >= period.start) {
        visit = true;
        break;
      }
    }
    if (!visit) return CohortFilter::NoVisit;
  }
  if (!spec.scope.matches(store, p)) return CohortFilter::OutsideScope;
  return CohortFilter::Included;
}

}  // namespace detail

// Patients with an eventually reported race that maps to an assessment
// group, old enough in the period's year (year difference only), with a DOB
// timestamp and a practice race report strictly before the cutoffs, and a
// visit in the period when required. Outcomes cover the period only.
inline Cohort build_cohort(const DelayEngine& engine, const CohortSpec& spec,
                           const std::vector<OutcomeCodeSet>& outcomes, unsigned threads = 0) {
  if (spec.min_age_years < 0) throw ContractError("build_cohort: negative minimum age");
  const auto& store = engine.store();
  std::size_t n = store.patient_count();
  std::vector<detail::CohortFilter> verdict(n);
  parallel_for(n, threads, [&](std::size_t i) {
    verdict[i] = detail::cohort_filter(engine, spec, static_cast<PatientIndex>(i));
  });

  Cohort c;
  c.spec = spec;
  c.diagnostics.total_patients = n;
  for (std::size_t i = 0; i < n; ++i) {
    switch (verdict[i]) {
      case detail::CohortFilter::NoMappableRace: ++c.diagnostics.no_mappable_race; break;
      case detail::CohortFilter::NoDobOrUnderage: ++c.diagnostics.no_dob_or_underage; break;
      case detail::CohortFilter::DobAfterCutoff: ++c.diagnostics.dob_not_before_cutoff; break;
      case detail::CohortFilter::PracticeAfterCutoff: ++c.diagnostics.practice_not_reporting_before_cutoff; break;
      case detail::CohortFilter::NoVisit: ++c.diagnostics.no_visit_in_period; break;
      case detail::CohortFilter::OutsideScope: ++c.diagnostics.outside_scope; break;
      case detail::CohortFilter::Included: {
        auto p = static_cast<PatientIndex>(i);
        const auto& d = engine.delay(p);
        CohortMember m;
        m.patient = p;
        m.practice = store.home_practice(p);
        m.group = *engine.group(p);
        m.report_date = *d.race_report_date;
        m.delay_days = d.delay_days.value_or(0);
        c.members.push_back(m);
      }
    }
  }
  c.diagnostics.included = c.members.size();
  if (c.members.empty()) throw EmptyCohortError(c.diagnostics);

  auto period = spec.period();
  for (const auto& o : outcomes) {
    c.outcome_names.push_back(o.name());
    std::vector<std::uint8_t> flags(c.members.size());
    parallel_for(c.members.size(), threads, [&](std::size_t i) {
      flags[i] = store.extract_outcome(c.members[i].patient, o, period) ? 1 : 0;
    });
    c.outcomes.push_back(std::move(flags));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Prevalence and snapshot series

// Share of flags set; nullopt for an empty group.
inline std::optional<double> prevalence(std::span<const std::uint8_t> flags) {
  if (flags.empty()) return std::nullopt;
  std::size_t sum = 0;
  for (auto f : flags) sum += f ? 1 : 0;
  return static_cast<double>(sum) / static_cast<double>(flags.size());
}

inline std::optional<double> prevalence(std::size_t numerator, std::size_t denominator) {
  if (denominator == 0) return std::nullopt;
  return static_cast<double>(numerator) / static_cast<double>(denominator);
}

// 95% Wilson score interval.
inline std::pair<double, double> wilson_interval(std::size_t k, std::size_t n) {
  if (n == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  constexpr double z = 1.959963984540054;
  double nn = static_cast<double>(n), p = static_cast<double>(k) / nn;
  double denom = 1 + z * z / nn;
  double centre = (p + z * z / (2 * nn)) / denom;
  double half = z * std::sqrt(p * (1 - p) / nn + z * z / (4 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct SnapshotCell {
  std::size_t numerator = 0;
  std::size_t denominator = 0;
  std::optional<double> prevalence;
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
};

using SnapshotRow = std::array<SnapshotCell, kGroupCount>;
using GroupPrevalences = std::array<std::optional<double>, kGroupCount>;

struct SnapshotSeries {
  CohortSpec cohort;
  std::string outcome;
  std::vector<Date> as_of;
  std::vector<SnapshotRow> rows;
  Date t_initial;
  Date t_final;            // date the last cohort member's race becomes visible
  bool truncated = false;  // quarter cap hit before t_final

  GroupPrevalences prevalences(std::size_t row) const {
    GroupPrevalences out;
    for (std::size_t g = 0; g < kGroupCount; ++g) out[g] = rows.at(row)[g].prevalence;
    return out;
  }
};

struct SeriesOptions {
  // Cap on quarterly steps after t_initial (12 gives a three-year window).
  std::optional<int> max_quarters;
};

// t_initial, then every three months while before t_final, then t_final.
inline std::pair<std::vector<Date>, bool> snapshot_dates(const Cohort& cohort, const SeriesOptions& options) {
  Date t_initial = cohort.spec.period().end + 1;
  Date t_final = t_initial;
  for (const auto& m : cohort.members) t_final = std::max(t_final, m.report_date);
  std::vector<Date> dates;
  bool truncated = false;
  for (int k = 0;; ++k) {
    Date d = t_initial.add_months(3 * k);
    if (k > 0 && d >= t_final) break;
    if (options.max_quarters && k > *options.max_quarters) {
      truncated = true;
      break;
    }
    dates.push_back(d);
    if (d >= t_final) break;
  }
  if (!truncated && dates.back() < t_final) dates.push_back(t_final);
  return {dates, truncated};
}

inline SnapshotRow make_row(const std::array<std::size_t, kGroupCount>& num,
                            const std::array<std::size_t, kGroupCount>& den) {
  SnapshotRow row;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    auto& c = row[g];
    c.numerator = num[g];
    c.denominator = den[g];
    c.prevalence = prevalence(num[g], den[g]);
    std::tie(c.ci_low, c.ci_high) = wilson_interval(num[g], den[g]);
  }
  return row;
}

// Counts for an arbitrary member multiset (indices may repeat) at the given
// as-of dates. A member counts at `t` once its first report is visible.
inline std::vector<SnapshotRow> series_rows(const Cohort& cohort, std::size_t outcome,
                                            std::span<const std::size_t> member_indices,
                                            std::span<const Date> as_of) {
  const auto& flags = cohort.outcomes.at(outcome);
  std::vector<SnapshotRow> rows;
  rows.reserve(as_of.size());
  for (Date t : as_of) {
    std::array<std::size_t, kGroupCount> num{}, den{};
    for (auto i : member_indices) {
      const auto& m = cohort.members[i];
      if (m.report_date > t) continue;
      auto g = group_index(m.group);
      ++den[g];
      num[g] += flags[i];
    }
    rows.push_back(make_row(num, den));
  }
  return rows;
}

namespace detail {

// Index of the first as-of row at which each member is visible, or
// as_of.size() if never within the series.
inline std::vector<std::uint32_t> visibility_rows(const Cohort& cohort, std::span<const Date> as_of) {
  std::vector<std::uint32_t> out(cohort.members.size());
  for (std::size_t i = 0; i < cohort.members.size(); ++i) {
    auto it = std::lower_bound(as_of.begin(), as_of.end(), cohort.members[i].report_date);
    out[i] = static_cast<std::uint32_t>(it - as_of.begin());
  }
  return out;
}

// Cumulative counts over rows from a per-member visibility index.
template <typename IndexRange>
std::vector<std::pair<std::array<std::size_t, kGroupCount>, std::array<std::size_t, kGroupCount>>> cumulative_counts(
    const Cohort& cohort, const std::vector<std::uint8_t>& flags, const std::vector<std::uint32_t>& vis_row,
    std::size_t n_rows, const IndexRange& members) {
  std::vector<std::pair<std::array<std::size_t, kGroupCount>, std::array<std::size_t, kGroupCount>>> acc(n_rows);
  for (auto i : members) {
    auto r = vis_row[i];
    if (r >= n_rows) continue;
    auto g = group_index(cohort.members[i].group);
    ++acc[r].second[g];
    acc[r].first[g] += flags[i];
  }
  for (std::size_t r = 1; r < n_rows; ++r)
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      acc[r].first[g] += acc[r - 1].first[g];
      acc[r].second[g] += acc[r - 1].second[g];
    }
  return acc;
}

struct IotaRange {
  std::size_t n;
  struct It {
    std::size_t i;
    std::size_t operator*() const { return i; }
    It& operator++() {
      ++i;
      return *this;
    }
    bool operator!=(const It& o) const { return i != o.i; }
  };
  It begin() const { return {0}; }
  It end() const { return {n}; }
};

}  // namespace detail

inline SnapshotSeries snapshot_series(const Cohort& cohort, std::size_t outcome, const SeriesOptions& options = {}) {
  if (outcome >= cohort.outcomes.size()) throw ContractError("snapshot_series: outcome index out of range");
  SnapshotSeries s;
  s.cohort = cohort.spec;
  s.outcome = cohort.outcome_names[outcome];
  std::tie(s.as_of, s.truncated) = snapshot_dates(cohort, options);
  s.t_initial = s.as_of.front();
  s.t_final = s.t_initial;
  for (const auto& m : cohort.members) s.t_final = std::max(s.t_final, m.report_date);
  auto vis = detail::visibility_rows(cohort, s.as_of);
  auto acc = detail::cumulative_counts(cohort, cohort.outcomes[outcome], vis, s.as_of.size(),
                                       detail::IotaRange{cohort.members.size()});
  for (const auto& [num, den] : acc) s.rows.push_back(make_row(num, den));
  return s;
}

// ---------------------------------------------------------------------------
// Error metrics

enum class DisparityClass : std::uint8_t { Exacerbation, Minimization, SignSwitch };
inline std::string_view class_name(DisparityClass c) {
  switch (c) {
    case DisparityClass::Exacerbation: return "exacerbation";
    case DisparityClass::Minimization: return "minimization";
    case DisparityClass::SignSwitch: return "sign_switch";
  }
  return "";
}

// Magnitudes closer than this count as equal; differences of prevalence
// ratios pick up rounding noise well below it.
inline constexpr double kMagnitudeTieTolerance = 1e-12;

inline bool magnitude_tie(double disparity_initial, double disparity_final) {
  return std::abs(std::abs(disparity_initial) - std::abs(disparity_final)) <= kMagnitudeTieTolerance;
}

// Sign switches are checked first; otherwise an early estimate that is
// larger in magnitude exacerbates, and anything else (ties included)
// minimizes.
inline DisparityClass classify_pair(double disparity_initial, double disparity_final) {
  if ((disparity_initial < 0 && disparity_final > 0) || (disparity_initial > 0 && disparity_final < 0))
    return DisparityClass::SignSwitch;
  if (!magnitude_tie(disparity_initial, disparity_final) && std::abs(disparity_initial) > std::abs(disparity_final))
    return DisparityClass::Exacerbation;
  return DisparityClass::Minimization;
}

struct GroupError {
  AssessmentGroup group{};
  std::optional<double> initial;
  std::optional<double> final;
  std::optional<double> prevalence_error;  // final - initial
  std::optional<double> relative_absolute_error;
};

struct PairError {
  AssessmentGroup a{};
  AssessmentGroup b{};
  double disparity_initial = 0;  // prevalence(a) - prevalence(b)
  double disparity_final = 0;
  double disparity_error = 0;    // final - initial
  DisparityClass classification = DisparityClass::Minimization;
  bool magnitude_tie = false;    // |initial| == |final| within kMagnitudeTieTolerance
};

struct ErrorReport {
  std::array<GroupError, kGroupCount> groups;
  std::vector<PairError> pairs;
  std::size_t groups_used = 0;
  std::optional<double> average_prevalence_error;
  std::optional<double> average_disparity_error;
  std::vector<std::string> omissions;
};

inline ErrorReport error_report(const GroupPrevalences& initial, const GroupPrevalences& final) {
  ErrorReport r;
  std::vector<std::size_t> used;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    auto& ge = r.groups[g];
    ge.group = kAllGroups[g];
    ge.initial = initial[g];
    ge.final = final[g];
    if (!initial[g] || !final[g]) {
      r.omissions.push_back(std::string(kGroupNames[g]) + ": prevalence undefined at " +
                            (!initial[g] ? "t_initial" : "t_final"));
      continue;
    }
    ge.prevalence_error = *final[g] - *initial[g];
    if (*final[g] != 0.0) {
      ge.relative_absolute_error = std::abs(*final[g] - *initial[g]) / *final[g];
    } else {
      r.omissions.push_back(std::string(kGroupNames[g]) + ": relative error undefined (final prevalence 0)");
    }
    used.push_back(g);
  }
  r.groups_used = used.size();
  if (!used.empty()) {
    double sum = 0.0;
    for (auto g : used) sum += std::abs(*r.groups[g].prevalence_error);
    r.average_prevalence_error = (1.0 / static_cast<double>(used.size())) * sum;
  }
  for (std::size_t x = 0; x < used.size(); ++x) {
    for (std::size_t y = x + 1; y < used.size(); ++y) {
      auto j = used[x], k = used[y];
      PairError pe;
      pe.a = kAllGroups[j];
      pe.b = kAllGroups[k];
      pe.disparity_initial = *initial[j] - *initial[k];
      pe.disparity_final = *final[j] - *final[k];
      pe.disparity_error = pe.disparity_final - pe.disparity_initial;
      pe.classification = classify_pair(pe.disparity_initial, pe.disparity_final);
      pe.magnitude_tie = magnitude_tie(pe.disparity_initial, pe.disparity_final);
      r.pairs.push_back(pe);
    }
  }
  if (used.size() >= 2) {
    double sum = 0.0;
    for (const auto& pe : r.pairs) sum += std::abs(pe.disparity_error);
    double g = static_cast<double>(used.size());
    r.average_disparity_error = (2.0 / (g * (g - 1.0))) * sum;
  } else {
    r.omissions.push_back("fewer than two groups defined at both endpoints; no disparity average");
  }
  return r;
}

// Compares the first row against `final_row` (default: the last row).
inline ErrorReport error_report(const SnapshotSeries& series, std::size_t initial_row = 0,
                                std::optional<std::size_t> final_row = std::nullopt) {
  if (series.rows.empty()) throw ContractError("error_report: empty series");
  std::size_t fr = final_row.value_or(series.rows.size() - 1);
  return error_report(series.prevalences(initial_row), series.prevalences(fr));
}

// ---------------------------------------------------------------------------
// Bootstrap

enum class BootstrapScheme { TwoStage, PatientOnly };

struct BootstrapOptions {
  std::size_t replicates = 50;
  std::uint64_t seed = 0;
  BootstrapScheme scheme = BootstrapScheme::TwoStage;
  unsigned threads = 0;
  SeriesOptions series;
};

struct MetricSummary {
  std::string name;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  std::size_t valid = 0;
  std::size_t skipped = 0;
};

struct BootstrapResult {
  std::vector<Date> as_of;
  std::vector<std::string> metric_names;
  std::vector<std::vector<double>> replicates;  // [replicate][metric]; NaN when undefined
  std::vector<MetricSummary> summaries;

  const MetricSummary& metric(std::string_view name) const {
    for (const auto& s : summaries)
      if (s.name == name) return s;
    throw ContractError("unknown bootstrap metric '" + std::string(name) + "'");
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t replicate_seed(std::uint64_t seed, std::size_t replicate) {
  return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(replicate));
}

// Member indices of one resample. Two-stage: draw practices with
// replacement, then each drawn practice's patients with replacement.
inline std::vector<std::size_t> resample_members(const Cohort& cohort, BootstrapScheme scheme, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  out.reserve(cohort.members.size());
  if (scheme == BootstrapScheme::PatientOnly) {
    std::uniform_int_distribution<std::size_t> pick(0, cohort.members.size() - 1);
    for (std::size_t i = 0; i < cohort.members.size(); ++i) out.push_back(pick(rng));
    return out;
  }
  // Practices in ascending index order keep the draw independent of member order.
  std::vector<std::pair<PracticeIndex, std::size_t>> by_practice;
  by_practice.reserve(cohort.members.size());
  for (std::size_t i = 0; i < cohort.members.size(); ++i) by_practice.emplace_back(cohort.members[i].practice, i);
  std::sort(by_practice.begin(), by_practice.end());
  std::vector<std::pair<std::size_t, std::size_t>> ranges;  // [begin, end) in by_practice
  for (std::size_t i = 0; i < by_practice.size();) {
    std::size_t j = i;
    while (j < by_practice.size() && by_practice[j].first == by_practice[i].first) ++j;
    ranges.emplace_back(i, j);
    i = j;
  }
  std::uniform_int_distribution<std::size_t> pick_practice(0, ranges.size() - 1);
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    auto [b, e] = ranges[pick_practice(rng)];
    std::uniform_int_distribution<std::size_t> pick(b, e - 1);
    for (std::size_t t = b; t < e; ++t) out.push_back(by_practice[pick(rng)].second);
  }
  return out;
}

inline std::vector<std::string> bootstrap_metric_names(std::size_t n_rows) {
  std::vector<std::string> names;
  for (auto g : kGroupNames) names.push_back("prevalence_initial[" + std::string(g) + "]");
  for (auto g : kGroupNames) names.push_back("prevalence_final[" + std::string(g) + "]");
  for (auto g : kGroupNames) names.push_back("prevalence_error[" + std::string(g) + "]");
  for (auto g : kGroupNames) names.push_back("relative_absolute_prevalence_error[" + std::string(g) + "]");
  for (std::size_t j = 0; j < kGroupCount; ++j)
    for (std::size_t k = j + 1; k < kGroupCount; ++k) {
      auto pair = std::string(kGroupNames[j]) + "-" + std::string(kGroupNames[k]);
      names.push_back("disparity_initial[" + pair + "]");
      names.push_back("disparity_final[" + pair + "]");
      names.push_back("disparity_error[" + pair + "]");
    }
  names.push_back("average_prevalence_error");
  names.push_back("average_disparity_error");
  for (std::size_t r = 0; r < n_rows; ++r)
    for (auto g : kGroupNames) names.push_back("snapshot[" + std::to_string(r) + "][" + std::string(g) + "]");
  return names;
}

// Flattens one replicate's snapshot rows into the metric vector laid out by
// bootstrap_metric_names. Disparity entries use the full five-group pair
// grid; a pair with an undefined side is NaN.
inline std::vector<double> replicate_metrics(const std::vector<SnapshotRow>& rows) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  GroupPrevalences init, fin;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    init[g] = rows.front()[g].prevalence;
    fin[g] = rows.back()[g].prevalence;
  }
  auto rep = error_report(init, fin);
  std::vector<double> v;
  for (std::size_t g = 0; g < kGroupCount; ++g) v.push_back(init[g].value_or(nan));
  for (std::size_t g = 0; g < kGroupCount; ++g) v.push_back(fin[g].value_or(nan));
  for (std::size_t g = 0; g < kGroupCount; ++g) v.push_back(rep.groups[g].prevalence_error.value_or(nan));
  for (std::size_t g = 0; g < kGroupCount; ++g) v.push_back(rep.groups[g].relative_absolute_error.value_or(nan));
  for (std::size_t j = 0; j < kGroupCount; ++j)
    for (std::size_t k = j + 1; k < kGroupCount; ++k) {
      const PairError* pe = nullptr;
      for (const auto& p : rep.pairs)
        if (p.a == kAllGroups[j] && p.b == kAllGroups[k]) pe = &p;
      v.push_back(pe ? pe->disparity_initial : nan);
      v.push_back(pe ? pe->disparity_final : nan);
      v.push_back(pe ? pe->disparity_error : nan);
    }
  v.push_back(rep.average_prevalence_error.value_or(nan));
  v.push_back(rep.average_disparity_error.value_or(nan));
  for (const auto& row : rows)
    for (std::size_t g = 0; g < kGroupCount; ++g) v.push_back(row[g].prevalence.value_or(nan));
  return v;
}

// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  auto lo = static_cast<std::size_t>(std::floor(h));
  auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline std::vector<MetricSummary> summarize_replicates(const std::vector<std::string>& names,
                                                       const std::vector<std::vector<double>>& reps) {
  std::vector<MetricSummary> out;
  for (std::size_t m = 0; m < names.size(); ++m) {
    MetricSummary s;
    s.name = names[m];
    std::vector<double> vals;
    double sum = 0.0;
    for (const auto& r : reps) {
      if (std::isnan(r[m])) {
        ++s.skipped;
        continue;
      }
      vals.push_back(r[m]);
      sum += r[m];
    }
    s.valid = vals.size();
    if (!vals.empty()) {
      s.mean = sum / static_cast<double>(vals.size());
      std::sort(vals.begin(), vals.end());
      s.ci_low = quantile_sorted(vals, 0.025);
      s.ci_high = quantile_sorted(vals, 0.975);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline BootstrapResult bootstrap(const Cohort& cohort, std::size_t outcome, const BootstrapOptions& options = {}) {
  if (cohort.members.empty()) throw ContractError("bootstrap: empty cohort");
  if (outcome >= cohort.outcomes.size()) throw ContractError("bootstrap: outcome index out of range");
  BootstrapResult res;
  res.as_of = snapshot_dates(cohort, options.series).first;
  res.metric_names = bootstrap_metric_names(res.as_of.size());
  auto vis = detail::visibility_rows(cohort, res.as_of);
  const auto& flags = cohort.outcomes[outcome];
  res.replicates.resize(options.replicates);
  parallel_for(options.replicates, options.threads, [&](std::size_t r) {
    std::mt19937_64 rng(replicate_seed(options.seed, r));
    auto idx = resample_members(cohort, options.scheme, rng);
    auto acc = detail::cumulative_counts(cohort, flags, vis, res.as_of.size(), idx);
    std::vector<SnapshotRow> rows;
    rows.reserve(acc.size());
    for (const auto& [num, den] : acc) rows.push_back(make_row(num, den));
    res.replicates[r] = replicate_metrics(rows);
  });
  res.summaries = summarize_replicates(res.metric_names, res.replicates);
  return res;
}

// ---------------------------------------------------------------------------
// Consecutive-cohort monitoring and cohort sweeps

struct MonitorOptions {
  // Revised assessment horizon in quarters after t_initial; nullopt uses t_final.
  std::optional<int> revised_after_quarters = 12;
  // Explicit comparison pair; by default White against whichever group shows
  // the largest mean absolute revised disparity across the quarters.
  std::optional<std::pair<AssessmentGroup, AssessmentGroup>> pair;
  int min_age_years = 18;
  GeographyScope scope;
  bool require_visit_in_period = true;
  unsigned threads = 0;
};

struct MonitorGroupRow {
  Quarter quarter;
  AssessmentGroup group{};
  std::optional<double> initial;
  std::optional<double> revised;
  std::size_t n_initial = 0;
  std::size_t n_revised = 0;
};

struct MonitorPairRow {
  Quarter quarter;
  AssessmentGroup a{};
  AssessmentGroup b{};
  std::optional<double> disparity_initial;
  std::optional<double> disparity_revised;
  bool selected = false;
};

struct MonitorResult {
  std::vector<MonitorGroupRow> groups;
  std::vector<MonitorPairRow> pairs;
  std::optional<std::pair<AssessmentGroup, AssessmentGroup>> selected_pair;
  std::vector<std::pair<Quarter, std::string>> errors;
};

inline MonitorResult monitor(const DelayEngine& engine, const std::vector<Quarter>& quarters,
                             const OutcomeCodeSet& outcome, const MonitorOptions& options = {}) {
  MonitorResult res;
  struct PerQuarter {
    bool ok = false;
    SnapshotRow initial, revised;
  };
  std::vector<PerQuarter> per(quarters.size());
  for (std::size_t qi = 0; qi < quarters.size(); ++qi) {
    try {
      auto spec = CohortSpec::for_quarter(quarters[qi]);
      spec.min_age_years = options.min_age_years;
      spec.scope = options.scope;
      spec.require_visit_in_period = options.require_visit_in_period;
      auto cohort = build_cohort(engine, spec, {outcome}, options.threads);
      SeriesOptions so;
      so.max_quarters = options.revised_after_quarters;
      auto series = snapshot_series(cohort, 0, so);
      per[qi].ok = true;
      per[qi].initial = series.rows.front();
      per[qi].revised = series.rows.back();
    } catch (const DataError& e) {
      res.errors.emplace_back(quarters[qi], e.what());
    }
  }
  for (std::size_t qi = 0; qi < quarters.size(); ++qi) {
    if (!per[qi].ok) continue;
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      MonitorGroupRow row;
      row.quarter = quarters[qi];
      row.group = kAllGroups[g];
      row.initial = per[qi].initial[g].prevalence;
      row.revised = per[qi].revised[g].prevalence;
      row.n_initial = per[qi].initial[g].denominator;
      row.n_revised = per[qi].revised[g].denominator;
      res.groups.push_back(row);
    }
  }

  // White vs every other group.
  const auto white = AssessmentGroup::White;
  std::vector<std::pair<AssessmentGroup, AssessmentGroup>> candidates;
  for (auto g : kAllGroups)
    if (g != white) candidates.emplace_back(white, g);
  if (options.pair) {
    res.selected_pair = options.pair;
    if (std::find(candidates.begin(), candidates.end(), *options.pair) == candidates.end())
      candidates.push_back(*options.pair);
  } else {
    double best = -1.0;
    for (const auto& [a, b] : candidates) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& pq : per) {
        if (!pq.ok) continue;
        auto pa = pq.revised[group_index(a)].prevalence, pb = pq.revised[group_index(b)].prevalence;
        if (!pa || !pb) continue;
        sum += std::abs(*pa - *pb);
        ++n;
      }
      if (n > 0 && sum / static_cast<double>(n) > best) {
        best = sum / static_cast<double>(n);
        res.selected_pair = std::make_pair(a, b);
      }
    }
  }
  for (const auto& [a, b] : candidates) {
    for (std::size_t qi = 0; qi < quarters.size(); ++qi) {
      if (!per[qi].ok) continue;
      MonitorPairRow row;
      row.quarter = quarters[qi];
      row.a = a;
      row.b = b;
      auto diff = [&](const SnapshotRow& r) -> std::optional<double> {
        auto pa = r[group_index(a)].prevalence, pb = r[group_index(b)].prevalence;
        if (!pa || !pb) return std::nullopt;
        return *pa - *pb;
      };
      row.disparity_initial = diff(per[qi].initial);
      row.disparity_revised = diff(per[qi].revised);
      row.selected = res.selected_pair && *res.selected_pair == std::make_pair(a, b);
      res.pairs.push_back(row);
    }
  }
  return res;
}

struct SweepRow {
  Quarter quarter;
  std::size_t cohort_size = 0;
  double mean_delay_days = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<Quarter> quarter_range(Quarter from, Quarter to) {
  std::vector<Quarter> out;
  for (auto q = from; q <= to; q = q.next()) out.push_back(q);
  return out;
}

inline std::vector<SweepRow> cohort_sweep(const DelayEngine& engine, const std::vector<Quarter>& quarters,
                                          const CohortSpec& base = {}, unsigned threads = 0) {
  std::vector<SweepRow> out;
  for (auto q : quarters) {
    SweepRow row;
    row.quarter = q;
    auto spec = base;
    spec.quarter = q;
    spec.require_dob_before.reset();
    spec.require_practice_race_before.reset();
    try {
      auto cohort = build_cohort(engine, spec, {}, threads);
      row.cohort_size = cohort.size();
      double sum = 0.0;
      for (const auto& m : cohort.members) sum += m.delay_days;
      row.mean_delay_days = sum / static_cast<double>(cohort.size());
    } catch (const EmptyCohortError&) {
    }
    out.push_back(row);
  }
  return out;
}

}  // namespace delaylens
