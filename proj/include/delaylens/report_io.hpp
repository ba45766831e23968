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

#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "delaylens/assessment.hpp"
#include "delaylens/bifsg.hpp"
#include "delaylens/delay_engine.hpp"
#include "delaylens/text.hpp"

// JSON and long-format CSV renderings of engine results. JSON documents carry
// schema_version; CSV files are flat with NA for undefined values.
namespace delaylens::report {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

inline Json num(std::optional<double> v) {
  if (!v || std::isnan(*v)) return nullptr;
  return *v;
}

inline std::string csv_num(std::optional<double> v) { return v ? text::format_double(*v) : "NA"; }

inline Json document(std::string_view kind) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = std::string(kind);
  return j;
}

inline Json to_json(const CohortDiagnostics& d) {
  Json j;
  j["total_patients"] = d.total_patients;
  j["no_mappable_race"] = d.no_mappable_race;
  j["no_dob_or_underage"] = d.no_dob_or_underage;
  j["dob_not_before_cutoff"] = d.dob_not_before_cutoff;
  j["practice_not_reporting_before_cutoff"] = d.practice_not_reporting_before_cutoff;
  j["no_visit_in_period"] = d.no_visit_in_period;
  j["outside_scope"] = d.outside_scope;
  j["included"] = d.included;
  return j;
}

inline Json to_json(const CohortSpec& s) {
  Json j;
  j["quarter"] = s.quarter.str();
  j["period_start"] = s.period().start.str();
  j["period_end"] = s.period().end.str();
  j["min_age_years"] = s.min_age_years;
  j["dob_cutoff"] = s.dob_cutoff().str();
  j["practice_cutoff"] = s.practice_cutoff().str();
  j["require_visit_in_period"] = s.require_visit_in_period;
  j["scope"] = s.scope.str();
  return j;
}

inline Json to_json(const SnapshotSeries& s) {
  Json j;
  j["outcome"] = s.outcome;
  j["t_initial"] = s.t_initial.str();
  j["t_final"] = s.t_final.str();
  j["truncated"] = s.truncated;
  auto rows = Json::array();
  for (std::size_t r = 0; r < s.rows.size(); ++r) {
    Json row;
    row["as_of"] = s.as_of[r].str();
    Json groups;
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      const auto& c = s.rows[r][g];
      Json cell;
      cell["numerator"] = c.numerator;
      cell["denominator"] = c.denominator;
      cell["prevalence"] = num(c.prevalence);
      cell["ci_low"] = num(c.ci_low);
      cell["ci_high"] = num(c.ci_high);
      groups[std::string(kGroupNames[g])] = cell;
    }
    row["groups"] = groups;
    rows.push_back(row);
  }
  j["snapshots"] = rows;
  return j;
}

inline Json to_json(const ErrorReport& r) {
  Json j;
  auto groups = Json::array();
  for (const auto& g : r.groups) {
    if (!g.initial && !g.final) continue;
    Json e;
    e["group"] = std::string(group_name(g.group));
    e["prevalence_initial"] = num(g.initial);
    e["prevalence_final"] = num(g.final);
    e["prevalence_error"] = num(g.prevalence_error);
    e["relative_absolute_error"] = num(g.relative_absolute_error);
    groups.push_back(e);
  }
  j["groups"] = groups;
  auto pairs = Json::array();
  for (const auto& p : r.pairs) {
    Json e;
    e["a"] = std::string(group_name(p.a));
    e["b"] = std::string(group_name(p.b));
    e["disparity_initial"] = p.disparity_initial;
    e["disparity_final"] = p.disparity_final;
    e["disparity_error"] = p.disparity_error;
    e["classification"] = std::string(class_name(p.classification));
    e["magnitude_tie"] = p.magnitude_tie;
    pairs.push_back(e);
  }
  j["pairs"] = pairs;
  j["groups_used"] = r.groups_used;
  j["average_prevalence_error"] = num(r.average_prevalence_error);
  j["average_disparity_error"] = num(r.average_disparity_error);
  j["omissions"] = r.omissions;
  return j;
}

// Metrics naming a group in `hidden` are left out of the summaries and the
// replicate matrix.
inline Json to_json(const BootstrapResult& b, const BootstrapOptions& o, const std::set<std::string>& hidden = {},
                    bool include_replicates = false) {
  std::vector<std::size_t> keep;
  for (std::size_t m = 0; m < b.metric_names.size(); ++m) {
    bool drop = false;
    for (const auto& h : hidden) {
      const auto& n = b.metric_names[m];
      if (n.find("[" + h + "]") != std::string::npos || n.find("[" + h + "-") != std::string::npos ||
          n.find("-" + h + "]") != std::string::npos)
        drop = true;
    }
    if (!drop) keep.push_back(m);
  }
  Json j;
  j["replicates"] = o.replicates;
  j["seed"] = o.seed;
  j["scheme"] = o.scheme == BootstrapScheme::TwoStage ? "two-stage" : "patient";
  j["interval"] = "percentile 2.5/97.5";
  auto ms = Json::array();
  for (auto m : keep) {
    const auto& s = b.summaries[m];
    Json e;
    e["metric"] = s.name;
    e["mean"] = num(s.mean);
    e["ci_low"] = num(s.ci_low);
    e["ci_high"] = num(s.ci_high);
    e["valid"] = s.valid;
    e["skipped"] = s.skipped;
    ms.push_back(e);
  }
  j["metrics"] = ms;
  if (include_replicates) {
    auto names = Json::array();
    for (auto m : keep) names.push_back(b.metric_names[m]);
    j["replicate_metrics"] = names;
    auto reps = Json::array();
    for (const auto& rep : b.replicates) {
      auto row = Json::array();
      for (auto m : keep) row.push_back(num(rep[m]));
      reps.push_back(row);
    }
    j["replicate_values"] = reps;
  }
  return j;
}

// Long format, one row per (as_of, group); days_since_initial is the x axis
// of the prevalence-over-time figures.
inline void write_series_csv_header(std::ostream& out) {
  out << "outcome,as_of,days_since_initial,group,numerator,denominator,prevalence,ci_low,ci_high\n";
}

inline void write_series_csv(std::ostream& out, const SnapshotSeries& s) {
  for (std::size_t r = 0; r < s.rows.size(); ++r) {
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      const auto& c = s.rows[r][g];
      if (c.denominator == 0) continue;
      out << text::csv_field(s.outcome) << ',' << s.as_of[r].str() << ',' << (s.as_of[r] - s.t_initial) << ','
          << kGroupNames[g] << ',' << c.numerator << ',' << c.denominator << ',' << csv_num(c.prevalence) << ','
          << text::format_double(c.ci_low) << ',' << text::format_double(c.ci_high) << '\n';
    }
  }
}

inline void write_curves_csv(std::ostream& out, const CurveSet& curves) {
  out << "group,day,cum_fraction\n";
  for (const auto& c : curves.curves)
    for (const auto& p : c.points)
      out << group_name(c.group) << ',' << p.day << ',' << text::format_double(p.cumulative_fraction) << '\n';
}

inline void write_delay_summary_csv(std::ostream& out, const std::vector<DelaySummaryRow>& rows) {
  out << "unit,patients,delayed,delayed_ge_60d,fraction_delayed,fraction_delay_ge_60d,suppressed\n";
  for (const auto& r : rows) {
    out << text::csv_field(r.unit) << ',';
    if (r.suppressed) {
      out << "NA,NA,NA,NA,NA,1\n";
      continue;
    }
    out << r.patient_count << ',' << r.delayed << ',' << r.delayed_ge_60 << ',' << text::format_double(r.fraction_delayed)
        << ',' << text::format_double(r.fraction_delay_ge_60d) << ",0\n";
  }
}

inline Json to_json(const std::vector<DelaySummaryRow>& rows) {
  auto a = Json::array();
  for (const auto& r : rows) {
    Json e;
    e["unit"] = r.unit;
    e["suppressed"] = r.suppressed;
    if (!r.suppressed) {
      e["patients"] = r.patient_count;
      e["delayed"] = r.delayed;
      e["delayed_ge_60d"] = r.delayed_ge_60;
      e["fraction_delayed"] = r.fraction_delayed;
      e["fraction_delay_ge_60d"] = r.fraction_delay_ge_60d;
    }
    a.push_back(e);
  }
  return a;
}

inline Json to_json(const GroupPrevalences& p) {
  Json j;
  for (std::size_t g = 0; g < kGroupCount; ++g) j[std::string(kGroupNames[g])] = num(p[g]);
  return j;
}

inline Json to_json(const std::vector<GroupEvaluation>& ev) {
  auto a = Json::array();
  for (const auto& e : ev) {
    Json j;
    j["group"] = std::string(group_name(e.group));
    j["positives"] = e.positives;
    j["negatives"] = e.negatives;
    j["auroc"] = num(e.auroc);
    j["mean_predicted"] = e.mean_predicted;
    j["observed_rate"] = e.observed_rate;
    j["brier"] = e.brier;
    if (!e.note.empty()) j["note"] = e.note;
    a.push_back(j);
  }
  return a;
}

inline void write_monitor_csv(std::ostream& out, const MonitorResult& m) {
  out << "series,quarter,group,initial,revised,n_initial,n_revised\n";
  for (const auto& r : m.groups)
    out << "prevalence," << r.quarter.str() << ',' << group_name(r.group) << ',' << csv_num(r.initial) << ','
        << csv_num(r.revised) << ',' << r.n_initial << ',' << r.n_revised << '\n';
  for (const auto& r : m.pairs)
    out << "disparity" << (r.selected ? "_selected" : "") << ',' << r.quarter.str() << ',' << group_name(r.a) << '-'
        << group_name(r.b) << ',' << csv_num(r.disparity_initial) << ',' << csv_num(r.disparity_revised) << ",NA,NA\n";
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, std::size_t threshold) {
  out << "quarter,cohort_size,mean_delay_days\n";
  for (const auto& r : rows) {
    out << r.quarter.str() << ',';
    if (r.cohort_size < threshold) out << "NA,NA\n";
    else out << r.cohort_size << ',' << text::format_double(r.mean_delay_days) << '\n';
  }
}

}  // namespace delaylens::report
