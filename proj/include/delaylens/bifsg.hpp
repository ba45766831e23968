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
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "delaylens/assessment.hpp"
#include "delaylens/error.hpp"
#include "delaylens/event_store.hpp"
#include "delaylens/parallel.hpp"
#include "delaylens/race_harmonizer.hpp"
#include "delaylens/stats.hpp"
#include "delaylens/text.hpp"

namespace delaylens {

using GroupVector = std::array<double, kGroupCount>;

inline constexpr double kDefaultFloor = 1e-6;

// Surname rows hold P(group | surname) and must sum to 1. First-name and
// geography rows hold likelihoods P(key | group) on any positive scale.
// A surname row keyed "*" supplies base rates for unknown surnames.
class PriorTables {
 public:
  enum class Kind { Surname, Firstname, Geography };

  PriorTables() { base_rates_.fill(1.0 / kGroupCount); }

  static PriorTables load(const std::string& surname_csv, const std::string& firstname_csv,
                          const std::string& geo_csv, double floor = kDefaultFloor) {
    PriorTables t;
    t.set_floor(floor);
    auto read = [&](const std::string& path, Kind kind) {
      std::ifstream in(path);
      if (!in) throw DataError("cannot open prior table '" + path + "'");
      t.read(in, kind, path);
    };
    read(surname_csv, Kind::Surname);
    if (!firstname_csv.empty()) read(firstname_csv, Kind::Firstname);
    if (!geo_csv.empty()) read(geo_csv, Kind::Geography);
    return t;
  }

  void set_floor(double floor) {
    if (!(floor > 0 && floor < 1)) throw DataError("prior floor must be in (0,1)");
    floor_ = floor;
  }
  double floor() const { return floor_; }

  // CSV with a header "key,<group names>" in any column order.
  void read(std::istream& in, Kind kind, std::string_view source = "table") {
    std::string line;
    std::size_t row = 0;
    std::array<std::size_t, kGroupCount> col{};
    std::size_t key_col = 0, width = 0;
    while (std::getline(in, line)) {
      ++row;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (text::trim(line).empty()) continue;
      auto fields = text::parse_csv_line(line);
      auto where = [&] { return std::string(source) + " row " + std::to_string(row) + ": "; };
      if (width == 0) {
        width = fields.size();
        if (width != kGroupCount + 1) throw DataError(where() + "header must name a key column and the 5 groups");
        std::array<bool, kGroupCount> seen{};
        bool key_seen = false;
        for (std::size_t i = 0; i < width; ++i) {
          auto g = parse_group_name(text::trim(fields[i]));
          if (!g) {
            if (key_seen) throw DataError(where() + "unknown group column '" + fields[i] + "'");
            key_seen = true;
            key_col = i;
            continue;
          }
          if (seen[group_index(*g)]) throw DataError(where() + "duplicate group column '" + fields[i] + "'");
          seen[group_index(*g)] = true;
          col[group_index(*g)] = i;
        }
        continue;
      }
      if (fields.size() != width) throw DataError(where() + "expected " + std::to_string(width) + " fields");
      auto key = normalize_key(fields[key_col]);
      if (key.empty()) throw DataError(where() + "empty key");
      GroupVector v{};
      double sum = 0;
      for (std::size_t g = 0; g < kGroupCount; ++g) {
        auto d = text::parse_double(fields[col[g]]);
        if (!d || !std::isfinite(*d) || *d < 0) throw DataError(where() + "bad value '" + fields[col[g]] + "'");
        v[g] = *d;
        sum += *d;
      }
      if (kind == Kind::Surname && std::abs(sum - 1.0) > 1e-9)
        throw DataError(where() + "surname probabilities sum to " + text::format_double(sum));
      if (kind != Kind::Surname && sum <= 0) throw DataError(where() + "all-zero likelihood row");
      if (!insert(kind, key, v)) throw DataError(where() + "duplicate key '" + key + "'");
    }
    if (width == 0) throw DataError(std::string(source) + ": missing header");
  }

  // Returns false on a duplicate key.
  bool insert(Kind kind, const std::string& key, const GroupVector& v) {
    if (kind == Kind::Surname && key == "*") {
      base_rates_ = v;
      return !std::exchange(has_base_rates_, true);
    }
    return table(kind).emplace(key, v).second;
  }

  const GroupVector* find(Kind kind, std::string_view key) const {
    const auto& t = const_cast<PriorTables*>(this)->table(kind);
    auto it = t.find(normalize_key(key));
    return it == t.end() ? nullptr : &it->second;
  }
  const GroupVector& base_rates() const { return base_rates_; }
  std::size_t size(Kind kind) const { return const_cast<PriorTables*>(this)->table(kind).size(); }

  static std::string normalize_key(std::string_view k) { return text::upper(text::trim(k)); }

  void write(std::ostream& out, Kind kind) const {
    out << "key";
    for (auto g : kGroupNames) out << ',' << g;
    out << '\n';
    auto& t = const_cast<PriorTables*>(this)->table(kind);
    std::vector<std::string> keys;
    for (const auto& [k, v] : t) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    auto row = [&](const std::string& k, const GroupVector& v) {
      out << text::csv_field(k);
      for (double x : v) out << ',' << text::format_double(x);
      out << '\n';
    };
    if (kind == Kind::Surname && has_base_rates_) row("*", base_rates_);
    for (const auto& k : keys) row(k, t.at(k));
  }

 private:
  std::unordered_map<std::string, GroupVector>& table(Kind kind) {
    switch (kind) {
      case Kind::Surname: return surname_;
      case Kind::Firstname: return firstname_;
      case Kind::Geography: return geo_;
    }
    return surname_;
  }

  std::unordered_map<std::string, GroupVector> surname_, firstname_, geo_;
  GroupVector base_rates_{};
  bool has_base_rates_ = false;
  double floor_ = kDefaultFloor;
};

// Normalized product of a prior and optional likelihoods. Likelihood entries
// are floored at `floor` times the row maximum so a sparse table cannot zero
// out a group. Returns nullopt when the product is all zero.
inline std::optional<std::vector<double>> bayes_combine(std::span<const double> prior,
                                                        std::span<const double> firstname,
                                                        std::span<const double> geo, double floor) {
  std::vector<double> p(prior.begin(), prior.end());
  auto apply = [&](std::span<const double> lik) {
    if (lik.empty()) return;
    if (lik.size() != p.size()) throw ContractError("bayes_combine: length mismatch");
    double mx = *std::max_element(lik.begin(), lik.end());
    for (std::size_t j = 0; j < p.size(); ++j) p[j] *= std::max(lik[j], floor * mx);
  };
  apply(firstname);
  apply(geo);
  double sum = 0;
  for (double x : p) sum += x;
  if (!(sum > 0) || !std::isfinite(sum)) return std::nullopt;
  for (double& x : p) x /= sum;
  return p;
}

struct PosteriorRow {
  std::string patient_id;
  GroupVector p{};
  bool uniform_fallback = false;
};

// Surname, first name and geography keys; empty strings mean missing.
inline PosteriorRow posterior(std::string_view surname, std::string_view firstname, std::string_view geo,
                              const PriorTables& tables) {
  using K = PriorTables::Kind;
  PosteriorRow row;
  const GroupVector* s = surname.empty() ? nullptr : tables.find(K::Surname, surname);
  const GroupVector& prior = s ? *s : tables.base_rates();
  const GroupVector* f = firstname.empty() ? nullptr : tables.find(K::Firstname, firstname);
  const GroupVector* g = geo.empty() ? nullptr : tables.find(K::Geography, geo);
  auto p = bayes_combine(prior, f ? std::span<const double>(*f) : std::span<const double>{},
                         g ? std::span<const double>(*g) : std::span<const double>{}, tables.floor());
  if (!p) {
    row.p.fill(1.0 / kGroupCount);
    row.uniform_fallback = true;
  } else {
    std::copy(p->begin(), p->end(), row.p.begin());
  }
  return row;
}

// NameKeys values are "surname|firstname".
inline std::pair<std::string_view, std::string_view> split_name_keys(std::string_view v) {
  auto bar = v.find('|');
  if (bar == std::string_view::npos) return {text::trim(v), {}};
  return {text::trim(v.substr(0, bar)), text::trim(v.substr(bar + 1))};
}

// One row per cohort member, in member order. Name keys come from the
// patient's first NameKeys record and the geography key is the full
// Geography value.
inline std::vector<PosteriorRow> compute_posteriors(const EventStore& store, const Cohort& cohort,
                                                    const PriorTables& tables, unsigned threads = 0) {
  std::vector<PosteriorRow> out(cohort.members.size());
  parallel_for(out.size(), threads, [&](std::size_t i) {
    auto p = cohort.members[i].patient;
    const auto* names = store.first_of_kind(p, RecordKind::NameKeys);
    auto [sur, first] = names ? split_name_keys(names->value) : std::pair<std::string_view, std::string_view>{};
    out[i] = posterior(sur, first, store.geography(p), tables);
    out[i].patient_id = store.patient_id(p);
  });
  return out;
}

// sum(w * Y) / sum(w); nullopt with zero weight mass.
inline std::optional<double> weighted_prevalence(std::span<const double> weights, std::span<const std::uint8_t> flags) {
  if (weights.size() != flags.size()) throw ContractError("weighted_prevalence: length mismatch");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    den += weights[i];
    if (flags[i]) num += weights[i];
  }
  if (!(den > 0)) return std::nullopt;
  return num / den;
}

inline std::optional<double> weighted_prevalence(std::span<const PosteriorRow> rows,
                                                 std::span<const std::uint8_t> flags, AssessmentGroup group) {
  std::vector<double> w(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) w[i] = rows[i].p[group_index(group)];
  return weighted_prevalence(w, flags);
}

enum class ImputationMode { KnownRaceKept, AllImputed };

inline ImputationMode parse_imputation_mode(std::string_view s) {
  if (s == "known-race-kept") return ImputationMode::KnownRaceKept;
  if (s == "all-imputed") return ImputationMode::AllImputed;
  throw DataError("unknown imputation mode '" + std::string(s) + "'");
}

struct ImputationOptions {
  ImputationMode mode = ImputationMode::KnownRaceKept;
  std::optional<int> round_decimals;  // applied to posteriors before weighting
};

struct ImputedAssessment {
  GroupPrevalences weighted_initial;  // at t_initial
  GroupPrevalences observed_initial;  // known races only, no imputation
  GroupPrevalences truth_final;       // all cohort races known
  GroupVector weight_mass{};
  std::size_t known_at_initial = 0;
  std::size_t imputed = 0;
  std::size_t uniform_fallbacks = 0;
  ErrorReport with_imputation;
  ErrorReport without_imputation;
};

inline double round_to(double x, int decimals) {
  double scale = std::pow(10.0, decimals);
  return std::round(x * scale) / scale;
}

inline ImputedAssessment imputed_assessment(const Cohort& cohort, std::size_t outcome,
                                            std::span<const PosteriorRow> posteriors,
                                            const ImputationOptions& options = {}) {
  if (posteriors.size() != cohort.members.size())
    throw ContractError("imputed_assessment: one posterior row per cohort member required");
  if (options.round_decimals && *options.round_decimals < 0) throw DataError("rounding decimals must be >= 0");
  const auto& flags = cohort.outcomes.at(outcome);
  Date t_initial = cohort.spec.period().end + 1;
  ImputedAssessment res;
  std::array<double, kGroupCount> num{}, den{};
  std::array<std::size_t, kGroupCount> known_num{}, known_den{}, all_num{}, all_den{};
  for (std::size_t i = 0; i < cohort.members.size(); ++i) {
    const auto& m = cohort.members[i];
    auto gi = group_index(m.group);
    ++all_den[gi];
    all_num[gi] += flags[i];
    bool known = m.report_date <= t_initial;
    if (known) {
      ++known_den[gi];
      known_num[gi] += flags[i];
      ++res.known_at_initial;
    }
    GroupVector w{};
    if (known && options.mode == ImputationMode::KnownRaceKept) {
      w[gi] = 1.0;
    } else {
      w = posteriors[i].p;
      if (options.round_decimals)
        for (double& x : w) x = round_to(x, *options.round_decimals);
      ++res.imputed;
      if (posteriors[i].uniform_fallback) ++res.uniform_fallbacks;
    }
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      den[g] += w[g];
      if (flags[i]) num[g] += w[g];
    }
  }
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    res.weight_mass[g] = den[g];
    res.weighted_initial[g] = den[g] > 0 ? std::optional<double>(num[g] / den[g]) : std::nullopt;
    res.observed_initial[g] = prevalence(known_num[g], known_den[g]);
    res.truth_final[g] = prevalence(all_num[g], all_den[g]);
  }
  res.with_imputation = error_report(res.weighted_initial, res.truth_final);
  res.without_imputation = error_report(res.observed_initial, res.truth_final);
  return res;
}

struct GroupEvaluation {
  AssessmentGroup group{};
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::optional<double> auroc;
  double mean_predicted = 0;
  double observed_rate = 0;
  double brier = 0;
  std::string note;
};

// One-vs-rest AUROC from midranks of p_ij.
inline std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::size_t pos = 0;
  for (auto l : labels) pos += l ? 1 : 0;
  std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  auto rk = stats::midranks(scores);
  double r = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i]) r += rk.ranks[i];
  double np = static_cast<double>(pos), nn = static_cast<double>(neg);
  return (r - np * (np + 1) / 2) / (np * nn);
}

inline std::vector<GroupEvaluation> evaluate_posteriors(std::span<const PosteriorRow> rows,
                                                        std::span<const AssessmentGroup> truth) {
  if (rows.size() != truth.size()) throw ContractError("evaluate_posteriors: length mismatch");
  std::vector<GroupEvaluation> out;
  std::vector<double> scores(rows.size());
  std::vector<std::uint8_t> labels(rows.size());
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    GroupEvaluation e;
    e.group = kAllGroups[g];
    double sp = 0, sb = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      scores[i] = rows[i].p[g];
      labels[i] = truth[i] == e.group ? 1 : 0;
      e.positives += labels[i];
      sp += scores[i];
      sb += (scores[i] - labels[i]) * (scores[i] - labels[i]);
    }
    e.negatives = rows.size() - e.positives;
    if (!rows.empty()) {
      double n = static_cast<double>(rows.size());
      e.mean_predicted = sp / n;
      e.observed_rate = static_cast<double>(e.positives) / n;
      e.brier = sb / n;
    }
    e.auroc = auroc(scores, labels);
    if (e.positives == 0) e.note = "group absent from truth; skipped";
    else if (e.negatives == 0) e.note = "no negatives; skipped";
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace delaylens
