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
#include <functional>
#include <initializer_list>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "delaylens/assessment.hpp"
#include "delaylens/bifsg.hpp"
#include "delaylens/date.hpp"
#include "delaylens/delay_engine.hpp"
#include "delaylens/error.hpp"
#include "delaylens/event_store.hpp"
#include "delaylens/parallel.hpp"
#include "delaylens/race_harmonizer.hpp"
#include "delaylens/stats.hpp"
#include "delaylens/text.hpp"

namespace delaylens::synth {

enum class DelayFamily { Lognormal, Geometric };

struct GroupDelay {
  double delayed_fraction = 0.73;
  double log_mean = 6.0;  // lognormal tail, natural-log days
  double log_sd = 1.0;
  double geometric_p = 0.005;  // geometric tail: 1 + Geometric(p) days
};

struct OutcomeModel {
  std::string name;
  std::vector<std::string> codes;
  double base_rate = 0.2;
  double delayed_shift = 0.0;  // added when the patient's race report is delayed
  GroupVector group_offsets{};
};

struct GeneratorConfig {
  std::uint64_t seed = 1;
  std::size_t n_practices = 20;
  std::size_t patients_min = 50;
  std::size_t patients_max = 150;
  GroupVector group_mix{0.1, 0.15, 0.2, 0.2, 0.35};

  DelayFamily delay_family = DelayFamily::Lognormal;
  std::array<GroupDelay, kGroupCount> delay{};
  double delay_decay_per_year = 0.0;  // shrinks the delay scale per year of opportunity date
  int pull_cadence_days = 0;          // > 0 snaps delayed reports to a per-practice grid
  int max_delay_days = 3650;

  std::vector<OutcomeModel> outcomes;
  double practice_outcome_sd = 0.0;

  double report_before_opportunity_rate = 0.0;
  double never_reported_rate = 0.0;
  double unreported_first_rate = 0.5;  // delayed patients first record an unknown race
  double coded_race_rate = 0.5;        // race reported through codes instead of text

  Date practice_start_from = Date::from_ymd(2012, 1, 1);
  Date practice_start_to = Date::from_ymd(2015, 12, 31);
  Date join_from = Date::from_ymd(2010, 1, 1);
  Date join_to = Date::from_ymd(2017, 12, 31);
  Date visit_from = Date::from_ymd(2017, 1, 1);
  Date visit_to = Date::from_ymd(2019, 12, 31);
  double visit_rate = 0.7;  // chance of one visit in a quarter
  int birth_year_min = 1940;
  int birth_year_max = 1998;
  double noise_code_rate = 0.3;
  std::vector<std::string> states{"CA", "NY", "TX"};

  std::size_t n_surnames = 200;
  std::size_t n_firstnames = 100;
  std::size_t n_tracts = 40;
  double name_concentration = 8.0;  // home-group weight of a name; 0 makes names group-exclusive
  std::optional<AssessmentGroup> miscalibrated_group;
  double miscalibration_factor = 1.0;

  unsigned threads = 0;

  static GeneratorConfig defaults() {
    GeneratorConfig c;
    for (const auto& cs : default_code_sets()) {
      OutcomeModel m;
      m.name = cs.name();
      m.codes = cs.sorted_codes();
      m.base_rate = 0.2;
      m.delayed_shift = 0.1;
      c.outcomes.push_back(std::move(m));
    }
    return c;
  }

  // Missing fields keep their defaults. Errors name the offending field.
  static GeneratorConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
  void validate() const;

  static GeneratorConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open generator config " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("generator config " + path + ": " + e.what());
    }
  }

  double overall_delayed_fraction() const {
    double s = 0;
    for (std::size_t g = 0; g < kGroupCount; ++g) s += group_mix[g] * delay[g].delayed_fraction;
    return s;
  }
};

namespace detail {

[[noreturn]] inline void bad_field(const std::string& field, const std::string& why) {
  throw DataError("generator config field '" + field + "': " + why);
}

inline void known_keys(const nlohmann::json& j, const std::string& field,
                       std::initializer_list<std::string_view> keys) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) bad_field(field + "." + it.key(), "unknown field");
}

inline void check_rate(const std::string& field, double v) {
  if (!(v >= 0 && v <= 1)) bad_field(field, "must be in [0,1]");
}

inline GroupVector group_vector(const nlohmann::json& j, const std::string& field, GroupVector def) {
  if (!j.is_object()) bad_field(field, "must be an object keyed by group");
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto g = parse_group_name(it.key());
    if (!g) bad_field(field + "." + it.key(), "unknown group");
    if (!it->is_number()) bad_field(field + "." + it.key(), "must be a number");
    def[group_index(*g)] = it->get<double>();
  }
  return def;
}

inline Date date_field(const nlohmann::json& j, const std::string& key, const std::string& field, Date def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_string()) bad_field(field, "must be a YYYY-MM-DD string");
  auto d = Date::parse(j[key].get<std::string>());
  if (!d) bad_field(field, "must be a YYYY-MM-DD string");
  return *d;
}

template <typename T>
T number(const nlohmann::json& j, const std::string& key, const std::string& field, T def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number()) bad_field(field, "must be a number");
  if constexpr (std::is_unsigned_v<T>) {
    if (j[key].is_number_float() || j[key].get<long long>() < 0) bad_field(field, "must be a non-negative integer");
    return j[key].get<T>();
  } else if constexpr (std::is_integral_v<T>) {
    if (j[key].is_number_float()) bad_field(field, "must be an integer");
    return j[key].get<T>();
  } else {
    return j[key].get<T>();
  }
}

}  // namespace detail

inline GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  using namespace detail;
  if (!j.is_object()) throw DataError("generator config must be a JSON object");
  static const std::vector<std::string> known = {
      "seed",     "n_practices", "patients_per_practice", "group_mix", "delay_model", "outcomes",
      "practice_heterogeneity", "anomaly_rates", "timeline", "states", "bifsg", "noise_code_rate",
      "coded_race_rate", "threads"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) bad_field(it.key(), "unknown field");

  GeneratorConfig c = defaults();
  c.seed = number<std::uint64_t>(j, "seed", "seed", c.seed);
  c.n_practices = number<std::size_t>(j, "n_practices", "n_practices", c.n_practices);
  c.threads = number<unsigned>(j, "threads", "threads", c.threads);
  if (j.contains("patients_per_practice")) {
    const auto& p = j["patients_per_practice"];
    if (!p.is_object()) bad_field("patients_per_practice", "must be an object with min and max");
    known_keys(p, "patients_per_practice", {"min", "max"});
    c.patients_min = number<std::size_t>(p, "min", "patients_per_practice.min", c.patients_min);
    c.patients_max = number<std::size_t>(p, "max", "patients_per_practice.max", c.patients_max);
  }
  if (j.contains("group_mix")) c.group_mix = group_vector(j["group_mix"], "group_mix", GroupVector{});
  if (j.contains("delay_model")) {
    const auto& d = j["delay_model"];
    if (!d.is_object()) bad_field("delay_model", "must be an object");
    known_keys(d, "delay_model", {"family", "decay_per_year", "pull_cadence_days", "max_delay_days", "all", "groups"});
    if (d.contains("family")) {
      auto f = d["family"].is_string() ? d["family"].get<std::string>() : "";
      if (f == "lognormal") c.delay_family = DelayFamily::Lognormal;
      else if (f == "geometric") c.delay_family = DelayFamily::Geometric;
      else bad_field("delay_model.family", "must be 'lognormal' or 'geometric'");
    }
    c.delay_decay_per_year = number<double>(d, "decay_per_year", "delay_model.decay_per_year", c.delay_decay_per_year);
    c.pull_cadence_days = number<int>(d, "pull_cadence_days", "delay_model.pull_cadence_days", c.pull_cadence_days);
    c.max_delay_days = number<int>(d, "max_delay_days", "delay_model.max_delay_days", c.max_delay_days);
    auto apply = [&](GroupDelay& gd, const nlohmann::json& o, const std::string& field) {
      if (!o.is_object()) bad_field(field, "must be an object");
      known_keys(o, field, {"delayed_fraction", "log_mean", "log_sd", "geometric_p"});
      gd.delayed_fraction = number<double>(o, "delayed_fraction", field + ".delayed_fraction", gd.delayed_fraction);
      gd.log_mean = number<double>(o, "log_mean", field + ".log_mean", gd.log_mean);
      gd.log_sd = number<double>(o, "log_sd", field + ".log_sd", gd.log_sd);
      gd.geometric_p = number<double>(o, "geometric_p", field + ".geometric_p", gd.geometric_p);
    };
    if (d.contains("all")) {
      for (auto& gd : c.delay) apply(gd, d["all"], "delay_model.all");
    }
    if (d.contains("groups")) {
      const auto& gs = d["groups"];
      if (!gs.is_object()) bad_field("delay_model.groups", "must be an object keyed by group");
      for (auto it = gs.begin(); it != gs.end(); ++it) {
        auto g = parse_group_name(it.key());
        if (!g) bad_field("delay_model.groups." + it.key(), "unknown group");
        apply(c.delay[group_index(*g)], *it, "delay_model.groups." + it.key());
      }
    }
  }
  if (j.contains("outcomes")) {
    const auto& os = j["outcomes"];
    if (!os.is_array()) bad_field("outcomes", "must be an array");
    c.outcomes.clear();
    for (std::size_t i = 0; i < os.size(); ++i) {
      auto field = "outcomes[" + std::to_string(i) + "]";
      const auto& o = os[i];
      if (!o.is_object()) bad_field(field, "must be an object");
      known_keys(o, field, {"name", "codes", "base_rate", "delayed_shift", "group_offsets"});
      OutcomeModel m;
      if (!o.contains("name") || !o["name"].is_string()) bad_field(field + ".name", "required string");
      m.name = o["name"].get<std::string>();
      if (o.contains("codes")) {
        if (!o["codes"].is_array()) bad_field(field + ".codes", "must be an array of strings");
        for (const auto& code : o["codes"]) {
          if (!code.is_string()) bad_field(field + ".codes", "must be an array of strings");
          m.codes.push_back(code.get<std::string>());
        }
      } else {
        for (const auto& cs : default_code_sets())
          if (cs.name() == m.name) m.codes = cs.sorted_codes();
      }
      m.base_rate = number<double>(o, "base_rate", field + ".base_rate", m.base_rate);
      m.delayed_shift = number<double>(o, "delayed_shift", field + ".delayed_shift", m.delayed_shift);
      if (o.contains("group_offsets"))
        m.group_offsets = group_vector(o["group_offsets"], field + ".group_offsets", GroupVector{});
      c.outcomes.push_back(std::move(m));
    }
  }
  if (j.contains("practice_heterogeneity")) {
    const auto& h = j["practice_heterogeneity"];
    if (!h.is_object()) bad_field("practice_heterogeneity", "must be an object");
    known_keys(h, "practice_heterogeneity", {"outcome_sd"});
    c.practice_outcome_sd = number<double>(h, "outcome_sd", "practice_heterogeneity.outcome_sd", c.practice_outcome_sd);
  }
  if (j.contains("anomaly_rates")) {
    const auto& a = j["anomaly_rates"];
    if (!a.is_object()) bad_field("anomaly_rates", "must be an object");
    known_keys(a, "anomaly_rates", {"report_before_opportunity", "never_reported", "unreported_first"});
    c.report_before_opportunity_rate = number<double>(a, "report_before_opportunity",
                                                      "anomaly_rates.report_before_opportunity",
                                                      c.report_before_opportunity_rate);
    c.never_reported_rate = number<double>(a, "never_reported", "anomaly_rates.never_reported", c.never_reported_rate);
    c.unreported_first_rate = number<double>(a, "unreported_first", "anomaly_rates.unreported_first",
                                             c.unreported_first_rate);
  }
  if (j.contains("timeline")) {
    const auto& t = j["timeline"];
    if (!t.is_object()) bad_field("timeline", "must be an object");
    known_keys(t, "timeline", {"practice_start_from", "practice_start_to", "join_from", "join_to", "visit_from",
                               "visit_to", "visit_rate", "birth_year_min", "birth_year_max"});
    c.practice_start_from = date_field(t, "practice_start_from", "timeline.practice_start_from", c.practice_start_from);
    c.practice_start_to = date_field(t, "practice_start_to", "timeline.practice_start_to", c.practice_start_to);
    c.join_from = date_field(t, "join_from", "timeline.join_from", c.join_from);
    c.join_to = date_field(t, "join_to", "timeline.join_to", c.join_to);
    c.visit_from = date_field(t, "visit_from", "timeline.visit_from", c.visit_from);
    c.visit_to = date_field(t, "visit_to", "timeline.visit_to", c.visit_to);
    c.visit_rate = number<double>(t, "visit_rate", "timeline.visit_rate", c.visit_rate);
    c.birth_year_min = number<int>(t, "birth_year_min", "timeline.birth_year_min", c.birth_year_min);
    c.birth_year_max = number<int>(t, "birth_year_max", "timeline.birth_year_max", c.birth_year_max);
  }
  if (j.contains("states")) {
    if (!j["states"].is_array()) bad_field("states", "must be an array of strings");
    c.states.clear();
    for (const auto& s : j["states"]) {
      if (!s.is_string()) bad_field("states", "must be an array of strings");
      c.states.push_back(s.get<std::string>());
    }
  }
  c.noise_code_rate = number<double>(j, "noise_code_rate", "noise_code_rate", c.noise_code_rate);
  c.coded_race_rate = number<double>(j, "coded_race_rate", "coded_race_rate", c.coded_race_rate);
  if (j.contains("bifsg")) {
    const auto& b = j["bifsg"];
    if (!b.is_object()) bad_field("bifsg", "must be an object");
    known_keys(b, "bifsg", {"n_surnames", "n_firstnames", "n_tracts", "concentration", "miscalibration"});
    c.n_surnames = number<std::size_t>(b, "n_surnames", "bifsg.n_surnames", c.n_surnames);
    c.n_firstnames = number<std::size_t>(b, "n_firstnames", "bifsg.n_firstnames", c.n_firstnames);
    c.n_tracts = number<std::size_t>(b, "n_tracts", "bifsg.n_tracts", c.n_tracts);
    c.name_concentration = number<double>(b, "concentration", "bifsg.concentration", c.name_concentration);
    if (b.contains("miscalibration")) {
      const auto& m = b["miscalibration"];
      if (!m.is_object() || !m.contains("group") || !m["group"].is_string())
        bad_field("bifsg.miscalibration", "needs a group name and a factor");
      auto g = parse_group_name(m["group"].get<std::string>());
      if (!g) bad_field("bifsg.miscalibration.group", "unknown group");
      c.miscalibrated_group = *g;
      c.miscalibration_factor = number<double>(m, "factor", "bifsg.miscalibration.factor", 1.0);
    }
  }
  c.validate();
  return c;
}

inline void GeneratorConfig::validate() const {
  using detail::bad_field;
  using detail::check_rate;
  if (n_practices == 0) bad_field("n_practices", "must be positive");
  if (patients_min == 0 || patients_max < patients_min) bad_field("patients_per_practice", "need 0 < min <= max");
  double mix = 0;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    check_rate("group_mix." + std::string(kGroupNames[g]), group_mix[g]);
    mix += group_mix[g];
  }
  if (std::abs(mix - 1.0) > 1e-9) bad_field("group_mix", "must sum to 1");
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    auto field = "delay_model.groups." + std::string(kGroupNames[g]);
    check_rate(field + ".delayed_fraction", delay[g].delayed_fraction);
    if (!(delay[g].log_sd > 0)) bad_field(field + ".log_sd", "must be positive");
    if (!(delay[g].geometric_p > 0 && delay[g].geometric_p <= 1)) bad_field(field + ".geometric_p", "must be in (0,1]");
  }
  if (!(delay_decay_per_year >= 0 && delay_decay_per_year < 1)) bad_field("delay_model.decay_per_year", "must be in [0,1)");
  if (pull_cadence_days < 0) bad_field("delay_model.pull_cadence_days", "must be >= 0");
  if (max_delay_days < 1) bad_field("delay_model.max_delay_days", "must be >= 1");
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& m = outcomes[i];
    auto field = "outcomes[" + std::to_string(i) + "]";
    if (m.name.empty()) bad_field(field + ".name", "must be non-empty");
    if (m.codes.empty()) bad_field(field + ".codes", "no codes given and no built-in set named '" + m.name + "'");
    check_rate(field + ".base_rate", m.base_rate);
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      double lo = m.base_rate + m.group_offsets[g], hi = lo + m.delayed_shift;
      if (lo < 0 || lo > 1 || hi < 0 || hi > 1)
        bad_field(field + ".delayed_shift", "outcome probability for " + std::string(kGroupNames[g]) + " leaves [0,1]");
    }
  }
  if (practice_outcome_sd < 0) bad_field("practice_heterogeneity.outcome_sd", "must be >= 0");
  check_rate("anomaly_rates.report_before_opportunity", report_before_opportunity_rate);
  check_rate("anomaly_rates.never_reported", never_reported_rate);
  check_rate("anomaly_rates.unreported_first", unreported_first_rate);
  if (report_before_opportunity_rate + never_reported_rate > 1) bad_field("anomaly_rates", "rates sum above 1");
  check_rate("coded_race_rate", coded_race_rate);
  check_rate("noise_code_rate", noise_code_rate);
  check_rate("timeline.visit_rate", visit_rate);
  if (practice_start_to < practice_start_from) bad_field("timeline.practice_start_to", "before practice_start_from");
  if (join_to < join_from) bad_field("timeline.join_to", "before join_from");
  if (visit_to < visit_from) bad_field("timeline.visit_to", "before visit_from");
  if (birth_year_max < birth_year_min) bad_field("timeline.birth_year_max", "below birth_year_min");
  if (states.empty()) bad_field("states", "must be non-empty");
  for (const auto& s : states)
    if (s.empty() || s.find('/') != std::string::npos) bad_field("states", "state codes must be non-empty without '/'");
  if (n_surnames < kGroupCount) bad_field("bifsg.n_surnames", "need at least one name per group");
  if (n_firstnames < kGroupCount) bad_field("bifsg.n_firstnames", "need at least one name per group");
  if (n_tracts < kGroupCount) bad_field("bifsg.n_tracts", "need at least one tract per group");
  if (name_concentration < 0) bad_field("bifsg.concentration", "must be >= 0");
  if (!(miscalibration_factor > 0)) bad_field("bifsg.miscalibration.factor", "must be positive");
}

inline nlohmann::ordered_json GeneratorConfig::to_json() const {
  nlohmann::ordered_json j;
  auto gv = [](const GroupVector& v) {
    nlohmann::ordered_json o;
    for (std::size_t g = 0; g < kGroupCount; ++g) o[std::string(kGroupNames[g])] = v[g];
    return o;
  };
  j["seed"] = seed;
  j["n_practices"] = n_practices;
  j["patients_per_practice"] = {{"min", patients_min}, {"max", patients_max}};
  j["group_mix"] = gv(group_mix);
  nlohmann::ordered_json d;
  d["family"] = delay_family == DelayFamily::Lognormal ? "lognormal" : "geometric";
  d["decay_per_year"] = delay_decay_per_year;
  d["pull_cadence_days"] = pull_cadence_days;
  d["max_delay_days"] = max_delay_days;
  nlohmann::ordered_json groups;
  for (std::size_t g = 0; g < kGroupCount; ++g)
    groups[std::string(kGroupNames[g])] = {{"delayed_fraction", delay[g].delayed_fraction},
                                           {"log_mean", delay[g].log_mean},
                                           {"log_sd", delay[g].log_sd},
                                           {"geometric_p", delay[g].geometric_p}};
  d["groups"] = groups;
  j["delay_model"] = d;
  auto os = nlohmann::ordered_json::array();
  for (const auto& m : outcomes)
    os.push_back({{"name", m.name},
                  {"codes", m.codes},
                  {"base_rate", m.base_rate},
                  {"delayed_shift", m.delayed_shift},
                  {"group_offsets", gv(m.group_offsets)}});
  j["outcomes"] = os;
  j["practice_heterogeneity"] = {{"outcome_sd", practice_outcome_sd}};
  j["anomaly_rates"] = {{"report_before_opportunity", report_before_opportunity_rate},
                        {"never_reported", never_reported_rate},
                        {"unreported_first", unreported_first_rate}};
  j["timeline"] = {{"practice_start_from", practice_start_from.str()}, {"practice_start_to", practice_start_to.str()},
                   {"join_from", join_from.str()},       {"join_to", join_to.str()},
                   {"visit_from", visit_from.str()},     {"visit_to", visit_to.str()},
                   {"visit_rate", visit_rate},           {"birth_year_min", birth_year_min},
                   {"birth_year_max", birth_year_max}};
  j["states"] = states;
  j["noise_code_rate"] = noise_code_rate;
  j["coded_race_rate"] = coded_race_rate;
  nlohmann::ordered_json b = {{"n_surnames", n_surnames},
                              {"n_firstnames", n_firstnames},
                              {"n_tracts", n_tracts},
                              {"concentration", name_concentration}};
  if (miscalibrated_group)
    b["miscalibration"] = {{"group", std::string(group_name(*miscalibrated_group))},
                           {"factor", miscalibration_factor}};
  j["bifsg"] = b;
  return j;
}

// ---------------------------------------------------------------------------
// Ground truth

enum class Anomaly : std::uint8_t { None, ReportBeforeOpportunity, NeverReported };

inline std::string_view anomaly_name(Anomaly a) {
  switch (a) {
    case Anomaly::None: return "none";
    case Anomaly::ReportBeforeOpportunity: return "report_before_opportunity";
    case Anomaly::NeverReported: return "never_reported";
  }
  return "";
}

struct TruthPatient {
  std::string patient_id;
  std::string practice_id;
  AssessmentGroup group{};
  OmbRace race{};
  bool hispanic = false;
  bool delayed = false;
  std::int32_t delay_days = 0;
  Date join;         // first DOB record
  Date opportunity;  // later of join and practice start
  Date report;       // race report date (unset meaning for never-reported patients)
  Anomaly anomaly = Anomaly::None;
  std::vector<std::vector<Quarter>> outcome_quarters;  // per configured outcome
};

struct PracticeBatch {
  std::size_t practice_index = 0;
  std::vector<RawRow> records;
  std::vector<TruthPatient> truth;
};

// Name and tract likelihoods shared by every practice.
struct NameModel {
  std::array<std::vector<double>, kGroupCount> surname, firstname, tract;  // P(key | group)
  std::array<std::discrete_distribution<std::size_t>, kGroupCount> draw_surname, draw_firstname, draw_tract;
};

inline std::string surname_key(std::size_t i) { return "SUR" + std::to_string(10000 + i).substr(1); }
inline std::string firstname_key(std::size_t i) { return "FIRST" + std::to_string(10000 + i).substr(1); }
inline std::string tract_key(std::size_t i) { return "T" + std::to_string(10000 + i).substr(1); }

inline NameModel build_name_model(const GeneratorConfig& c) {
  std::mt19937_64 rng(replicate_seed(c.seed, 0xB1F5ULL));
  NameModel m;
  auto build = [&](std::size_t n, std::array<std::vector<double>, kGroupCount>& lik) {
    // The first kGroupCount keys cover every group once, the rest follow the mix.
    std::discrete_distribution<std::size_t> home_draw(c.group_mix.begin(), c.group_mix.end());
    std::vector<std::size_t> home(n);
    for (std::size_t k = 0; k < n; ++k) home[k] = k < kGroupCount ? k : home_draw(rng);
    std::uniform_real_distribution<double> jitter(0.5, 1.5);
    for (auto& v : lik) v.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      double scale = jitter(rng);
      for (std::size_t g = 0; g < kGroupCount; ++g) {
        double w = c.name_concentration == 0 ? (g == home[k] ? 1.0 : 0.0)
                                             : (g == home[k] ? c.name_concentration : 1.0);
        lik[g][k] = w * scale;
      }
    }
    for (auto& v : lik) {
      double s = 0;
      for (double x : v) s += x;
      for (double& x : v) x /= s;
    }
  };
  build(c.n_surnames, m.surname);
  build(c.n_firstnames, m.firstname);
  build(c.n_tracts, m.tract);
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    m.draw_surname[g] = std::discrete_distribution<std::size_t>(m.surname[g].begin(), m.surname[g].end());
    m.draw_firstname[g] = std::discrete_distribution<std::size_t>(m.firstname[g].begin(), m.firstname[g].end());
    m.draw_tract[g] = std::discrete_distribution<std::size_t>(m.tract[g].begin(), m.tract[g].end());
  }
  return m;
}

// Toy prior tables consistent with the generator: surname rows are the exact
// posteriors P(group | surname) under the group mix (optionally distorted for
// one group), first-name and geography rows are the sampling likelihoods.
inline PriorTables prior_tables(const GeneratorConfig& c, const NameModel& m) {
  using K = PriorTables::Kind;
  PriorTables t;
  t.insert(K::Surname, "*", c.group_mix);
  for (std::size_t k = 0; k < c.n_surnames; ++k) {
    GroupVector v{};
    double s = 0;
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      v[g] = m.surname[g][k] * c.group_mix[g];
      if (c.miscalibrated_group && group_index(*c.miscalibrated_group) == g) v[g] *= c.miscalibration_factor;
      s += v[g];
    }
    if (s > 0)
      for (double& x : v) x /= s;
    else
      v = c.group_mix;
    t.insert(K::Surname, surname_key(k), v);
  }
  for (std::size_t k = 0; k < c.n_firstnames; ++k) {
    GroupVector v{};
    for (std::size_t g = 0; g < kGroupCount; ++g) v[g] = m.firstname[g][k];
    t.insert(K::Firstname, firstname_key(k), v);
  }
  for (const auto& st : c.states) {
    for (std::size_t k = 0; k < c.n_tracts; ++k) {
      GroupVector v{};
      for (std::size_t g = 0; g < kGroupCount; ++g) v[g] = m.tract[g][k];
      t.insert(K::Geography, PriorTables::normalize_key(st + "/" + tract_key(k)), v);
    }
  }
  return t;
}

namespace detail {

inline Date uniform_date(std::mt19937_64& rng, Date from, Date to) {
  std::uniform_int_distribution<int> d(0, to - from);
  return from + d(rng);
}

inline bool bernoulli(std::mt19937_64& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

struct RaceText {
  std::string_view race_text, race_code;
};

inline RaceText race_strings(OmbRace r) {
  switch (r) {
    case OmbRace::AIAN: return {"American Indian or Alaska Native", "1002-5"};
    case OmbRace::Asian: return {"Asian", "2028-9"};
    case OmbRace::Black: return {"Black or African American", "2054-5"};
    case OmbRace::NHPI: return {"Native Hawaiian or Other Pacific Islander", "2076-8"};
    case OmbRace::White: return {"White", "2106-3"};
    default: return {"Some Other Race", "2131-1"};
  }
}

struct PracticePlan {
  std::string id;
  std::string state;
  Date start;
  int pull_offset = 0;
  std::size_t first_patient = 0;
  std::size_t n_patients = 0;
};

}  // namespace detail

// Delay draw for a delayed patient (>= 1 day, capped).
inline std::int32_t draw_delay(const GeneratorConfig& c, const GroupDelay& gd, double years_since_start,
                               std::mt19937_64& rng) {
  double shrink = std::pow(1.0 - c.delay_decay_per_year, years_since_start);
  double days = 0;
  if (c.delay_family == DelayFamily::Lognormal) {
    std::lognormal_distribution<double> ln(gd.log_mean + std::log(shrink), gd.log_sd);
    days = std::round(ln(rng));
  } else {
    std::geometric_distribution<long> geo(gd.geometric_p);
    days = (1.0 + static_cast<double>(geo(rng))) * shrink;
    days = std::round(days);
  }
  return static_cast<std::int32_t>(std::clamp(days, 1.0, static_cast<double>(c.max_delay_days)));
}

inline PracticeBatch generate_practice(const GeneratorConfig& c, const NameModel& names,
                                       const detail::PracticePlan& plan, std::size_t practice_index) {
  std::mt19937_64 rng(replicate_seed(c.seed, practice_index + 1));
  PracticeBatch batch;
  batch.practice_index = practice_index;
  std::discrete_distribution<std::size_t> group_draw(c.group_mix.begin(), c.group_mix.end());
  std::normal_distribution<double> effect(0.0, 1.0);
  std::vector<double> practice_effect(c.outcomes.size(), 0.0);
  if (c.practice_outcome_sd > 0)
    for (auto& e : practice_effect) e = c.practice_outcome_sd * effect(rng);
  auto draw_surname = names.draw_surname;
  auto draw_firstname = names.draw_firstname;
  auto draw_tract = names.draw_tract;
  const auto& unknown_texts = unknown_text_list();
  const auto& unknown_codes = unknown_code_list();

  struct Pending {
    Date date;
    RecordKind kind;
    std::string value;
  };
  std::vector<Pending> recs;
  for (std::size_t k = 0; k < plan.n_patients; ++k) {
    TruthPatient t;
    t.patient_id = "PT" + std::to_string(100000000 + plan.first_patient + k).substr(1);
    t.practice_id = plan.id;
    auto gi = group_draw(rng);
    t.group = kAllGroups[gi];
    switch (t.group) {
      case AssessmentGroup::AIAN: t.race = OmbRace::AIAN; break;
      case AssessmentGroup::API: t.race = detail::bernoulli(rng, 0.8) ? OmbRace::Asian : OmbRace::NHPI; break;
      case AssessmentGroup::Black: t.race = OmbRace::Black; break;
      case AssessmentGroup::Hispanic:
        t.race = detail::bernoulli(rng, 0.5) ? OmbRace::White : OmbRace::Other;
        t.hispanic = true;
        break;
      case AssessmentGroup::White: t.race = OmbRace::White; break;
    }
    t.join = detail::uniform_date(rng, c.join_from, c.join_to);
    t.opportunity = std::max(t.join, plan.start);
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (u < c.never_reported_rate) t.anomaly = Anomaly::NeverReported;
    else if (u < c.never_reported_rate + c.report_before_opportunity_rate) t.anomaly = Anomaly::ReportBeforeOpportunity;
    const auto& gd = c.delay[gi];
    t.delayed = detail::bernoulli(rng, gd.delayed_fraction);
    if (t.delayed) {
      double years = static_cast<double>(t.opportunity - c.join_from) / 365.25;
      t.delay_days = draw_delay(c, gd, years, rng);
      if (c.pull_cadence_days > 0) {
        Date r = t.opportunity + t.delay_days;
        int phase = (r - plan.start - plan.pull_offset) % c.pull_cadence_days;
        if (phase < 0) phase += c.pull_cadence_days;
        if (phase != 0) t.delay_days += c.pull_cadence_days - phase;
      }
    }
    t.report = t.opportunity + t.delay_days;
    Date dob_record = t.join;
    if (t.anomaly == Anomaly::ReportBeforeOpportunity) {
      // The DOB timestamp lands after the race report.
      dob_record = t.report + std::uniform_int_distribution<int>(1, 180)(rng);
    }

    std::uniform_int_distribution<int> by(c.birth_year_min, c.birth_year_max);
    std::uniform_int_distribution<int> bm(1, 12), bd(1, 28);
    Date birth = Date::from_ymd(by(rng), static_cast<unsigned>(bm(rng)), static_cast<unsigned>(bd(rng)));
    const auto& state = plan.state;
    auto tract = draw_tract[gi](rng);
    auto sur = draw_surname[gi](rng);
    auto first = draw_firstname[gi](rng);

    recs.clear();
    recs.push_back({dob_record, RecordKind::DateOfBirth, birth.str()});
    recs.push_back({t.join, RecordKind::Geography, state + "/" + tract_key(tract)});
    recs.push_back({t.join, RecordKind::NameKeys, surname_key(sur) + "|" + firstname_key(first)});

    bool unknown_first = t.anomaly == Anomaly::NeverReported ||
                         (t.delayed && t.anomaly == Anomaly::None && detail::bernoulli(rng, c.unreported_first_rate));
    if (unknown_first) {
      std::uniform_int_distribution<std::size_t> ut(0, unknown_texts.size() - 1), uc(0, unknown_codes.size() - 1);
      recs.push_back({t.join, RecordKind::RaceText, unknown_texts[ut(rng)]});
      recs.push_back({t.join, RecordKind::RaceCode, unknown_codes[uc(rng)]});
    }
    if (t.anomaly != Anomaly::NeverReported) {
      auto rs = detail::race_strings(t.race);
      if (detail::bernoulli(rng, c.coded_race_rate)) {
        recs.push_back({t.report, RecordKind::RaceCode,
                        std::string(rs.race_code) + (t.hispanic ? "|2135-2" : "|2186-5")});
      } else {
        recs.push_back({t.report, RecordKind::RaceText, std::string(rs.race_text)});
        recs.push_back({t.report, RecordKind::EthnicityText,
                        t.hispanic ? "Hispanic or Latino" : "Not Hispanic or Latino"});
      }
    }

    t.outcome_quarters.resize(c.outcomes.size());
    Date vstart = std::max(t.join, c.visit_from);
    if (vstart <= c.visit_to) {
      for (auto q = Quarter::containing(vstart); q.start() <= c.visit_to; q = q.next()) {
        if (!detail::bernoulli(rng, c.visit_rate)) continue;
        Date lo = std::max(q.start(), vstart), hi = std::min(q.end(), c.visit_to);
        Date visit = detail::uniform_date(rng, lo, hi);
        recs.push_back({visit, RecordKind::Visit, "office"});
        for (std::size_t o = 0; o < c.outcomes.size(); ++o) {
          const auto& m = c.outcomes[o];
          double p = m.base_rate + m.group_offsets[gi] + (t.delayed ? m.delayed_shift : 0.0) + practice_effect[o];
          if (detail::bernoulli(rng, std::clamp(p, 0.0, 1.0))) {
            std::uniform_int_distribution<std::size_t> pick(0, m.codes.size() - 1);
            recs.push_back({visit, RecordKind::OutcomeCode, m.codes[pick(rng)]});
            t.outcome_quarters[o].push_back(q);
          }
        }
        if (detail::bernoulli(rng, c.noise_code_rate))
          recs.push_back({visit, RecordKind::OutcomeCode,
                          "NOISE-" + std::to_string(std::uniform_int_distribution<int>(1, 999)(rng))});
      }
    }
    std::stable_sort(recs.begin(), recs.end(), [](const Pending& a, const Pending& b) { return a.date < b.date; });
    for (auto& r : recs)
      batch.records.push_back({t.patient_id, plan.id, r.date.str(), std::string(kind_name(r.kind)), std::move(r.value)});
    batch.truth.push_back(std::move(t));
  }
  return batch;
}

// Calls `sink` once per practice in practice order. Practices are generated
// in parallel blocks from per-practice seeds, so output does not depend on
// the thread count.
inline void generate(const GeneratorConfig& c, const std::function<void(PracticeBatch&&)>& sink) {
  c.validate();
  auto names = build_name_model(c);
  std::mt19937_64 rng(replicate_seed(c.seed, 0));
  std::vector<detail::PracticePlan> plans(c.n_practices);
  std::uniform_int_distribution<std::size_t> size_draw(c.patients_min, c.patients_max);
  std::uniform_int_distribution<std::size_t> state_draw(0, c.states.size() - 1);
  std::size_t next_patient = 0;
  for (std::size_t i = 0; i < c.n_practices; ++i) {
    auto& p = plans[i];
    p.id = "PR" + std::to_string(100000 + i).substr(1);
    p.state = c.states[state_draw(rng)];
    p.start = detail::uniform_date(rng, c.practice_start_from, c.practice_start_to);
    p.pull_offset = c.pull_cadence_days > 0 ? std::uniform_int_distribution<int>(0, c.pull_cadence_days - 1)(rng) : 0;
    p.n_patients = size_draw(rng);
    p.first_patient = next_patient;
    next_patient += p.n_patients;
  }
  constexpr std::size_t kBlock = 64;
  for (std::size_t b = 0; b < plans.size(); b += kBlock) {
    std::size_t e = std::min(plans.size(), b + kBlock);
    std::vector<PracticeBatch> batches(e - b);
    parallel_for(e - b, c.threads, [&](std::size_t i) { batches[i] = generate_practice(c, names, plans[b + i], b + i); });
    for (auto& batch : batches) sink(std::move(batch));
  }
}

struct Generated {
  std::vector<RawRow> records;
  std::vector<TruthPatient> truth;
  PriorTables tables;
};

inline Generated generate(const GeneratorConfig& c) {
  Generated g;
  generate(c, [&](PracticeBatch&& b) {
    for (auto& r : b.records) g.records.push_back(std::move(r));
    for (auto& t : b.truth) g.truth.push_back(std::move(t));
  });
  g.tables = prior_tables(c, build_name_model(c));
  return g;
}

inline EventStore to_store(const std::vector<RawRow>& rows) {
  EventStoreBuilder b;
  for (const auto& r : rows)
    if (auto err = b.add(r)) throw DataError("generated row rejected: " + *err);
  return std::move(b).finish();
}

inline void append_record_json(std::string& out, const RawRow& r) {
  out += "{\"patient_id\":";
  text::append_json_string(out, r.patient_id);
  out += ",\"practice_id\":";
  text::append_json_string(out, r.practice_id);
  out += ",\"date\":";
  text::append_json_string(out, r.date);
  out += ",\"kind\":";
  text::append_json_string(out, r.kind);
  out += ",\"value\":";
  text::append_json_string(out, r.value);
  out += "}\n";
}

inline std::string truth_json(const GeneratorConfig& c, const TruthPatient& t) {
  nlohmann::ordered_json j;
  j["record"] = "patient";
  j["patient_id"] = t.patient_id;
  j["practice_id"] = t.practice_id;
  j["group"] = std::string(group_name(t.group));
  j["race"] = std::string(race_name(t.race));
  j["hispanic"] = t.hispanic;
  j["delayed"] = t.delayed;
  j["delay_days"] = t.delay_days;
  j["join_date"] = t.join.str();
  j["opportunity_date"] = t.opportunity.str();
  if (t.anomaly == Anomaly::NeverReported) j["report_date"] = nullptr;
  else j["report_date"] = t.report.str();
  j["anomaly"] = std::string(anomaly_name(t.anomaly));
  nlohmann::ordered_json outs = nlohmann::ordered_json::object();
  for (std::size_t o = 0; o < c.outcomes.size(); ++o) {
    auto arr = nlohmann::ordered_json::array();
    for (auto q : t.outcome_quarters[o]) arr.push_back(q.str());
    outs[c.outcomes[o].name] = arr;
  }
  j["outcome_quarters"] = outs;
  return j.dump();
}

inline std::string truth_summary_json(const GeneratorConfig& c) {
  nlohmann::ordered_json j;
  j["record"] = "summary";
  nlohmann::ordered_json d;
  for (std::size_t g = 0; g < kGroupCount; ++g) d[std::string(kGroupNames[g])] = c.delay[g].delayed_fraction;
  j["intended_delayed_fraction"] = d;
  j["intended_overall_delayed_fraction"] = c.overall_delayed_fraction();
  nlohmann::ordered_json gaps;
  for (const auto& m : c.outcomes) gaps[m.name] = m.delayed_shift;
  j["intended_outcome_gap_delayed"] = gaps;
  j["config"] = c.to_json();
  return j.dump();
}

// Streams records (JSONL) and ground truth (JSONL, summary line first).
inline void write_generated(const GeneratorConfig& c, std::ostream& records, std::ostream* truth) {
  if (truth) *truth << truth_summary_json(c) << '\n';
  std::string buf;
  generate(c, [&](PracticeBatch&& b) {
    buf.clear();
    for (const auto& r : b.records) append_record_json(buf, r);
    records << buf;
    if (truth)
      for (const auto& t : b.truth) *truth << truth_json(c, t) << '\n';
  });
}

// ---------------------------------------------------------------------------
// Analytic expectations

// Tail of the delayed-patient delay: P(d > k) for the lognormal family
// without decay or pull batching.
inline double delay_tail(const GeneratorConfig& c, const GroupDelay& gd, int k) {
  if (k <= 0) return 1.0;
  if (k >= c.max_delay_days) return 0.0;
  if (c.delay_family == DelayFamily::Geometric) return std::pow(1.0 - gd.geometric_p, k);
  double z = (std::log(k + 0.5) - gd.log_mean) / gd.log_sd;
  return 1.0 - stats::normal_cdf(z);
}

struct ExpectedErrors {
  GroupVector invisible_fraction{};  // q_g: delayed cohort members not visible at t_initial
  GroupVector prevalence_error{};    // final - initial per group
  double average_prevalence_error = 0;
};

// Expected prevalence errors at t_initial for a cohort quarter, for one
// outcome with delayed shift s and no practice effects or anomalies:
// err_g = s d q (1 - d) / (1 - d q), with d the delayed fraction and q the
// chance a delayed member is still unreported at t_initial. The opportunity
// date is the later of a uniform join date and a uniform practice start,
// both conditioned on preceding the quarter.
inline ExpectedErrors expected_errors(const GeneratorConfig& c, Quarter quarter, double delayed_shift) {
  Date p_start = quarter.start();
  Date t_init = quarter.end() + 1;
  auto cdf = [](Date from, Date to, Date x) {
    if (x < from) return 0.0;
    if (x >= to) return 1.0;
    return static_cast<double>(x - from + 1) / static_cast<double>(to - from + 1);
  };
  Date j_to = std::min(c.join_to, p_start - 1);
  Date s_to = std::min(c.practice_start_to, p_start - 1);
  ExpectedErrors out;
  if (j_to < c.join_from || s_to < c.practice_start_from) return out;
  Date lo = std::min(c.join_from, c.practice_start_from);
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    double q = 0, prev = 0;
    for (Date x = lo; x <= std::max(j_to, s_to); x = x + 1) {
      double f = cdf(c.join_from, j_to, x) * cdf(c.practice_start_from, s_to, x);
      q += (f - prev) * delay_tail(c, c.delay[g], t_init - x);
      prev = f;
    }
    double d = c.delay[g].delayed_fraction;
    out.invisible_fraction[g] = q;
    out.prevalence_error[g] = d * q < 1 ? delayed_shift * d * q * (1 - d) / (1 - d * q) : 0.0;
  }
  double s = 0;
  for (double e : out.prevalence_error) s += std::abs(e);
  out.average_prevalence_error = s / kGroupCount;
  return out;
}

// ---------------------------------------------------------------------------
// Phenomena checks

struct PhenomenonResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Direction checks implied by a config on engine output for one cohort.
inline std::vector<PhenomenonResult> phenomena_check(const GeneratorConfig& c, const DelayEngine& engine,
                                                     const Cohort& cohort) {
  std::vector<PhenomenonResult> out;
  for (std::size_t o = 0; o < cohort.outcome_names.size(); ++o) {
    const OutcomeModel* model = nullptr;
    for (const auto& m : c.outcomes)
      if (m.name == cohort.outcome_names[o]) model = &m;
    if (!model) continue;
    auto series = snapshot_series(cohort, o);
    auto rep = error_report(series);
    const auto& first = series.rows.front();
    PhenomenonResult r;
    if (model->delayed_shift > 0) {
      r.name = "positive_prevalence_errors[" + model->name + "]";
      r.passed = true;
      for (std::size_t g = 0; g < kGroupCount; ++g) {
        const auto& ge = rep.groups[g];
        if (!ge.prevalence_error) continue;
        double p = *ge.initial, n = static_cast<double>(first[g].denominator);
        double sigma = std::sqrt(std::max(p * (1 - p), 1e-12) / n);
        bool ok = *ge.prevalence_error > -3 * sigma;
        r.passed = r.passed && ok;
        r.detail += std::string(kGroupNames[g]) + "=" + text::format_double(*ge.prevalence_error) + (ok ? " " : "(!) ");
      }
    } else {
      r.name = "null_prevalence_error[" + model->name + "]";
      double sum = 0, var = 0;
      std::size_t used = 0;
      for (std::size_t g = 0; g < kGroupCount; ++g) {
        const auto& ge = rep.groups[g];
        if (!ge.prevalence_error) continue;
        double p = *ge.initial, n = static_cast<double>(first[g].denominator);
        sum += *ge.prevalence_error;
        var += std::max(p * (1 - p), 1e-12) / n;
        ++used;
      }
      double mean = used ? sum / static_cast<double>(used) : 0.0;
      double sigma = used ? std::sqrt(var) / static_cast<double>(used) : 0.0;
      r.passed = std::abs(mean) <= 3 * sigma;
      r.detail = "mean signed error " + text::format_double(mean) + ", 3 sigma " + text::format_double(3 * sigma);
    }
    out.push_back(std::move(r));

    PhenomenonResult z;
    z.name = "zero_error_at_t_final[" + model->name + "]";
    auto last = series.rows.size() - 1;
    auto self = error_report(series, last, last);
    z.passed = true;
    for (const auto& ge : self.groups)
      if (ge.prevalence_error && *ge.prevalence_error != 0.0) z.passed = false;
    for (const auto& pe : self.pairs)
      if (pe.disparity_error != 0.0) z.passed = false;
    z.detail = z.passed ? "all zero" : "non-zero error at t_final";
    out.push_back(std::move(z));
  }

  // Curve ordering for stochastically ordered lognormal delay settings.
  std::vector<PatientIndex> members;
  for (const auto& m : cohort.members) members.push_back(m.patient);
  auto curves = cumulative_curves(engine, members, 3 * 365);
  for (const auto& a : curves.curves) {
    for (const auto& b : curves.curves) {
      const auto& da = c.delay[group_index(a.group)];
      const auto& db = c.delay[group_index(b.group)];
      bool earlier = da.delayed_fraction <= db.delayed_fraction && da.log_mean <= db.log_mean &&
                     da.log_sd == db.log_sd && (da.delayed_fraction < db.delayed_fraction || da.log_mean < db.log_mean);
      if (!earlier || c.delay_family != DelayFamily::Lognormal) continue;
      PhenomenonResult r;
      r.name = "curve_dominance[" + std::string(group_name(a.group)) + ">" + std::string(group_name(b.group)) + "]";
      r.passed = true;
      double worst = 0;
      for (std::size_t i = 0; i < a.points.size(); ++i) {
        double fa = a.points[i].cumulative_fraction, fb = b.points[i].cumulative_fraction;
        double sigma = std::sqrt(fa * (1 - fa) / static_cast<double>(a.members) +
                                 fb * (1 - fb) / static_cast<double>(b.members));
        if (fa < fb - 3 * sigma - 1e-12) r.passed = false;
        worst = std::min(worst, fa - fb);
      }
      r.detail = "largest shortfall " + text::format_double(worst);
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace delaylens::synth
