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

#include <array>
#include <atomic>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "delaylens/date.hpp"
#include "delaylens/error.hpp"
#include "delaylens/event_store.hpp"
#include "delaylens/text.hpp"

namespace delaylens {

// OMB 1997 race categories.
enum class OmbRace : std::uint8_t { AIAN, Asian, Black, NHPI, White, Multiracial, Other };
inline constexpr std::array<std::string_view, 7> kOmbRaceNames = {"AIAN",  "Asian",       "Black", "NHPI",
                                                                  "White", "Multiracial", "Other"};
inline std::string_view race_name(OmbRace r) { return kOmbRaceNames[static_cast<std::size_t>(r)]; }
inline std::optional<OmbRace> parse_race_name(std::string_view s) {
  for (std::size_t i = 0; i < kOmbRaceNames.size(); ++i)
    if (text::lower(kOmbRaceNames[i]) == text::lower(text::trim(s))) return static_cast<OmbRace>(i);
  return std::nullopt;
}

enum class Hispanic : std::uint8_t { Unstated, Yes, No };

// Mutually exclusive groups used for prevalence estimates.
enum class AssessmentGroup : std::uint8_t { AIAN, API, Black, Hispanic, White };
inline constexpr std::size_t kGroupCount = 5;
inline constexpr std::array<std::string_view, kGroupCount> kGroupNames = {"AIAN", "API", "Black", "Hispanic",
                                                                          "White"};
inline constexpr std::array<AssessmentGroup, kGroupCount> kAllGroups = {
    AssessmentGroup::AIAN, AssessmentGroup::API, AssessmentGroup::Black, AssessmentGroup::Hispanic,
    AssessmentGroup::White};
inline std::string_view group_name(AssessmentGroup g) { return kGroupNames[static_cast<std::size_t>(g)]; }
inline std::size_t group_index(AssessmentGroup g) { return static_cast<std::size_t>(g); }
inline std::optional<AssessmentGroup> parse_group_name(std::string_view s) {
  auto l = text::lower(text::trim(s));
  for (std::size_t i = 0; i < kGroupCount; ++i)
    if (text::lower(kGroupNames[i]) == l) return static_cast<AssessmentGroup>(i);
  return std::nullopt;
}

struct RaceClassification {
  bool unreported = true;
  OmbRace race = OmbRace::Other;  // meaningful only when reported
  Hispanic hispanic = Hispanic::Unstated;
  bool parse_warning = false;  // free text matched neither a category nor the unknown list
};

struct RaceObservation {
  PatientIndex patient = 0;
  PracticeIndex practice = 0;
  Date report_date;
  std::uint64_t record_seq = 0;
  std::optional<OmbRace> race;  // nullopt: unreported
  Hispanic hispanic = Hispanic::Unstated;

  bool reported() const { return race.has_value(); }
};

// Hispanic ethnicity takes precedence; Asian and NHPI merge into API; Other
// and Multiracial belong to no group.
inline std::optional<AssessmentGroup> assessment_group(OmbRace race, Hispanic hispanic) {
  if (hispanic == Hispanic::Yes) return AssessmentGroup::Hispanic;
  switch (race) {
    case OmbRace::AIAN: return AssessmentGroup::AIAN;
    case OmbRace::Asian:
    case OmbRace::NHPI: return AssessmentGroup::API;
    case OmbRace::Black: return AssessmentGroup::Black;
    case OmbRace::White: return AssessmentGroup::White;
    case OmbRace::Multiracial:
    case OmbRace::Other: return std::nullopt;
  }
  return std::nullopt;
}

inline std::optional<AssessmentGroup> assessment_group(const RaceObservation& obs) {
  if (!obs.reported()) throw ContractError("assessment_group: observation is unreported");
  return assessment_group(*obs.race, obs.hispanic);
}

// Keyword tables driving classification. Text entries are stored lowercased,
// code entries uppercased.
struct HarmonizerConfig {
  std::unordered_set<std::string> unknown_text;
  std::unordered_set<std::string> unknown_codes;
  std::unordered_map<std::string, OmbRace> race_synonyms;
  std::vector<std::pair<std::string, OmbRace>> race_keywords;  // ordered substring rules
  std::unordered_map<std::string, OmbRace> race_codes;
  std::unordered_set<std::string> hispanic_synonyms;
  std::unordered_set<std::string> non_hispanic_synonyms;
  std::vector<std::string> hispanic_keywords;
  std::vector<std::string> non_hispanic_keywords;
  std::unordered_set<std::string> hispanic_codes;
  std::unordered_set<std::string> non_hispanic_codes;

  static HarmonizerConfig defaults();
  static HarmonizerConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
  static HarmonizerConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open harmonizer config " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("harmonizer config " + path + ": " + e.what());
    }
  }
};

// Free-text values that, with an uninformative code, mean race is unknown or
// declined. Duplicates in the source list collapse in the set.
inline const std::vector<std::string>& unknown_text_list() {
  static const std::vector<std::string> v = {
      "race not reported - don't know", "nh", "unspecified", "do not use", "not hispanic/latino ethnicity",
      "other/declined", "non-hispanic", "not of hispanic, latino/a or spanish origin", "refuse", "not hispanic",
      "declined", "unknown", "patient declined information", "unreported/refused to report", "patient declined",
      "not set", "refuse to report/ unreported", "declined to answer", "not reported", "non hispanic", "withheld",
      "unknown/unwilling", "u", "<none>", "NA", "unknown/unreported", "decline to answer", "refused to report",
      "unknown / not reported", "not hispanic or latino", "non hispanic-non latino", "non - hispanic/latino",
      "prefers not to answer", "*unspecified", "refused", "refused to report/unreported", "unknown/not reported",
      "not hispanic / latino", "dec", "refused, unknown", "undefined", "chose not to disclose", "unk",
      "race not reported - refusal", "non hispanic or latino", "n", "nsp", "x", "unk", "declines to state",
      "unavailable / unknown", "refus", "dec", "not hispanic, latino/a, or spanish origin",
      "non-hispanic / non latino", "state prohibited", "decline", "declined to specify", "not provided",
      "patient refused", "un", "unreported / refused to report", "race not reported - not ascertained",
      "unknown to patient", "declines to specify", "decli", "dc", "ds", "ua", "uo", "n", "d", "u", "r", "unkno",
      "nr", "unreported / unknown (uds)", "unreported / unknown", "unavailable", "2186-5", "9"};
  return v;
}

// Codes carrying no race information. "nan" stands for a missing value and
// is represented by the empty string as well.
inline const std::vector<std::string>& unknown_code_list() {
  static const std::vector<std::string> v = {"UNK", "NA", "UN",  "U",  "2186-5", "nan", "UNK", "UN",
                                             "2186 - 5", "N", "312507", "NH", "NR", "ASKU"};
  return v;
}

inline HarmonizerConfig HarmonizerConfig::defaults() {
  HarmonizerConfig c;
  for (const auto& s : unknown_text_list()) c.unknown_text.insert(text::lower(text::trim(s)));
  for (const auto& s : unknown_code_list()) c.unknown_codes.insert(text::upper(text::trim(s)));
  c.unknown_codes.insert("");

  using R = OmbRace;
  c.race_synonyms = {
      {"american indian or alaska native", R::AIAN}, {"american indian", R::AIAN}, {"alaska native", R::AIAN},
      {"native american", R::AIAN}, {"asian", R::Asian}, {"asian indian", R::Asian}, {"chinese", R::Asian},
      {"filipino", R::Asian}, {"japanese", R::Asian}, {"korean", R::Asian}, {"vietnamese", R::Asian},
      {"other asian", R::Asian}, {"black or african american", R::Black}, {"black", R::Black},
      {"african american", R::Black}, {"native hawaiian or other pacific islander", R::NHPI},
      {"native hawaiian", R::NHPI}, {"pacific islander", R::NHPI}, {"guamanian or chamorro", R::NHPI},
      {"samoan", R::NHPI}, {"other pacific islander", R::NHPI}, {"white", R::White}, {"caucasian", R::White},
      {"multiracial", R::Multiracial}, {"more than one race", R::Multiracial},
      {"two or more races", R::Multiracial}, {"multiple races", R::Multiracial}, {"other", R::Other},
      {"other race", R::Other}, {"some other race", R::Other}};
  c.race_keywords = {{"more than one", R::Multiracial},
                     {"two or more", R::Multiracial},
                     {"multi", R::Multiracial},
                     {"biracial", R::Multiracial},
                     {"hawaiian", R::NHPI},
                     {"pacific island", R::NHPI},
                     {"american indian", R::AIAN},
                     {"alaska", R::AIAN},
                     {"native american", R::AIAN},
                     {"black", R::Black},
                     {"african", R::Black},
                     {"asian", R::Asian},
                     {"white", R::White},
                     {"caucasian", R::White},
                     {"other", R::Other}};
  c.race_codes = {{"1002-5", R::AIAN},  {"2028-9", R::Asian}, {"2054-5", R::Black},
                  {"2076-8", R::NHPI},  {"2106-3", R::White}, {"2131-1", R::Other}};
  c.hispanic_synonyms = {"hispanic or latino", "hispanic", "latino", "latina", "latinx", "hispanic/latino",
                         "hispanic or latino/a", "spanish origin"};
  c.non_hispanic_synonyms = {"not hispanic or latino", "non-hispanic", "not hispanic", "non hispanic"};
  c.hispanic_keywords = {"hispanic", "latin", "spanish"};
  c.non_hispanic_keywords = {"not hispanic", "non-hispanic", "non hispanic", "not of hispanic", "non - hispanic",
                             "nonhispanic"};
  c.hispanic_codes = {"2135-2"};
  c.non_hispanic_codes = {"2186-5"};
  return c;
}

inline HarmonizerConfig HarmonizerConfig::from_json(const nlohmann::json& j) {
  HarmonizerConfig c;
  auto strings = [&](const char* key) {
    std::vector<std::string> out;
    if (!j.contains(key)) return out;
    for (const auto& v : j.at(key)) out.push_back(v.get<std::string>());
    return out;
  };
  auto race = [](const std::string& name) {
    auto r = parse_race_name(name);
    if (!r) throw DataError("harmonizer config: unknown race category '" + name + "'");
    return *r;
  };
  for (const auto& s : strings("unknown_text")) c.unknown_text.insert(text::lower(text::trim(s)));
  for (const auto& s : strings("unknown_codes")) c.unknown_codes.insert(text::upper(text::trim(s)));
  c.unknown_codes.insert("");
  if (j.contains("race_synonyms"))
    for (const auto& [k, v] : j.at("race_synonyms").items()) c.race_synonyms[text::lower(text::trim(k))] = race(v);
  if (j.contains("race_keywords"))
    for (const auto& rule : j.at("race_keywords"))
      c.race_keywords.emplace_back(text::lower(rule.at(0).get<std::string>()), race(rule.at(1)));
  if (j.contains("race_codes"))
    for (const auto& [k, v] : j.at("race_codes").items()) c.race_codes[text::upper(text::trim(k))] = race(v);
  for (const auto& s : strings("hispanic_synonyms")) c.hispanic_synonyms.insert(text::lower(text::trim(s)));
  for (const auto& s : strings("non_hispanic_synonyms")) c.non_hispanic_synonyms.insert(text::lower(text::trim(s)));
  for (const auto& s : strings("hispanic_keywords")) c.hispanic_keywords.push_back(text::lower(s));
  for (const auto& s : strings("non_hispanic_keywords")) c.non_hispanic_keywords.push_back(text::lower(s));
  for (const auto& s : strings("hispanic_codes")) c.hispanic_codes.insert(text::upper(text::trim(s)));
  for (const auto& s : strings("non_hispanic_codes")) c.non_hispanic_codes.insert(text::upper(text::trim(s)));
  return c;
}

inline nlohmann::ordered_json HarmonizerConfig::to_json() const {
  auto sorted = [](const auto& set) {
    std::vector<std::string> v(set.begin(), set.end());
    std::sort(v.begin(), v.end());
    return v;
  };
  auto sorted_map = [](const std::unordered_map<std::string, OmbRace>& m) {
    std::vector<std::pair<std::string, OmbRace>> v(m.begin(), m.end());
    std::sort(v.begin(), v.end());
    nlohmann::ordered_json o = nlohmann::ordered_json::object();
    for (const auto& [k, r] : v) o[k] = std::string(race_name(r));
    return o;
  };
  nlohmann::ordered_json j;
  auto codes = sorted(unknown_codes);
  codes.erase(std::remove(codes.begin(), codes.end(), std::string{}), codes.end());
  j["unknown_text"] = sorted(unknown_text);
  j["unknown_codes"] = codes;
  j["race_synonyms"] = sorted_map(race_synonyms);
  auto rules = nlohmann::ordered_json::array();
  for (const auto& [k, r] : race_keywords) rules.push_back({k, std::string(race_name(r))});
  j["race_keywords"] = rules;
  j["race_codes"] = sorted_map(race_codes);
  j["hispanic_synonyms"] = sorted(hispanic_synonyms);
  j["non_hispanic_synonyms"] = sorted(non_hispanic_synonyms);
  j["hispanic_keywords"] = hispanic_keywords;
  j["non_hispanic_keywords"] = non_hispanic_keywords;
  j["hispanic_codes"] = sorted(hispanic_codes);
  j["non_hispanic_codes"] = sorted(non_hispanic_codes);
  return j;
}

class RaceHarmonizer {
 public:
  explicit RaceHarmonizer(HarmonizerConfig config = HarmonizerConfig::defaults()) : cfg_(std::move(config)) {}
  RaceHarmonizer(const RaceHarmonizer& o) : cfg_(o.cfg_), warnings_(o.warnings_.load()) {}
  RaceHarmonizer& operator=(const RaceHarmonizer& o) {
    cfg_ = o.cfg_;
    warnings_ = o.warnings_.load();
    return *this;
  }

  const HarmonizerConfig& config() const { return cfg_; }

  // Number of free-text entries so far that matched no keyword (mapped to Other).
  std::uint64_t parse_warnings() const { return warnings_.load(std::memory_order_relaxed); }

  RaceClassification classify_raw(std::string_view race_text, std::string_view ethnicity_text,
                                   std::string_view race_code, std::string_view ethnicity_code) const {
    auto rt = text::lower(text::trim(race_text));
    auto et = text::lower(text::trim(ethnicity_text));
    auto rc = text::upper(text::trim(race_code));
    auto ec = text::upper(text::trim(ethnicity_code));

    bool rt_info = !rt.empty() && !cfg_.unknown_text.count(rt);
    bool et_info = !et.empty() && !cfg_.unknown_text.count(et);
    bool rc_info = code_informative(rc);
    bool ec_info = code_informative(ec);

    RaceClassification out;
    if (!rt_info && !et_info && !rc_info && !ec_info) return out;

    std::optional<OmbRace> race;
    Hispanic hisp_et = Hispanic::Unstated, hisp_ec = Hispanic::Unstated;
    Hispanic hisp_rt = Hispanic::Unstated, hisp_rc = Hispanic::Unstated;
    if (rt_info) {
      race = parse_race_text(rt);
      hisp_rt = parse_hispanic_text(rt);
      if (!race && hisp_rt == Hispanic::Unstated) {
        race = OmbRace::Other;
        out.parse_warning = true;
      }
    }
    if (!race && rc_info) {
      auto it = cfg_.race_codes.find(rc);
      if (it != cfg_.race_codes.end()) race = it->second;
    }
    if (rc_info) hisp_rc = hispanic_code(rc);
    if (ec_info) {
      hisp_ec = hispanic_code(ec);
      if (!race) {
        auto it = cfg_.race_codes.find(ec);
        if (it != cfg_.race_codes.end()) race = it->second;
      }
    }
    if (et_info) {
      hisp_et = parse_hispanic_text(et);
      if (hisp_et == Hispanic::Unstated) {
        if (!race) race = parse_race_text(et);
        if (!race) {
          race = OmbRace::Other;
          out.parse_warning = true;
        }
      }
    }
    for (Hispanic h : {hisp_et, hisp_ec, hisp_rt, hisp_rc}) {
      if (h != Hispanic::Unstated) {
        out.hispanic = h;
        break;
      }
    }
    if (out.parse_warning) warnings_.fetch_add(1, std::memory_order_relaxed);
    if (race) {
      out.unreported = false;
      out.race = *race;
    } else if (out.hispanic == Hispanic::Yes) {
      // Hispanic ethnicity with no race stated.
      out.unreported = false;
      out.race = OmbRace::Other;
    }
    // Otherwise only non-Hispanic ethnicity was stated: race stays unreported.
    return out;
  }

  // Groups a patient's race-related records into observations: records that
  // share an event date form one observation, and a repeated field within
  // the same date starts a new one. A RaceCode value may carry an ethnicity
  // code after a '|' separator ("2106-3|2186-5").
  template <typename Visit>
  void for_each_observation(std::span<const TimestampedRecord> records, Visit&& visit) const {
    struct Pending {
      bool open = false;
      bool has_rt = false, has_et = false, has_rc = false;
      std::string_view rt, et, rc, ec;
      const TimestampedRecord* first = nullptr;
    } cur;
    auto flush = [&]() -> bool {
      if (!cur.open) return true;
      auto cls = classify_raw(cur.rt, cur.et, cur.rc, cur.ec);
      RaceObservation obs;
      obs.patient = cur.first->patient;
      obs.practice = cur.first->practice;
      obs.report_date = cur.first->event_date;
      obs.record_seq = cur.first->record_seq;
      if (!cls.unreported) obs.race = cls.race;
      obs.hispanic = cls.hispanic;
      cur = Pending{};
      return visit(obs);
    };
    for (const auto& r : records) {
      if (r.kind != RecordKind::RaceText && r.kind != RecordKind::EthnicityText && r.kind != RecordKind::RaceCode)
        continue;
      bool repeat = (r.kind == RecordKind::RaceText && cur.has_rt) ||
                    (r.kind == RecordKind::EthnicityText && cur.has_et) ||
                    (r.kind == RecordKind::RaceCode && cur.has_rc);
      if (cur.open && (repeat || cur.first->event_date != r.event_date)) {
        if (!flush()) return;
      }
      if (!cur.open) {
        cur.open = true;
        cur.first = &r;
      }
      std::string_view v = r.value;
      switch (r.kind) {
        case RecordKind::RaceText: cur.has_rt = true; cur.rt = v; break;
        case RecordKind::EthnicityText: cur.has_et = true; cur.et = v; break;
        default: {
          cur.has_rc = true;
          auto bar = v.find('|');
          cur.rc = v.substr(0, bar);
          cur.ec = bar == std::string_view::npos ? std::string_view{} : v.substr(bar + 1);
        }
      }
    }
    flush();
  }

  std::vector<RaceObservation> observations(std::span<const TimestampedRecord> records) const {
    std::vector<RaceObservation> out;
    for_each_observation(records, [&](const RaceObservation& o) {
      out.push_back(o);
      return true;
    });
    return out;
  }

  // Earliest reported observation by (report_date, record_seq).
  std::optional<RaceObservation> first_reported_race(std::span<const TimestampedRecord> records) const {
    std::optional<RaceObservation> found;
    for_each_observation(records, [&](const RaceObservation& o) {
      if (!o.reported()) return true;
      found = o;
      return false;
    });
    return found;
  }

  std::optional<RaceObservation> first_reported_race(const EventStore& store, std::string_view patient_id) const {
    auto p = store.find_patient(patient_id);
    if (!p) return std::nullopt;
    return first_reported_race(store.records(*p));
  }

 private:
  bool code_informative(const std::string& code) const {
    if (cfg_.unknown_codes.count(code)) return false;
    return cfg_.race_codes.count(code) || cfg_.hispanic_codes.count(code) || cfg_.non_hispanic_codes.count(code);
  }

  Hispanic hispanic_code(const std::string& code) const {
    if (cfg_.hispanic_codes.count(code)) return Hispanic::Yes;
    if (cfg_.non_hispanic_codes.count(code)) return Hispanic::No;
    return Hispanic::Unstated;
  }

  std::optional<OmbRace> parse_race_text(const std::string& t) const {
    if (auto it = cfg_.race_synonyms.find(t); it != cfg_.race_synonyms.end()) return it->second;
    for (const auto& [kw, race] : cfg_.race_keywords)
      if (t.find(kw) != std::string::npos) return race;
    return std::nullopt;
  }

  Hispanic parse_hispanic_text(const std::string& t) const {
    if (cfg_.non_hispanic_synonyms.count(t)) return Hispanic::No;
    if (cfg_.hispanic_synonyms.count(t)) return Hispanic::Yes;
    for (const auto& kw : cfg_.non_hispanic_keywords)
      if (t.find(kw) != std::string::npos) return Hispanic::No;
    for (const auto& kw : cfg_.hispanic_keywords)
      if (t.find(kw) != std::string::npos) return Hispanic::Yes;
    return Hispanic::Unstated;
  }

  HarmonizerConfig cfg_;
  mutable std::atomic<std::uint64_t> warnings_{0};
};

}  // namespace delaylens
