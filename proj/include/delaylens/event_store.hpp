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
#include <fstream>
#include <iostream>
#include <istream>
#include <optional>
#include <tuple>
#include <ostream>
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
#include "delaylens/text.hpp"

namespace delaylens {

enum class RecordKind : std::uint8_t {
  RaceText,
  EthnicityText,
  RaceCode,
  DateOfBirth,
  Visit,
  OutcomeCode,
  Geography,
  NameKeys,
};

inline constexpr std::array<std::string_view, 8> kRecordKindNames = {
    "RaceText", "EthnicityText", "RaceCode", "DateOfBirth",
    "Visit",    "OutcomeCode",   "Geography", "NameKeys"};

inline std::string_view kind_name(RecordKind k) { return kRecordKindNames[static_cast<std::size_t>(k)]; }

// Kind names match case-insensitively; underscores are ignored so that
// "race_text" and "RaceText" are the same kind.
inline std::optional<RecordKind> parse_kind(std::string_view s) {
  std::string norm;
  for (char c : text::trim(s))
    if (c != '_') norm.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (std::size_t i = 0; i < kRecordKindNames.size(); ++i)
    if (norm == text::lower(kRecordKindNames[i])) return static_cast<RecordKind>(i);
  return std::nullopt;
}

using PatientIndex = std::uint32_t;
using PracticeIndex = std::uint32_t;

// One immutable observation. Patient and practice identifiers are interned
// by the owning EventStore.
struct TimestampedRecord {
  std::uint64_t record_seq = 0;
  PatientIndex patient = 0;
  PracticeIndex practice = 0;
  Date event_date;
  RecordKind kind = RecordKind::Visit;
  std::string value;
};

// Billing / diagnosis codes are compared after trimming; letters compare
// case-insensitively, which leaves numeric codes exact.
inline std::string normalize_code(std::string_view code) { return text::upper(text::trim(code)); }

class OutcomeCodeSet {
 public:
  OutcomeCodeSet(std::string outcome_name, std::string vocabulary, const std::vector<std::string>& codes)
      : name_(std::move(outcome_name)), vocabulary_(std::move(vocabulary)) {
    for (const auto& c : codes) {
      auto n = normalize_code(c);
      if (!n.empty()) codes_.insert(std::move(n));
    }
    if (codes_.empty()) throw DataError("outcome '" + name_ + "' has no codes");
  }

  const std::string& name() const { return name_; }
  const std::string& vocabulary() const { return vocabulary_; }
  bool contains(std::string_view raw_code) const { return codes_.count(normalize_code(raw_code)) != 0; }
  std::vector<std::string> sorted_codes() const {
    std::vector<std::string> v(codes_.begin(), codes_.end());
    std::sort(v.begin(), v.end());
    return v;
  }

 private:
  std::string name_;
  std::string vocabulary_;
  std::unordered_set<std::string> codes_;
};

// {"outcome": {"vocabulary": "...", "codes": ["..."]}, ...}; file order kept.
inline std::vector<OutcomeCodeSet> parse_code_sets(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw DataError("code-set config must be a JSON object");
  std::vector<OutcomeCodeSet> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& v = it.value();
    if (!v.is_object() || !v.contains("codes") || !v["codes"].is_array())
      throw DataError("code set '" + it.key() + "' needs a 'codes' array");
    std::vector<std::string> codes;
    for (const auto& c : v["codes"]) codes.push_back(c.is_string() ? c.get<std::string>() : c.dump());
    out.emplace_back(it.key(), v.value("vocabulary", std::string{}), codes);
  }
  return out;
}

inline std::vector<OutcomeCodeSet> load_code_sets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open code-set file " + path);
  try {
    return parse_code_sets(nlohmann::ordered_json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("code-set file " + path + ": " + e.what());
  }
}

inline const OutcomeCodeSet& find_code_set(const std::vector<OutcomeCodeSet>& sets, std::string_view name) {
  for (const auto& s : sets)
    if (s.name() == name) return s;
  throw DataError("unknown outcome '" + std::string(name) + "'");
}

// Built-in outcome sets: one example code each. Real deployments pass a
// complete code-set file.
inline std::vector<OutcomeCodeSet> default_code_sets() {
  return {{"depression", "SNOMED", {"35489007"}},          {"diabetes", "SNOMED", {"771000119108"}},
          {"hypertension", "SNOMED", {"78975002"}},        {"hba1c", "SNOMED", {"43396009"}},
          {"ecg", "CPT4", {"93005"}},                      {"depression_screen", "CPT4", {"96127"}}};
}

enum class InputFormat { Auto, Jsonl, Csv };

struct RawRow {
  std::string patient_id;
  std::string practice_id;
  std::string date;
  std::string kind;
  std::string value;
};

struct IngestReject {
  std::uint64_t row = 0;  // 1-based physical line number
  std::string reason;
};

struct IngestSummary {
  std::uint64_t accepted = 0;
  std::uint64_t rejected = 0;
  std::vector<IngestReject> rejects;
};

namespace detail {

// Parses one flat JSON object whose values are all strings. Returns false on
// anything else so the caller can fall back to the general parser.
inline bool parse_flat_json(std::string_view line, RawRow& row, bool& seen_patient) {
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
  };
  auto read_string = [&](std::string& out) {
    if (i >= line.size() || line[i] != '"') return false;
    ++i;
    out.clear();
    while (i < line.size()) {
      char c = line[i++];
      if (c == '"') return true;
      if (c == '\\') return false;
      out.push_back(c);
    }
    return false;
  };
  skip_ws();
  if (i >= line.size() || line[i] != '{') return false;
  ++i;
  std::string key, val;
  skip_ws();
  if (i < line.size() && line[i] == '}') return true;
  while (true) {
    skip_ws();
    if (!read_string(key)) return false;
    skip_ws();
    if (i >= line.size() || line[i] != ':') return false;
    ++i;
    skip_ws();
    if (!read_string(val)) return false;
    if (key == "patient_id") {
      row.patient_id = val;
      seen_patient = true;
    } else if (key == "practice_id") {
      row.practice_id = val;
    } else if (key == "date") {
      row.date = val;
    } else if (key == "kind") {
      row.kind = val;
    } else if (key == "value") {
      row.value = val;
    }
    skip_ws();
    if (i >= line.size()) return false;
    if (line[i] == ',') {
      ++i;
      continue;
    }
    if (line[i] == '}') {
      ++i;
      skip_ws();
      return i == line.size();
    }
    return false;
  }
}

inline RawRow parse_json_row(std::string_view line) {
  RawRow row;
  bool seen = false;
  if (parse_flat_json(line, row, seen)) return row;
  row = RawRow{};
  auto j = nlohmann::json::parse(line);
  if (!j.is_object()) throw DataError("row is not a JSON object");
  auto field = [&](const char* name) -> std::string {
    auto it = j.find(name);
    if (it == j.end() || it->is_null()) return {};
    return it->is_string() ? it->get<std::string>() : it->dump();
  };
  row.patient_id = field("patient_id");
  row.practice_id = field("practice_id");
  row.date = field("date");
  row.kind = field("kind");
  row.value = field("value");
  return row;
}

}  // namespace detail

class EventStore;

// Single-writer ingest. Rows are validated and deduplicated as they arrive;
// finish() freezes everything into an immutable EventStore.
class EventStoreBuilder {
 public:
  // Validates one row. Returns the rejection reason, or nullopt if accepted.
  std::optional<std::string> add(const RawRow& row) {
    ++next_seq_;
    auto pid = text::trim(row.patient_id);
    if (pid.empty()) return "missing patient_id";
    auto prid = text::trim(row.practice_id);
    if (prid.empty()) return "missing practice_id";
    auto date = Date::parse(text::trim(row.date));
    if (!date) return "invalid date";
    auto kind = parse_kind(row.kind);
    if (!kind) return "unknown kind";
    TimestampedRecord rec;
    rec.record_seq = next_seq_;
    rec.patient = intern(patients_, patient_ids_, pid);
    rec.practice = intern(practices_, practice_ids_, prid);
    rec.event_date = *date;
    rec.kind = *kind;
    rec.value = row.value;
    records_.push_back(std::move(rec));
    return std::nullopt;
  }

  IngestSummary ingest(std::istream& in, InputFormat format = InputFormat::Auto) {
    IngestSummary summary;
    std::string line;
    std::uint64_t line_no = 0;
    std::vector<std::size_t> csv_cols;
    bool header_done = false;
    // (record_seq, line number) of every row accepted by this call, in seq order.
    std::vector<std::pair<std::uint64_t, std::uint64_t>> seq_lines;

    auto reject = [&](std::uint64_t row, std::string reason) {
      ++summary.rejected;
      summary.rejects.push_back({row, std::move(reason)});
    };

    while (std::getline(in, line)) {
      ++line_no;
      if (text::trim(line).empty()) continue;
      if (format == InputFormat::Auto)
        format = text::trim(line).front() == '{' ? InputFormat::Jsonl : InputFormat::Csv;
      RawRow row;
      if (format == InputFormat::Csv) {
        std::vector<std::string> fields;
        try {
          fields = text::parse_csv_line(line);
        } catch (const DataError& e) {
          reject(line_no, e.what());
          continue;
        }
        if (!header_done) {
          static constexpr std::array<std::string_view, 5> names = {"patient_id", "practice_id", "date",
                                                                    "kind", "value"};
          for (auto name : names) {
            auto it = std::find_if(fields.begin(), fields.end(),
                                   [&](const std::string& f) { return text::trim(f) == name; });
            if (it == fields.end()) throw DataError("CSV header lacks column '" + std::string(name) + "'");
            csv_cols.push_back(static_cast<std::size_t>(it - fields.begin()));
          }
          header_done = true;
          continue;
        }
        auto get = [&](std::size_t k) {
          return csv_cols[k] < fields.size() ? fields[csv_cols[k]] : std::string{};
        };
        row = RawRow{get(0), get(1), get(2), get(3), get(4)};
      } else {
        try {
          row = detail::parse_json_row(line);
        } catch (const std::exception&) {
          reject(line_no, "malformed JSON");
          continue;
        }
      }
      if (auto reason = add(row)) {
        reject(line_no, std::move(*reason));
      } else {
        seq_lines.emplace_back(records_.back().record_seq, line_no);
      }
    }

    auto dup_seqs = deduplicate();
    for (auto seq : dup_seqs) {
      auto it = std::lower_bound(seq_lines.begin(), seq_lines.end(), std::make_pair(seq, std::uint64_t{0}));
      reject(it != seq_lines.end() && it->first == seq ? it->second : 0, "duplicate");
    }
    summary.accepted = seq_lines.size() - dup_seqs.size();
    std::stable_sort(summary.rejects.begin(), summary.rejects.end(),
                     [](const IngestReject& a, const IngestReject& b) { return a.row < b.row; });
    return summary;
  }

  EventStore finish() &&;

 private:
  static std::uint32_t intern(std::unordered_map<std::string, std::uint32_t>& map,
                              std::vector<std::string>& ids, std::string_view key) {
    auto it = map.find(std::string(key));
    if (it != map.end()) return it->second;
    auto idx = static_cast<std::uint32_t>(ids.size());
    ids.emplace_back(key);
    map.emplace(ids.back(), idx);
    return idx;
  }

  // Counting sort by patient, then (event_date, record_seq) within patient.
  void regroup() {
    std::size_t n_pat = patient_ids_.size();
    offsets_.assign(n_pat + 1, 0);
    for (const auto& r : records_) ++offsets_[r.patient + 1];
    for (std::size_t p = 0; p < n_pat; ++p) offsets_[p + 1] += offsets_[p];
    bool sorted = true;
    for (std::size_t i = 1; i < records_.size() && sorted; ++i) {
      const auto& a = records_[i - 1];
      const auto& b = records_[i];
      sorted = a.patient < b.patient ||
               (a.patient == b.patient && std::tie(a.event_date, a.record_seq) < std::tie(b.event_date, b.record_seq));
    }
    if (!sorted) {
      std::vector<TimestampedRecord> out(records_.size());
      std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
      for (auto& r : records_) out[cursor[r.patient]++] = std::move(r);
      records_ = std::move(out);
      for (std::size_t p = 0; p < n_pat; ++p) {
        std::sort(records_.begin() + static_cast<std::ptrdiff_t>(offsets_[p]),
                  records_.begin() + static_cast<std::ptrdiff_t>(offsets_[p + 1]),
                  [](const TimestampedRecord& a, const TimestampedRecord& b) {
                    return std::tie(a.event_date, a.record_seq) < std::tie(b.event_date, b.record_seq);
                  });
      }
    }
  }

  // Drops rows identical to an earlier row (same patient, practice, date,
  // kind and value). Identical rows share a patient and a date, so only
  // same-date runs need pairwise comparison. Returns the dropped seqs.
  std::vector<std::uint64_t> deduplicate() {
    regroup();
    std::vector<std::uint64_t> dropped;
    std::vector<TimestampedRecord> kept;
    kept.reserve(records_.size());
    for (std::size_t p = 0; p + 1 < offsets_.size(); ++p) {
      std::size_t run_start = kept.size();
      for (std::size_t r = offsets_[p]; r < offsets_[p + 1]; ++r) {
        auto& rec = records_[r];
        if (kept.size() > run_start && kept.back().event_date != rec.event_date) run_start = kept.size();
        bool dup = false;
        for (std::size_t k = run_start; k < kept.size() && !dup; ++k) {
          const auto& o = kept[k];
          dup = o.practice == rec.practice && o.kind == rec.kind && o.value == rec.value;
        }
        if (dup) {
          dropped.push_back(rec.record_seq);
        } else {
          kept.push_back(std::move(rec));
        }
      }
    }
    if (!dropped.empty()) {
      records_ = std::move(kept);
      regroup();
    } else {
      // Nothing dropped; `kept` holds the same records in the same order.
      records_ = std::move(kept);
    }
    std::sort(dropped.begin(), dropped.end());
    return dropped;
  }

  std::vector<TimestampedRecord> records_;
  std::vector<std::size_t> offsets_;
  std::unordered_map<std::string, std::uint32_t> patients_;
  std::unordered_map<std::string, std::uint32_t> practices_;
  std::vector<std::string> patient_ids_;
  std::vector<std::string> practice_ids_;
  std::uint64_t next_seq_ = 0;

  friend class EventStore;
};

// Immutable after construction; every query is const and safe to call from
// any number of threads.
class EventStore {
 public:
  EventStore() = default;

  std::size_t patient_count() const { return patient_ids_.size(); }
  std::size_t practice_count() const { return practice_ids_.size(); }
  std::size_t record_count() const { return records_.size(); }

  const std::string& patient_id(PatientIndex p) const { return patient_ids_.at(p); }
  const std::string& practice_id(PracticeIndex p) const { return practice_ids_.at(p); }

  std::optional<PatientIndex> find_patient(std::string_view id) const {
    auto it = patients_.find(std::string(id));
    if (it == patients_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<PracticeIndex> find_practice(std::string_view id) const {
    auto it = practices_.find(std::string(id));
    if (it == practices_.end()) return std::nullopt;
    return it->second;
  }

  // All records of a patient ordered by (event_date, record_seq).
  std::span<const TimestampedRecord> records(PatientIndex p) const {
    return {records_.data() + offsets_.at(p), records_.data() + offsets_.at(p + 1)};
  }

  // Records with event_date <= as_of. The visible set is always a prefix of
  // records(p), so visibility is monotone in as_of.
  std::span<const TimestampedRecord> as_of_records(PatientIndex p, Date as_of) const {
    auto all = records(p);
    auto end = std::upper_bound(all.begin(), all.end(), as_of,
                                [](Date d, const TimestampedRecord& r) { return d < r.event_date; });
    return all.first(static_cast<std::size_t>(end - all.begin()));
  }

  // Unknown patients have no records.
  std::span<const TimestampedRecord> as_of_records(std::string_view patient_id, Date as_of) const {
    auto p = find_patient(patient_id);
    if (!p) return {};
    return as_of_records(*p, as_of);
  }

  // Practice of the patient's earliest record.
  PracticeIndex home_practice(PatientIndex p) const {
    auto r = records(p);
    return r.empty() ? 0 : r.front().practice;
  }

  // Outcome presence over the full record set (independent of any as-of date).
  bool extract_outcome(PatientIndex p, const OutcomeCodeSet& outcome, DateInterval period) const {
    if (period.end < period.start) throw ContractError("extract_outcome: period start after end");
    for (const auto& r : records(p)) {
      if (r.event_date > period.end) break;
      if (r.kind == RecordKind::OutcomeCode && r.event_date >= period.start && outcome.contains(r.value))
        return true;
    }
    return false;
  }

  bool extract_outcome(std::string_view patient_id, const OutcomeCodeSet& outcome, DateInterval period) const {
    auto p = find_patient(patient_id);
    if (!p) {
      if (period.end < period.start) throw ContractError("extract_outcome: period start after end");
      return false;
    }
    return extract_outcome(*p, outcome, period);
  }

  // First record of the given kind, if any.
  const TimestampedRecord* first_of_kind(PatientIndex p, RecordKind kind) const {
    for (const auto& r : records(p))
      if (r.kind == kind) return &r;
    return nullptr;
  }

  // Value of the first Geography record ("STATE" or "STATE/subkey"), or empty.
  std::string_view geography(PatientIndex p) const {
    auto* r = first_of_kind(p, RecordKind::Geography);
    return r ? std::string_view(r->value) : std::string_view{};
  }

  // State part of the patient's geography; "NA" when no geography was recorded.
  std::string state_of(PatientIndex p) const {
    auto g = text::trim(geography(p));
    if (g.empty()) return "NA";
    return std::string(text::trim(g.substr(0, g.find('/'))));
  }

  // Canonical JSONL: patients in first-seen order, records by (date, seq).
  void write_jsonl(std::ostream& out) const {
    std::string line;
    for (const auto& r : records_) {
      line.clear();
      line += "{\"patient_id\":";
      text::append_json_string(line, patient_ids_[r.patient]);
      line += ",\"practice_id\":";
      text::append_json_string(line, practice_ids_[r.practice]);
      line += ",\"date\":\"";
      line += r.event_date.str();
      line += "\",\"kind\":\"";
      line += kind_name(r.kind);
      line += "\",\"value\":";
      text::append_json_string(line, r.value);
      line += "}\n";
      out << line;
    }
  }

 private:
  friend class EventStoreBuilder;

  std::vector<TimestampedRecord> records_;
  std::vector<std::size_t> offsets_{0};
  std::unordered_map<std::string, std::uint32_t> patients_;
  std::unordered_map<std::string, std::uint32_t> practices_;
  std::vector<std::string> patient_ids_;
  std::vector<std::string> practice_ids_;
};

inline EventStore EventStoreBuilder::finish() && {
  regroup();
  EventStore s;
  s.records_ = std::move(records_);
  s.offsets_ = std::move(offsets_);
  s.patients_ = std::move(patients_);
  s.practices_ = std::move(practices_);
  s.patient_ids_ = std::move(patient_ids_);
  s.practice_ids_ = std::move(practice_ids_);
  return s;
}

// Convenience: ingest one file (or "-" for stdin) into a fresh store.
inline std::pair<EventStore, IngestSummary> ingest_file(const std::string& path,
                                                        InputFormat format = InputFormat::Auto) {
  if (format == InputFormat::Auto && path.size() > 4 && path.substr(path.size() - 4) == ".csv")
    format = InputFormat::Csv;
  EventStoreBuilder builder;
  IngestSummary summary;
  if (path == "-") {
    summary = builder.ingest(std::cin, format);
  } else {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open input file " + path);
    summary = builder.ingest(in, format);
  }
  return {std::move(builder).finish(), std::move(summary)};
}

}  // namespace delaylens
