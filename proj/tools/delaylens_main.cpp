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

// delaylens command-line tool: ingest, delays, assess, monitor, impute,
// stats, synth and sweep over the header-only library.

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <streambuf>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "delaylens/assessment.hpp"
#include "delaylens/bifsg.hpp"
#include "delaylens/delay_engine.hpp"
#include "delaylens/event_store.hpp"
#include "delaylens/race_harmonizer.hpp"
#include "delaylens/report_io.hpp"
#include "delaylens/stats.hpp"
#include "delaylens/synth.hpp"

#ifndef DELAYLENS_VERSION
#define DELAYLENS_VERSION "dev"
#endif

namespace {

using namespace delaylens;
using report::Json;
using namespace delaylens::synth;
namespace fs = std::filesystem;

// Bad flag values found after parsing; reported like parse errors (exit 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const char* p, std::size_t n) {
    EVP_DigestUpdate(ctx_, p, n);
    bytes_ += n;
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }
  std::uint64_t bytes() const { return bytes_; }

 private:
  EVP_MD_CTX* ctx_;
  std::uint64_t bytes_ = 0;
};

// Reads through `src`, hashing every byte handed to the consumer.
class HashingInBuf : public std::streambuf {
 public:
  HashingInBuf(std::streambuf* src, Sha256& sha) : src_(src), sha_(sha), buf_(1 << 16) {}

 protected:
  int_type underflow() override {
    auto n = src_->sgetn(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (n <= 0) return traits_type::eof();
    sha_.update(buf_.data(), static_cast<std::size_t>(n));
    setg(buf_.data(), buf_.data(), buf_.data() + n);
    return traits_type::to_int_type(buf_[0]);
  }

 private:
  std::streambuf* src_;
  Sha256& sha_;
  std::vector<char> buf_;
};

// Forwards to `dst`, hashing everything written.
class HashingOutBuf : public std::streambuf {
 public:
  HashingOutBuf(std::streambuf* dst, Sha256& sha) : dst_(dst), sha_(sha) {}

 protected:
  std::streamsize xsputn(const char* s, std::streamsize n) override {
    sha_.update(s, static_cast<std::size_t>(n));
    return dst_->sputn(s, n);
  }
  int_type overflow(int_type c) override {
    if (traits_type::eq_int_type(c, traits_type::eof())) return traits_type::not_eof(c);
    char ch = traits_type::to_char_type(c);
    sha_.update(&ch, 1);
    return dst_->sputc(ch);
  }
  int sync() override { return dst_->pubsync(); }

 private:
  std::streambuf* dst_;
  Sha256& sha_;
};

struct FileDigest {
  std::string path;
  std::string sha256;
  std::uint64_t bytes = 0;
};

FileDigest digest_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  Sha256 sha;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) sha.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return {path, sha.hex(), sha.bytes()};
}

// Tracks inputs and outputs of one invocation. File outputs are written to
// "<path>.partial" and renamed on commit; abort() deletes them.
class Run {
 public:
  struct Output {
    std::string path;
    std::string tmp;
    std::ofstream file;
    Sha256 sha;
    std::unique_ptr<HashingOutBuf> buf;
    std::unique_ptr<std::ostream> stream;
    FileDigest digest;
  };

  ~Run() { abort(); }

  std::ostream& open(const std::string& path) {
    for (const auto& o : outputs_)
      if (o->path == path) throw UsageError("output '" + path + "' given twice");
    auto o = std::make_unique<Output>();
    o->path = path;
    std::streambuf* dst = std::cout.rdbuf();
    if (path != "-") {
      o->tmp = path + ".partial";
      o->file.open(o->tmp, std::ios::binary | std::ios::trunc);
      if (!o->file) throw DataError("cannot write " + path);
      dst = o->file.rdbuf();
    }
    o->buf = std::make_unique<HashingOutBuf>(dst, o->sha);
    o->stream = std::make_unique<std::ostream>(o->buf.get());
    outputs_.push_back(std::move(o));
    return *outputs_.back()->stream;
  }

  // Creates a directory for outputs written through open().
  void ensure_dir(const std::string& dir) {
    if (fs::exists(dir)) return;
    fs::create_directories(dir);
    created_dirs_.push_back(dir);
  }

  void add_input(FileDigest d) { inputs_.push_back(std::move(d)); }
  void add_input_file(const std::string& path) {
    if (!path.empty()) add_input(digest_file(path));
  }

  void commit() {
    for (auto& o : outputs_) {
      o->stream->flush();
      if (!o->tmp.empty()) {
        o->file.close();
        if (!o->file) throw DataError("write failed for " + o->path);
        fs::rename(o->tmp, o->path);
        o->tmp.clear();
      }
      o->digest = {o->path, o->sha.hex(), o->sha.bytes()};
    }
    committed_ = true;
  }

  void abort() {
    if (committed_) return;
    for (auto& o : outputs_) {
      if (o->tmp.empty()) continue;
      o->file.close();
      std::error_code ec;
      fs::remove(o->tmp, ec);
      o->tmp.clear();
    }
    for (auto it = created_dirs_.rbegin(); it != created_dirs_.rend(); ++it) {
      std::error_code ec;
      fs::remove(*it, ec);  // only succeeds when empty
    }
    created_dirs_.clear();
  }

  const std::vector<FileDigest>& inputs() const { return inputs_; }
  std::vector<FileDigest> outputs() const {
    std::vector<FileDigest> v;
    for (const auto& o : outputs_) v.push_back(o->digest);
    return v;
  }
  // The subcommand's main output names the default manifest; other file
  // outputs are the fallback when it goes to stdout.
  void set_primary(const std::string& path) { primary_ = path; }
  std::string manifest_anchor() const {
    if (!primary_.empty() && primary_ != "-") return primary_;
    for (const auto& o : outputs_)
      if (o->path != "-") return o->path;
    return {};
  }

 private:
  std::vector<FileDigest> inputs_;
  std::vector<std::unique_ptr<Output>> outputs_;
  std::vector<std::string> created_dirs_;
  std::string primary_;
  bool committed_ = false;
};

// ---------------------------------------------------------------------------
// Options

struct Global {
  unsigned threads = 0;
  std::string harmonizer;
  std::string code_sets;
  std::string manifest;
  std::size_t threshold = kDefaultSuppressionThreshold;
  bool no_suppress = false;
  bool quiet = false;
  std::optional<std::uint64_t> seed_used;
  Json resolved;  // subcommand-specific resolved settings for the manifest
};

std::size_t effective_threshold(const Global& g) { return g.no_suppress ? 0 : g.threshold; }

InputFormat parse_format(const std::string& s) {
  if (s == "auto") return InputFormat::Auto;
  if (s == "jsonl") return InputFormat::Jsonl;
  if (s == "csv") return InputFormat::Csv;
  throw UsageError("unknown input format '" + s + "'");
}

Quarter parse_quarter(const std::string& s, const char* flag) {
  auto q = Quarter::parse(s);
  if (!q) throw UsageError(std::string(flag) + ": expected a quarter like 2018Q1, got '" + s + "'");
  return *q;
}

AssessmentGroup parse_group(const std::string& s) {
  auto g = parse_group_name(s);
  if (!g) throw UsageError("unknown group '" + s + "'");
  return *g;
}

void note(const Global& g, const std::string& msg) {
  if (!g.quiet) std::cerr << "delaylens: " << msg << '\n';
}

IngestSummary ingest_into(Run& run, EventStoreBuilder& builder, const std::string& path, InputFormat format) {
  if (format == InputFormat::Auto && path.size() > 4 && path.substr(path.size() - 4) == ".csv")
    format = InputFormat::Csv;
  std::ifstream file;
  std::streambuf* src = std::cin.rdbuf();
  if (path != "-") {
    file.open(path, std::ios::binary);
    if (!file) throw DataError("cannot open input file " + path);
    src = file.rdbuf();
  }
  Sha256 sha;
  HashingInBuf buf(src, sha);
  std::istream in(&buf);
  auto summary = builder.ingest(in, format);
  run.add_input({path, sha.hex(), sha.bytes()});
  return summary;
}

void report_rejects(const Global& g, const std::string& path, const IngestSummary& s) {
  if (s.rejected == 0) return;
  std::ostringstream msg;
  msg << path << ": " << s.rejected << " row(s) rejected";
  for (std::size_t i = 0; i < s.rejects.size() && i < 5; ++i)
    msg << "\n  row " << s.rejects[i].row << ": " << s.rejects[i].reason;
  note(g, msg.str());
}

EventStore load_store(Run& run, const Global& g, const std::string& path, const std::string& format) {
  EventStoreBuilder builder;
  auto summary = ingest_into(run, builder, path, parse_format(format));
  report_rejects(g, path, summary);
  return std::move(builder).finish();
}

RaceHarmonizer load_harmonizer(Run& run, const Global& g) {
  if (g.harmonizer.empty()) return RaceHarmonizer{};
  run.add_input_file(g.harmonizer);
  return RaceHarmonizer(HarmonizerConfig::load(g.harmonizer));
}

std::vector<OutcomeCodeSet> load_outcomes(Run& run, const Global& g, const std::vector<std::string>& names) {
  std::vector<OutcomeCodeSet> sets;
  if (g.code_sets.empty()) {
    sets = default_code_sets();
  } else {
    run.add_input_file(g.code_sets);
    sets = load_code_sets(g.code_sets);
  }
  std::vector<OutcomeCodeSet> out;
  for (const auto& n : names) out.push_back(find_code_set(sets, n));
  return out;
}

struct CohortFlags {
  std::string quarter;
  std::string scope = "national";
  int min_age = 18;
  bool all_patients = false;
  bool skip_first_dob = false;

  void add(CLI::App* cmd, bool quarter_required) {
    auto* q = cmd->add_option("--quarter", quarter, "Cohort quarter, e.g. 2018Q1");
    if (quarter_required) q->required();
    cmd->add_option("--scope", scope, "national, state:<CODE> or practice:<ID>")->capture_default_str();
    cmd->add_option("--min-age", min_age, "Minimum age in years during the cohort year")->capture_default_str();
    cmd->add_flag("--all-patients", all_patients, "Do not require a visit during the cohort quarter");
    cmd->add_flag("--skip-first-dob", skip_first_dob, "Ignore each patient's first DOB timestamp");
  }

  GeographyScope geo() const {
    try {
      return GeographyScope::parse(scope);
    } catch (const std::exception& e) {
      throw UsageError(std::string("--scope: ") + e.what());
    }
  }

  CohortSpec spec() const {
    auto s = CohortSpec::for_quarter(parse_quarter(quarter, "--quarter"));
    s.min_age_years = min_age;
    s.scope = geo();
    s.require_visit_in_period = !all_patients;
    return s;
  }
};

Cohort checked_cohort(const DelayEngine& engine, const CohortSpec& spec, const std::vector<OutcomeCodeSet>& outcomes,
                      unsigned threads) {
  try {
    return build_cohort(engine, spec, outcomes, threads);
  } catch (const EmptyCohortError& e) {
    const auto& d = e.diagnostics();
    std::ostringstream msg;
    msg << "empty cohort for " << spec.quarter.str() << " (" << spec.scope.str() << ")\n"
        << "  patients in store:                     " << d.total_patients << '\n'
        << "  no mappable race:                      " << d.no_mappable_race << '\n'
        << "  no DOB or under minimum age:           " << d.no_dob_or_underage << '\n'
        << "  DOB not recorded before cutoff:        " << d.dob_not_before_cutoff << '\n'
        << "  practice not reporting before cutoff:  " << d.practice_not_reporting_before_cutoff << '\n'
        << "  no visit in period:                    " << d.no_visit_in_period << '\n'
        << "  outside scope:                         " << d.outside_scope;
    throw DataError(msg.str());
  }
}

// Per-group member counts with race visible at t_initial.
std::array<std::size_t, kGroupCount> initial_counts(const Cohort& c) {
  std::array<std::size_t, kGroupCount> n{};
  Date t0 = c.spec.period().end + 1;
  for (const auto& m : c.members)
    if (m.report_date <= t0) ++n[group_index(m.group)];
  return n;
}

// Removes groups whose t_initial cell is below the threshold. Denominators
// only grow with as_of, so every remaining cell clears the threshold.
std::vector<std::string> suppress_small_groups(Cohort& c, std::size_t threshold) {
  auto n = initial_counts(c);
  std::array<bool, kGroupCount> drop{};
  std::vector<std::string> dropped;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    bool present = false;
    for (const auto& m : c.members) present = present || group_index(m.group) == g;
    if (present && n[g] < threshold) {
      drop[g] = true;
      dropped.emplace_back(kGroupNames[g]);
    }
  }
  if (dropped.empty()) return dropped;
  Cohort out;
  out.spec = c.spec;
  out.outcome_names = c.outcome_names;
  out.diagnostics = c.diagnostics;
  out.outcomes.resize(c.outcomes.size());
  for (std::size_t i = 0; i < c.members.size(); ++i) {
    if (drop[group_index(c.members[i].group)]) continue;
    out.members.push_back(c.members[i]);
    for (std::size_t o = 0; o < c.outcomes.size(); ++o) out.outcomes[o].push_back(c.outcomes[o][i]);
  }
  if (out.members.empty())
    throw DataError("every group has fewer than " + std::to_string(threshold) +
                    " members with race known at t_initial; nothing to report (see --no-suppress)");
  c = std::move(out);
  return dropped;
}

Json suppression_json(const Global& g) {
  if (g.no_suppress) return nullptr;
  return g.threshold;
}

void write_json(Run& run, const std::string& path, const Json& j) { run.open(path) << j.dump(2) << '\n'; }

// ---------------------------------------------------------------------------
// Subcommands

struct IngestOpts {
  std::vector<std::string> inputs{"-"};
  std::string format = "auto";
  std::string output = "-";
  std::string summary;
  std::string rejects;
  std::optional<std::uint64_t> max_rejects;
};

void run_ingest(Run& run, const Global& g, const IngestOpts& o) {
  run.set_primary(o.output);
  EventStoreBuilder builder;
  auto total = Json::array();
  std::uint64_t rejected = 0;
  std::vector<std::pair<std::string, IngestReject>> all_rejects;
  for (const auto& path : o.inputs) {
    auto s = ingest_into(run, builder, path, parse_format(o.format));
    report_rejects(g, path, s);
    Json e;
    e["input"] = path;
    e["accepted"] = s.accepted;
    e["rejected"] = s.rejected;
    total.push_back(e);
    rejected += s.rejected;
    for (auto& r : s.rejects) all_rejects.emplace_back(path, std::move(r));
  }
  if (o.max_rejects && rejected > *o.max_rejects)
    throw DataError(std::to_string(rejected) + " rejected rows exceed --max-rejects " + std::to_string(*o.max_rejects));
  auto store = std::move(builder).finish();
  store.write_jsonl(run.open(o.output));
  if (!o.summary.empty()) {
    auto j = report::document("ingest_summary");
    j["inputs"] = total;
    j["patients"] = store.patient_count();
    j["practices"] = store.practice_count();
    j["records"] = store.record_count();
    write_json(run, o.summary, j);
  }
  if (!o.rejects.empty()) {
    auto& out = run.open(o.rejects);
    out << "input,row,reason\n";
    for (const auto& [path, r] : all_rejects)
      out << text::csv_field(path) << ',' << r.row << ',' << text::csv_field(r.reason) << '\n';
  }
  note(g, "ingested " + std::to_string(store.record_count()) + " records for " +
              std::to_string(store.patient_count()) + " patients");
}

struct DelaysOpts {
  std::string input = "-";
  std::string format = "auto";
  std::string output = "-";
  std::string curves;
  std::string summary;
  int horizon = 1095;
  std::string units = "national";
  CohortFlags cohort;
};

void run_delays(Run& run, const Global& g, const DelaysOpts& o) {
  run.set_primary(o.output);
  auto store = load_store(run, g, o.input, o.format);
  auto harmonizer = load_harmonizer(run, g);
  DelayEngine engine(store, harmonizer, {o.cohort.skip_first_dob, g.threads});
  auto scope = o.cohort.geo();

  std::vector<PatientIndex> patients;
  Json cohort_json = nullptr;
  if (!o.cohort.quarter.empty()) {
    auto cohort = checked_cohort(engine, o.cohort.spec(), {}, g.threads);
    for (const auto& m : cohort.members) patients.push_back(m.patient);
    cohort_json = report::to_json(cohort.spec);
    cohort_json["diagnostics"] = report::to_json(cohort.diagnostics);
  } else {
    for (auto p : all_patients(store))
      if (scope.matches(store, p)) patients.push_back(p);
  }

  std::size_t no_dob = 0, no_baseline = 0, before = 0, never = 0, computable = 0;
  for (auto p : patients) {
    const auto& d = engine.delay(p);
    if (!d.race_report_date) ++never;
    if (d.has(kNoDobRecord)) ++no_dob;
    if (d.has(kNoPracticeBaseline)) ++no_baseline;
    if (d.has(kReportBeforeOpportunity)) ++before;
    if (d.delay_days) ++computable;
  }

  std::size_t threshold = effective_threshold(g);
  auto curves = cumulative_curves(engine, patients, o.horizon);
  CurveSet shown;
  shown.warnings = curves.warnings;
  for (auto& c : curves.curves) {
    if (c.members < threshold) {
      shown.warnings.push_back("group " + std::string(group_name(c.group)) + " curve suppressed (fewer than " +
                               std::to_string(threshold) + " members)");
      continue;
    }
    shown.curves.push_back(std::move(c));
  }
  auto unit_kind = parse_scope(o.units);
  if (!unit_kind) throw UsageError("--units: expected national, state or practice");
  auto summary = delay_summary(engine, *unit_kind, patients, threshold);

  auto j = report::document("delays");
  j["cohort"] = cohort_json;
  j["suppression_threshold"] = suppression_json(g);
  j["skip_first_dob"] = o.cohort.skip_first_dob;
  j["units"] = o.units;
  Json counts;
  counts["patients"] = patients.size();
  counts["with_delay"] = computable;
  counts["never_reported"] = never;
  counts["no_dob_record"] = no_dob;
  counts["no_practice_baseline"] = no_baseline;
  counts["report_before_opportunity"] = before;
  j["counts"] = counts;
  j["summary"] = report::to_json(summary);
  auto cj = Json::array();
  for (const auto& c : shown.curves) {
    Json e;
    e["group"] = std::string(group_name(c.group));
    e["members"] = c.members;
    for (int day : {0, 30, 60, 90, 180, 365, 730, 1095})
      if (day <= o.horizon) e["cum_fraction_at"][std::to_string(day)] = c.points[static_cast<std::size_t>(day)].cumulative_fraction;
    cj.push_back(e);
  }
  j["curves"] = cj;
  j["warnings"] = shown.warnings;
  write_json(run, o.output, j);
  if (!o.curves.empty()) report::write_curves_csv(run.open(o.curves), shown);
  if (!o.summary.empty()) report::write_delay_summary_csv(run.open(o.summary), summary);
}

struct AssessOpts {
  std::string input = "-";
  std::string format = "auto";
  std::string output = "-";
  std::string csv;
  std::vector<std::string> outcomes;
  CohortFlags cohort;
  std::optional<int> max_quarters;
  bool three_years = false;
  std::size_t replicates = 0;
  std::uint64_t seed = 0;
  std::string scheme = "two-stage";
  bool include_replicates = false;
};

void run_assess(Run& run, Global& g, const AssessOpts& o) {
  run.set_primary(o.output);
  auto store = load_store(run, g, o.input, o.format);
  auto harmonizer = load_harmonizer(run, g);
  auto outcomes = load_outcomes(run, g, o.outcomes);
  DelayEngine engine(store, harmonizer, {o.cohort.skip_first_dob, g.threads});
  auto cohort = checked_cohort(engine, o.cohort.spec(), outcomes, g.threads);
  auto suppressed = suppress_small_groups(cohort, effective_threshold(g));

  SeriesOptions so;
  so.max_quarters = o.three_years ? std::optional<int>(12) : o.max_quarters;
  BootstrapOptions bo;
  bo.replicates = o.replicates;
  bo.seed = o.seed;
  bo.threads = g.threads;
  bo.series = so;
  if (o.scheme == "two-stage") bo.scheme = BootstrapScheme::TwoStage;
  else if (o.scheme == "patient") bo.scheme = BootstrapScheme::PatientOnly;
  else throw UsageError("--bootstrap-scheme: expected two-stage or patient");
  if (o.replicates > 0) g.seed_used = o.seed;

  auto j = report::document("assessment");
  j["cohort"] = report::to_json(cohort.spec);
  j["cohort"]["size"] = cohort.size();
  j["cohort"]["diagnostics"] = report::to_json(cohort.diagnostics);
  j["suppression_threshold"] = suppression_json(g);
  j["suppressed_groups"] = suppressed;
  std::ostream* csv = nullptr;
  if (!o.csv.empty()) {
    csv = &run.open(o.csv);
    report::write_series_csv_header(*csv);
  }
  auto results = Json::array();
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    auto series = snapshot_series(cohort, k, so);
    Json r = report::to_json(series);
    r["error_report"] = report::to_json(error_report(series));
    if (o.replicates > 0) r["bootstrap"] = report::to_json(bootstrap(cohort, k, bo), bo, {}, o.include_replicates);
    results.push_back(std::move(r));
    if (csv) report::write_series_csv(*csv, series);
  }
  j["outcomes"] = results;
  write_json(run, o.output, j);
}

struct MonitorOpts {
  std::string input = "-";
  std::string format = "auto";
  std::string output = "-";
  std::string csv;
  std::string from, to;
  std::string outcome;
  int revised_after = 12;
  bool revised_final = false;
  std::string pair;
  CohortFlags cohort;
};

void run_monitor(Run& run, const Global& g, const MonitorOpts& o) {
  run.set_primary(o.output);
  auto store = load_store(run, g, o.input, o.format);
  auto harmonizer = load_harmonizer(run, g);
  auto outcomes = load_outcomes(run, g, {o.outcome});
  DelayEngine engine(store, harmonizer, {o.cohort.skip_first_dob, g.threads});
  auto from = parse_quarter(o.from, "--from"), to = parse_quarter(o.to, "--to");
  if (to < from) throw UsageError("--to precedes --from");

  MonitorOptions mo;
  mo.revised_after_quarters = o.revised_final ? std::nullopt : std::optional<int>(o.revised_after);
  mo.min_age_years = o.cohort.min_age;
  mo.scope = o.cohort.geo();
  mo.require_visit_in_period = !o.cohort.all_patients;
  mo.threads = g.threads;
  if (!o.pair.empty()) {
    auto colon = o.pair.find(':');
    if (colon == std::string::npos) throw UsageError("--pair: expected A:B");
    mo.pair = {parse_group(o.pair.substr(0, colon)), parse_group(o.pair.substr(colon + 1))};
  }
  auto res = monitor(engine, quarter_range(from, to), outcomes.front(), mo);

  // Withhold cells below the threshold, and disparities built on them.
  std::size_t threshold = effective_threshold(g);
  std::map<std::pair<Quarter, AssessmentGroup>, std::pair<bool, bool>> hidden;
  for (auto& r : res.groups) {
    bool hi = r.n_initial < threshold, hr = r.n_revised < threshold;
    if (hi) r.initial.reset();
    if (hr) r.revised.reset();
    hidden[{r.quarter, r.group}] = {hi, hr};
  }
  for (auto& p : res.pairs) {
    auto a = hidden[{p.quarter, p.a}], b = hidden[{p.quarter, p.b}];
    if (a.first || b.first) p.disparity_initial.reset();
    if (a.second || b.second) p.disparity_revised.reset();
  }

  auto j = report::document("monitor");
  j["outcome"] = o.outcome;
  j["from"] = from.str();
  j["to"] = to.str();
  j["revised"] = o.revised_final ? Json("t_final") : Json("t_initial+" + std::to_string(o.revised_after) + "q");
  j["suppression_threshold"] = suppression_json(g);
  if (res.selected_pair)
    j["selected_pair"] = std::string(group_name(res.selected_pair->first)) + "-" +
                         std::string(group_name(res.selected_pair->second));
  auto gj = Json::array();
  for (const auto& r : res.groups) {
    Json e;
    e["quarter"] = r.quarter.str();
    e["group"] = std::string(group_name(r.group));
    e["initial"] = report::num(r.initial);
    e["revised"] = report::num(r.revised);
    if (r.n_initial >= threshold) e["n_initial"] = r.n_initial;
    if (r.n_revised >= threshold) e["n_revised"] = r.n_revised;
    gj.push_back(e);
  }
  j["groups"] = gj;
  auto pj = Json::array();
  for (const auto& p : res.pairs) {
    Json e;
    e["quarter"] = p.quarter.str();
    e["a"] = std::string(group_name(p.a));
    e["b"] = std::string(group_name(p.b));
    e["disparity_initial"] = report::num(p.disparity_initial);
    e["disparity_revised"] = report::num(p.disparity_revised);
    e["selected"] = p.selected;
    pj.push_back(e);
  }
  j["pairs"] = pj;
  auto ej = Json::array();
  for (const auto& [q, why] : res.errors) ej.push_back({{"quarter", q.str()}, {"error", why}});
  j["errors"] = ej;
  write_json(run, o.output, j);
  if (!o.csv.empty()) {
    // Counts below the threshold are blanked in the CSV too.
    auto shown = res;
    for (auto& r : shown.groups) {
      if (r.n_initial < threshold) r.n_initial = 0;
      if (r.n_revised < threshold) r.n_revised = 0;
    }
    report::write_monitor_csv(run.open(o.csv), shown);
  }
}

struct ImputeOpts {
  std::string input = "-";
  std::string format = "auto";
  std::string output = "-";
  std::string posteriors;
  std::vector<std::string> outcomes;
  CohortFlags cohort;
  std::string surnames, firstnames, geography;
  double floor = kDefaultFloor;
  std::string mode = "known-race-kept";
  std::optional<int> round;
};

void run_impute(Run& run, const Global& g, const ImputeOpts& o) {
  run.set_primary(o.output);
  auto store = load_store(run, g, o.input, o.format);
  auto harmonizer = load_harmonizer(run, g);
  auto outcomes = load_outcomes(run, g, o.outcomes);
  for (const auto& p : {o.surnames, o.firstnames, o.geography}) run.add_input_file(p);
  auto tables = PriorTables::load(o.surnames, o.firstnames, o.geography, o.floor);
  DelayEngine engine(store, harmonizer, {o.cohort.skip_first_dob, g.threads});
  auto cohort = checked_cohort(engine, o.cohort.spec(), outcomes, g.threads);
  auto rows = compute_posteriors(store, cohort, tables, g.threads);

  ImputationOptions io;
  try {
    io.mode = parse_imputation_mode(o.mode);
  } catch (const DataError& e) {
    throw UsageError(std::string("--mode: ") + e.what());
  }
  io.round_decimals = o.round;

  std::size_t threshold = effective_threshold(g);
  auto n_initial = initial_counts(cohort);
  std::array<std::size_t, kGroupCount> n_final{};
  std::vector<AssessmentGroup> truth;
  for (const auto& m : cohort.members) {
    ++n_final[group_index(m.group)];
    truth.push_back(m.group);
  }
  std::vector<std::string> suppressed;
  for (std::size_t k = 0; k < kGroupCount; ++k)
    if (n_final[k] > 0 && n_final[k] < threshold) suppressed.emplace_back(kGroupNames[k]);
  auto mask = [&](GroupPrevalences p, bool initial_known) {
    for (std::size_t k = 0; k < kGroupCount; ++k)
      if (n_final[k] < threshold || (initial_known && n_initial[k] < threshold)) p[k].reset();
    return p;
  };

  auto j = report::document("imputation");
  j["cohort"] = report::to_json(cohort.spec);
  j["cohort"]["size"] = cohort.size();
  j["suppression_threshold"] = suppression_json(g);
  j["suppressed_groups"] = suppressed;
  j["mode"] = o.mode;
  j["round_decimals"] = o.round ? Json(*o.round) : Json(nullptr);
  j["floor"] = o.floor;
  std::size_t fallbacks = 0;
  for (const auto& r : rows) fallbacks += r.uniform_fallback ? 1 : 0;
  j["uniform_fallbacks"] = fallbacks;
  j["posterior_evaluation"] = report::to_json(evaluate_posteriors(rows, truth));
  auto results = Json::array();
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    auto a = imputed_assessment(cohort, k, rows, io);
    auto weighted = mask(a.weighted_initial, false), observed = mask(a.observed_initial, true),
         final = mask(a.truth_final, false);
    Json r;
    r["outcome"] = cohort.outcome_names[k];
    r["known_at_initial"] = a.known_at_initial;
    r["imputed"] = a.imputed;
    r["weighted_initial"] = report::to_json(weighted);
    r["observed_initial"] = report::to_json(observed);
    r["final"] = report::to_json(final);
    r["with_imputation"] = report::to_json(error_report(weighted, final));
    r["without_imputation"] = report::to_json(error_report(observed, final));
    results.push_back(std::move(r));
  }
  j["outcomes"] = results;
  write_json(run, o.output, j);
  if (!o.posteriors.empty()) {
    auto& out = run.open(o.posteriors);
    out << "patient_id";
    for (auto n : kGroupNames) out << ',' << n;
    out << ",uniform_fallback\n";
    for (const auto& r : rows) {
      out << text::csv_field(r.patient_id);
      for (double x : r.p) out << ',' << text::format_double(x);
      out << ',' << (r.uniform_fallback ? 1 : 0) << '\n';
    }
  }
}

struct StatsOpts {
  std::string input = "-";
  std::string output = "-";
  std::string csv;
  std::string test = "mw";
  std::string value;
  std::string group;
  std::vector<std::string> groups;
  std::string alternative = "two-sided";
  std::string p_column = "p";
  bool no_continuity = false;
};

void run_stats(Run& run, const Global& g, const StatsOpts& o) {
  run.set_primary(o.output);
  std::ifstream file;
  std::streambuf* src = std::cin.rdbuf();
  if (o.input != "-") {
    file.open(o.input, std::ios::binary);
    if (!file) throw DataError("cannot open input file " + o.input);
    src = file.rdbuf();
  }
  Sha256 sha;
  HashingInBuf buf(src, sha);
  std::istream in(&buf);
  auto table = text::read_csv(in);
  run.add_input({o.input, sha.hex(), sha.bytes()});

  auto j = report::document("stats");
  j["test"] = o.test;
  auto result_json = [](const stats::TestResult& r) {
    Json e;
    e["statistic"] = r.statistic;
    e["p_value"] = r.p_value;
    e["alternative"] = std::string(stats::alternative_name(r.alternative));
    e["n1"] = r.n1;
    e["n2"] = r.n2;
    e["exact"] = r.exact;
    return e;
  };

  if (o.test == "bh") {
    auto col = table.require_column(o.p_column);
    std::vector<double> p;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      auto v = col < table.rows[i].size() ? text::parse_double(table.rows[i][col]) : std::nullopt;
      if (!v) throw DataError("row " + std::to_string(i + 2) + ": column '" + o.p_column + "' is not a number");
      p.push_back(*v);
    }
    auto q = stats::benjamini_hochberg(p);
    j["p"] = p;
    j["adjusted"] = q;
    write_json(run, o.output, j);
    if (!o.csv.empty()) {
      auto& out = run.open(o.csv);
      for (std::size_t c = 0; c < table.header.size(); ++c) out << (c ? "," : "") << text::csv_field(table.header[c]);
      out << ",bh_adjusted\n";
      for (std::size_t i = 0; i < table.rows.size(); ++i) {
        for (std::size_t c = 0; c < table.rows[i].size(); ++c) out << (c ? "," : "") << text::csv_field(table.rows[i][c]);
        out << ',' << text::format_double(q[i]) << '\n';
      }
    }
    return;
  }

  if (o.value.empty() || o.group.empty()) throw UsageError("--value and --group are required for " + o.test);
  auto vc = table.require_column(o.value), gc = table.require_column(o.group);
  std::map<std::string, std::vector<double>> samples;
  std::size_t skipped = 0;
  for (const auto& row : table.rows) {
    if (vc >= row.size() || gc >= row.size()) {
      ++skipped;
      continue;
    }
    auto v = text::parse_double(row[vc]);
    if (!v || std::isnan(*v)) {
      ++skipped;
      continue;
    }
    samples[row[gc]].push_back(*v);
  }
  std::vector<std::string> names = o.groups;
  if (names.empty())
    for (const auto& [k, v] : samples) names.push_back(k);
  for (const auto& n : names)
    if (!samples.count(n)) throw DataError("group '" + n + "' has no values in column '" + o.value + "'");
  j["skipped_rows"] = skipped;
  j["groups"] = names;
  stats::Alternative alt;
  try {
    alt = stats::parse_alternative(o.alternative);
  } catch (const DataError& e) {
    throw UsageError(std::string("--alternative: ") + e.what());
  }

  if (o.test == "mw") {
    if (names.size() != 2) throw UsageError("mw needs exactly two groups (use --groups A,B)");
    j["result"] = result_json(stats::mann_whitney_u(samples[names[0]], samples[names[1]], alt, !o.no_continuity));
  } else if (o.test == "kw") {
    std::vector<std::vector<double>> gs;
    for (const auto& n : names) gs.push_back(samples[n]);
    j["result"] = result_json(stats::kruskal_wallis(gs));
  } else if (o.test == "pairwise-mw" || o.test == "pairwise-kw") {
    auto rows = Json::array();
    std::vector<double> ps;
    for (std::size_t a = 0; a < names.size(); ++a)
      for (std::size_t b = a + 1; b < names.size(); ++b) {
        auto r = o.test == "pairwise-mw"
                     ? stats::mann_whitney_u(samples[names[a]], samples[names[b]], alt, !o.no_continuity)
                     : stats::kruskal_wallis({samples[names[a]], samples[names[b]]});
        auto e = result_json(r);
        e["a"] = names[a];
        e["b"] = names[b];
        rows.push_back(e);
        ps.push_back(r.p_value);
      }
    auto q = stats::benjamini_hochberg(ps);
    for (std::size_t i = 0; i < q.size(); ++i) rows[i]["bh_adjusted"] = q[i];
    j["comparisons"] = rows;
  } else {
    throw UsageError("unknown test '" + o.test + "'");
  }
  write_json(run, o.output, j);
  (void)g;
}

struct SynthOpts {
  std::string generator;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> practices;
  std::string output = "-";
  std::string truth;
  std::string tables_dir;
  bool print_config = false;
};

void run_synth(Run& run, Global& g, const SynthOpts& o) {
  run.set_primary(o.output);
  GeneratorConfig c = GeneratorConfig::defaults();
  if (!o.generator.empty()) {
    run.add_input_file(o.generator);
    c = GeneratorConfig::load(o.generator);
  }
  if (o.seed) c.seed = *o.seed;
  if (o.practices) c.n_practices = *o.practices;
  c.threads = g.threads;
  c.validate();
  g.seed_used = c.seed;
  g.resolved["generator"] = c.to_json();
  if (o.print_config) {
    run.open(o.output) << c.to_json().dump(2) << '\n';
    return;
  }
  auto& records = run.open(o.output);
  std::ostream* truth = o.truth.empty() ? nullptr : &run.open(o.truth);
  if (!o.tables_dir.empty()) {
    run.ensure_dir(o.tables_dir);
    auto tables = prior_tables(c, build_name_model(c));
    using K = PriorTables::Kind;
    auto dir = fs::path(o.tables_dir);
    tables.write(run.open((dir / "surname.csv").string()), K::Surname);
    tables.write(run.open((dir / "firstname.csv").string()), K::Firstname);
    tables.write(run.open((dir / "geography.csv").string()), K::Geography);
  }
  write_generated(c, records, truth);
}

struct SweepOpts {
  std::string input = "-";
  std::string format = "auto";
  std::string output = "-";
  std::string csv;
  std::string from, to;
  CohortFlags cohort;
};

void run_sweep(Run& run, const Global& g, const SweepOpts& o) {
  run.set_primary(o.output);
  auto store = load_store(run, g, o.input, o.format);
  auto harmonizer = load_harmonizer(run, g);
  DelayEngine engine(store, harmonizer, {o.cohort.skip_first_dob, g.threads});
  auto from = parse_quarter(o.from, "--from"), to = parse_quarter(o.to, "--to");
  if (to < from) throw UsageError("--to precedes --from");
  CohortSpec base;
  base.min_age_years = o.cohort.min_age;
  base.scope = o.cohort.geo();
  base.require_visit_in_period = !o.cohort.all_patients;
  auto rows = cohort_sweep(engine, quarter_range(from, to), base, g.threads);
  std::size_t threshold = effective_threshold(g);

  auto j = report::document("sweep");
  j["suppression_threshold"] = suppression_json(g);
  auto a = Json::array();
  for (const auto& r : rows) {
    Json e;
    e["quarter"] = r.quarter.str();
    bool shown = r.cohort_size >= threshold && r.cohort_size > 0;
    e["cohort_size"] = shown ? Json(r.cohort_size) : Json(nullptr);
    e["mean_delay_days"] = shown ? report::num(r.mean_delay_days) : Json(nullptr);
    a.push_back(e);
  }
  j["quarters"] = a;
  write_json(run, o.output, j);
  if (!o.csv.empty()) report::write_sweep_csv(run.open(o.csv), rows, std::max<std::size_t>(threshold, 1));
}

void write_manifest(Run& run, const Global& g, const CLI::App& app, const std::string& sub, double seconds) {
  std::string path = g.manifest;
  if (path.empty()) {
    auto anchor = run.manifest_anchor();
    if (anchor.empty()) return;
    path = anchor + ".manifest.json";
  }
  Json j = report::document("run_manifest");
  j["tool_version"] = DELAYLENS_VERSION;
  j["subcommand"] = sub;
  // Global options plus the chosen subcommand's section.
  Json options;
  std::istringstream lines(app.config_to_str(true, false));
  for (std::string line; std::getline(lines, line);) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto key = line.substr(0, eq);
    auto dot = key.find('.');
    if (dot != std::string::npos && key.substr(0, dot) != sub) continue;
    options[key] = line.substr(eq + 1);
  }
  j["config"] = {{"options", options}, {"resolved", g.resolved}};
  auto files = [](const std::vector<FileDigest>& v) {
    auto a = Json::array();
    for (const auto& d : v) a.push_back({{"path", d.path}, {"sha256", d.sha256}, {"bytes", d.bytes}});
    return a;
  };
  j["inputs"] = files(run.inputs());
  j["seed"] = g.seed_used ? Json(*g.seed_used) : Json(nullptr);
  j["outputs"] = files(run.outputs());
  j["wall_clock_seconds"] = seconds;
  auto tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write manifest " + path);
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

}  // namespace

int main(int argc, char** argv) {
  auto started = std::chrono::steady_clock::now();
  CLI::App app{"delaylens: race-reporting delay analysis for health-record cohorts", "delaylens"};
  app.failure_message(CLI::FailureMessage::help);
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", DELAYLENS_VERSION);
  app.set_config("--config", "", "Option file (TOML/INI, one [section] per subcommand)")->envname("DELAYLENS_CONFIG");

  Global g;
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->capture_default_str();
  app.add_option("--harmonizer", g.harmonizer, "Race harmonizer keyword config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--code-sets", g.code_sets, "Outcome code-set file (JSON)")->check(CLI::ExistingFile);
  app.add_option("--manifest", g.manifest, "Run manifest path (default: <first output file>.manifest.json)");
  app.add_option("--suppress-below", g.threshold, "Cell-size suppression threshold")->capture_default_str();
  app.add_flag("--no-suppress", g.no_suppress, "Emit every cell regardless of size");
  app.add_flag("-q,--quiet", g.quiet, "No progress notes on stderr");

  auto add_input = [](CLI::App* cmd, std::string& input, std::string& format) {
    cmd->add_option("input", input, "Record file (JSONL or CSV, - for stdin)")->capture_default_str();
    cmd->add_option("--format", format, "auto, jsonl or csv")->capture_default_str();
  };

  IngestOpts ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Validate, deduplicate and canonicalize record files");
  c_ingest->add_option("inputs", ingest.inputs, "Record files (- for stdin)")->capture_default_str();
  c_ingest->add_option("--format", ingest.format, "auto, jsonl or csv")->capture_default_str();
  c_ingest->add_option("-o,--output", ingest.output, "Canonical JSONL output")->capture_default_str();
  c_ingest->add_option("--summary", ingest.summary, "Ingest summary (JSON)");
  c_ingest->add_option("--rejects", ingest.rejects, "Rejected rows with reasons (CSV)");
  c_ingest->add_option("--max-rejects", ingest.max_rejects, "Fail when more rows are rejected");

  DelaysOpts delays;
  auto* c_delays = app.add_subcommand("delays", "Per-patient reporting delays, curves and unit summaries");
  add_input(c_delays, delays.input, delays.format);
  c_delays->add_option("-o,--output", delays.output, "Report (JSON)")->capture_default_str();
  c_delays->add_option("--curves", delays.curves, "Cumulative reporting curves (CSV)");
  c_delays->add_option("--summary", delays.summary, "Per-unit delay summary (CSV)");
  c_delays->add_option("--horizon", delays.horizon, "Curve horizon in days")->capture_default_str()->check(CLI::NonNegativeNumber);
  c_delays->add_option("--units", delays.units, "Summary units: national, state or practice")->capture_default_str();
  delays.cohort.add(c_delays, false);

  AssessOpts assess;
  auto* c_assess = app.add_subcommand("assess", "Prevalence snapshots and error report for one cohort");
  add_input(c_assess, assess.input, assess.format);
  c_assess->add_option("-o,--output", assess.output, "Report (JSON)")->capture_default_str();
  c_assess->add_option("--csv", assess.csv, "Long-format snapshot CSV");
  c_assess->add_option("--outcome", assess.outcomes, "Outcome name (repeatable)")->required();
  assess.cohort.add(c_assess, true);
  c_assess->add_option("--max-quarters", assess.max_quarters, "Cap on quarterly snapshots after t_initial");
  c_assess->add_flag("--three-years", assess.three_years, "Same as --max-quarters 12");
  c_assess->add_option("--replicates", assess.replicates, "Bootstrap replicates (0 = none)")->capture_default_str();
  c_assess->add_option("--seed", assess.seed, "Bootstrap seed")->capture_default_str();
  c_assess->add_option("--bootstrap-scheme", assess.scheme, "two-stage or patient")->capture_default_str();
  c_assess->add_flag("--include-replicates", assess.include_replicates, "Emit every replicate's metrics");

  MonitorOpts mon;
  auto* c_monitor = app.add_subcommand("monitor", "Initial vs revised estimates over consecutive cohort quarters");
  add_input(c_monitor, mon.input, mon.format);
  c_monitor->add_option("-o,--output", mon.output, "Report (JSON)")->capture_default_str();
  c_monitor->add_option("--csv", mon.csv, "Long-format CSV");
  c_monitor->add_option("--from", mon.from, "First cohort quarter")->required();
  c_monitor->add_option("--to", mon.to, "Last cohort quarter")->required();
  c_monitor->add_option("--outcome", mon.outcome, "Outcome name")->required();
  c_monitor->add_option("--revised-after", mon.revised_after, "Revised estimate this many quarters after t_initial")
      ->capture_default_str();
  c_monitor->add_flag("--revised-final", mon.revised_final, "Revised estimate at t_final");
  c_monitor->add_option("--pair", mon.pair, "Comparison pair A:B (default: White vs largest disparity)");
  mon.cohort.add(c_monitor, false);
  c_monitor->remove_option(c_monitor->get_option("--quarter"));

  ImputeOpts imp;
  auto* c_impute = app.add_subcommand("impute", "BIFSG-weighted prevalence at t_initial");
  add_input(c_impute, imp.input, imp.format);
  c_impute->add_option("-o,--output", imp.output, "Report (JSON)")->capture_default_str();
  c_impute->add_option("--posteriors", imp.posteriors, "Per-patient posteriors (CSV)");
  c_impute->add_option("--outcome", imp.outcomes, "Outcome name (repeatable)")->required();
  imp.cohort.add(c_impute, true);
  c_impute->add_option("--surnames", imp.surnames, "Surname table (CSV)")->required()->check(CLI::ExistingFile);
  c_impute->add_option("--firstnames", imp.firstnames, "First-name table (CSV)")->check(CLI::ExistingFile);
  c_impute->add_option("--geography", imp.geography, "Geography table (CSV)")->check(CLI::ExistingFile);
  c_impute->add_option("--floor", imp.floor, "Likelihood floor relative to the row maximum")->capture_default_str();
  c_impute->add_option("--mode", imp.mode, "known-race-kept or all-imputed")->capture_default_str();
  c_impute->add_option("--round", imp.round, "Round posteriors to this many decimals");

  StatsOpts st;
  auto* c_stats = app.add_subcommand("stats", "Rank tests and Benjamini-Hochberg adjustment on CSV columns");
  c_stats->add_option("input", st.input, "CSV file (- for stdin)")->capture_default_str();
  c_stats->add_option("-o,--output", st.output, "Result (JSON)")->capture_default_str();
  c_stats->add_option("--csv", st.csv, "Input rows with adjusted p-values (bh only)");
  c_stats->add_option("--test", st.test, "mw, kw, pairwise-mw, pairwise-kw or bh")->capture_default_str();
  c_stats->add_option("--value", st.value, "Value column");
  c_stats->add_option("--group", st.group, "Group column");
  c_stats->add_option("--groups", st.groups, "Groups to compare, in order")->delimiter(',');
  c_stats->add_option("--alternative", st.alternative, "two-sided, less or greater")->capture_default_str();
  c_stats->add_option("--p-column", st.p_column, "p-value column for bh")->capture_default_str();
  c_stats->add_flag("--no-continuity", st.no_continuity, "Normal approximation without continuity correction");

  SynthOpts syn;
  auto* c_synth = app.add_subcommand("synth", "Generate synthetic records with ground truth");
  c_synth->add_option("--generator", syn.generator, "Generator config (JSON)")->check(CLI::ExistingFile);
  c_synth->add_option("--seed", syn.seed, "Override the config seed");
  c_synth->add_option("--practices", syn.practices, "Override the practice count");
  c_synth->add_option("-o,--output", syn.output, "Records (JSONL)")->capture_default_str();
  c_synth->add_option("--truth", syn.truth, "Ground truth (JSONL)");
  c_synth->add_option("--tables-dir", syn.tables_dir, "Write toy BIFSG prior tables here");
  c_synth->add_flag("--print-config", syn.print_config, "Write the resolved generator config instead of records");

  SweepOpts sw;
  auto* c_sweep = app.add_subcommand("sweep", "Cohort size and mean delay per cohort quarter");
  add_input(c_sweep, sw.input, sw.format);
  c_sweep->add_option("-o,--output", sw.output, "Report (JSON)")->capture_default_str();
  c_sweep->add_option("--csv", sw.csv, "Flat CSV");
  c_sweep->add_option("--from", sw.from, "First quarter")->required();
  c_sweep->add_option("--to", sw.to, "Last quarter")->required();
  sw.cohort.add(c_sweep, false);
  c_sweep->remove_option(c_sweep->get_option("--quarter"));

  if (const char* env = std::getenv("DELAYLENS_CONFIG"); env && *env && !fs::exists(env)) {
    std::cerr << "delaylens: DELAYLENS_CONFIG points to a missing file: " << env << '\n';
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto* sub = app.get_subcommands().front();
  Run run;
  try {
    if (sub == c_ingest) run_ingest(run, g, ingest);
    else if (sub == c_delays) run_delays(run, g, delays);
    else if (sub == c_assess) run_assess(run, g, assess);
    else if (sub == c_monitor) run_monitor(run, g, mon);
    else if (sub == c_impute) run_impute(run, g, imp);
    else if (sub == c_stats) run_stats(run, g, st);
    else if (sub == c_synth) run_synth(run, g, syn);
    else if (sub == c_sweep) run_sweep(run, g, sw);
    run.commit();
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_manifest(run, g, app, sub->get_name(), secs);
  } catch (const UsageError& e) {
    run.abort();
    std::cerr << "delaylens " << sub->get_name() << ": " << e.what() << "\n\n" << sub->help();
    return 2;
  } catch (const ContractError& e) {
    run.abort();
    std::cerr << "delaylens " << sub->get_name() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    run.abort();
    std::cerr << "delaylens " << sub->get_name() << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
