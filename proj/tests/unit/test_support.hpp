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

// Small builders shared by the unit tests.

#pragma once

#include <sstream>
#include <string>

#include "delaylens/event_store.hpp"

namespace delaylens::testing {

inline std::string rec(const std::string& patient, const std::string& practice, const std::string& date,
                       const std::string& kind, const std::string& value) {
  return "{\"patient_id\":\"" + patient + "\",\"practice_id\":\"" + practice + "\",\"date\":\"" + date +
         "\",\"kind\":\"" + kind + "\",\"value\":\"" + value + "\"}\n";
}

inline EventStore store_from(const std::string& jsonl) {
  std::istringstream in(jsonl);
  EventStoreBuilder b;
  auto s = b.ingest(in);
  if (s.rejected != 0) throw DataError("test fixture has rejected rows: " + s.rejects.front().reason);
  return std::move(b).finish();
}

inline Date d(const char* s) { return *Date::parse(s); }

}  // namespace delaylens::testing
