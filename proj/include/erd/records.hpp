// Copyright 2026 The ERD Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Line-delimited JSON records exchanged between pipeline stages.
//
//   scored.jsonl     {user_id, post_id, timestamp, text, title?, risk,
//                     bases:[{id, dimension, sim}], selected, label?, split?}
//   decisions.jsonl  {user_id, alerted, alert_post_index, final_probability,
//                     posts_seen, inferences}
//   traces.jsonl     {user_id, label?, posts_total, complete,
//                     points:[[post_index, probability]]}
//   labels.jsonl     {user_id, label}; extra fields are ignored, so a posts
//                    file with labels works too.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "erd/corpus.hpp"
#include "erd/metrics.hpp"
#include "erd/screening.hpp"
#include "erd/stream.hpp"

namespace erd {

struct ScoredRecord {
  Post post;
  double risk = 0.0;
  std::vector<DiagnosticBasis> bases;
  bool selected = false;
  std::optional<int> label;
  std::optional<Split> split;
};

std::string scored_line(const ScoredPost& scored, bool selected, std::optional<int> label,
                        std::optional<Split> split);

// Grouped by user_id, each user's records in chronological order.
std::map<std::string, std::vector<ScoredRecord>> load_scored(const std::filesystem::path& path);

std::string decision_line(const Decision& decision);
std::vector<Decision> load_decisions(const std::filesystem::path& path);

LabelMap load_labels(const std::filesystem::path& path);

std::string trace_line(const StreamRun& run, std::optional<int> label);

struct TraceFile {
  std::vector<UserTrace> traces;
  LabelMap labels;          // from records that carry one
  bool all_complete = true;  // every trace covers the full history
};

TraceFile load_traces(const std::filesystem::path& path);

}  // namespace erd
