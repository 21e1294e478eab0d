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

#include "erd/records.hpp"

#include <algorithm>
#include <fstream>
#include <functional>

#include "erd/util.hpp"
#include "json.hpp"

namespace erd {
namespace {

using nlohmann::json;

void for_each_record(const std::filesystem::path& path,
                     const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (raw.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      fn(json::parse(raw), line);
    } catch (const json::exception& e) {
      throw ParseError(path.string(), line, e.what());
    }
  }
}

std::optional<int> optional_label(const json& record) {
  const auto it = record.find("label");
  if (it == record.end() || it->is_null()) return std::nullopt;
  return it->get<int>();
}

}  // namespace

std::string scored_line(const ScoredPost& scored, bool selected, std::optional<int> label,
                        std::optional<Split> split) {
  json bases = json::array();
  for (const auto& b : scored.bases) {
    bases.push_back({{"id", b.template_id}, {"dimension", b.dimension}, {"sim", b.similarity}});
  }
  json record = {{"user_id", scored.post.user_id},
                 {"post_id", scored.post.post_id},
                 {"timestamp", scored.post.timestamp},
                 {"risk", scored.risk},
                 {"bases", bases},
                 {"selected", selected},
                 {"text", scored.post.text}};
  if (scored.post.title) record["title"] = *scored.post.title;
  if (label) record["label"] = *label;
  if (split) record["split"] = to_string(*split);
  return record.dump();
}

std::map<std::string, std::vector<ScoredRecord>> load_scored(const std::filesystem::path& path) {
  std::map<std::string, std::vector<ScoredRecord>> out;
  for_each_record(path, [&](const json& r, std::size_t line) {
    ScoredRecord rec;
    rec.post.user_id = r.at("user_id").get<std::string>();
    rec.post.post_id = r.at("post_id").get<std::string>();
    rec.post.timestamp = r.at("timestamp").get<std::int64_t>();
    rec.post.text = r.at("text").get<std::string>();
    if (r.contains("title") && r["title"].is_string()) rec.post.title = r["title"].get<std::string>();
    rec.risk = r.at("risk").get<double>();
    for (const auto& b : r.at("bases")) {
      rec.bases.push_back({b.at("id").get<std::string>(), b.at("dimension").get<std::string>(),
                           b.at("sim").get<double>()});
    }
    rec.selected = r.at("selected").get<bool>();
    rec.label = optional_label(r);
    if (r.contains("split") && r["split"].is_string()) {
      rec.split = parse_split(r["split"].get<std::string>());
      if (!rec.split) throw ParseError(path.string(), line, "bad split");
    }
    out[rec.post.user_id].push_back(std::move(rec));
  });
  for (auto& [user, records] : out) {
    std::sort(records.begin(), records.end(), [](const ScoredRecord& a, const ScoredRecord& b) {
      return chronologically_before(a.post, b.post);
    });
  }
  return out;
}

std::string decision_line(const Decision& d) {
  const json record = {{"user_id", d.user_id},
                       {"alerted", d.alerted},
                       {"alert_post_index", d.alert_post_index ? json(*d.alert_post_index) : json()},
                       {"final_probability", d.final_probability},
                       {"posts_seen", d.posts_seen},
                       {"inferences", d.inferences}};
  return record.dump();
}

std::vector<Decision> load_decisions(const std::filesystem::path& path) {
  std::vector<Decision> out;
  for_each_record(path, [&](const json& r, std::size_t line) {
    Decision d;
    d.user_id = r.at("user_id").get<std::string>();
    d.alerted = r.at("alerted").get<bool>();
    if (const auto& idx = r.at("alert_post_index"); !idx.is_null()) d.alert_post_index = idx.get<int>();
    if (d.alerted != d.alert_post_index.has_value()) {
      throw ParseError(path.string(), line, "alerted and alert_post_index disagree");
    }
    d.final_probability = r.at("final_probability").get<double>();
    d.posts_seen = r.at("posts_seen").get<int>();
    d.inferences = r.at("inferences").get<int>();
    out.push_back(std::move(d));
  });
  return out;
}

LabelMap load_labels(const std::filesystem::path& path) {
  LabelMap labels;
  for_each_record(path, [&](const json& r, std::size_t line) {
    const auto label = optional_label(r);
    if (!label) return;
    if (*label != 0 && *label != 1) throw ParseError(path.string(), line, "label must be 0 or 1");
    const auto user = r.at("user_id").get<std::string>();
    const auto [it, inserted] = labels.emplace(user, *label);
    if (!inserted && it->second != *label) {
      throw ParseError(path.string(), line, "conflicting label for user '" + user + "'");
    }
  });
  return labels;
}

std::string trace_line(const StreamRun& run, std::optional<int> label) {
  json points = json::array();
  for (const auto& p : run.state.prob_trace) points.push_back({p.post_index, p.probability});
  for (const auto& p : run.trace_after_alert) points.push_back({p.post_index, p.probability});
  const bool complete = !run.decision.alerted || run.state.posts_seen == run.posts_total ||
                        run.full_trace;
  json record = {{"user_id", run.decision.user_id},
                 {"posts_total", run.posts_total},
                 {"complete", complete},
                 {"points", points}};
  if (label) record["label"] = *label;
  return record.dump();
}

TraceFile load_traces(const std::filesystem::path& path) {
  TraceFile file;
  for_each_record(path, [&](const json& r, std::size_t) {
    UserTrace t;
    t.user_id = r.at("user_id").get<std::string>();
    t.posts_total = r.at("posts_total").get<int>();
    for (const auto& p : r.at("points")) t.points.push_back({p.at(0).get<int>(), p.at(1).get<double>()});
    file.all_complete = file.all_complete && r.value("complete", false);
    if (const auto label = optional_label(r)) file.labels[t.user_id] = *label;
    file.traces.push_back(std::move(t));
  });
  return file;
}

}  // namespace erd
