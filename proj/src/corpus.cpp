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

#include "erd/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "erd/util.hpp"
#include "json.hpp"

namespace erd {
namespace {

using nlohmann::json;

bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos;
}

std::string required_string(const json& record, const char* key,
                            const std::string& source, std::size_t line) {
  const auto it = record.find(key);
  if (it == record.end()) {
    throw ParseError(source, line, std::string("missing field '") + key + "'");
  }
  if (!it->is_string()) {
    throw ParseError(source, line, std::string("field '") + key + "' must be a string");
  }
  return it->get<std::string>();
}

std::int64_t parse_timestamp(const json& value, const std::string& source,
                             std::size_t line) {
  std::int64_t ts = -1;
  if (value.is_number_integer()) {
    ts = value.get<std::int64_t>();
  } else if (value.is_string()) {
    const auto& s = value.get_ref<const std::string&>();
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), ts);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ParseError(source, line, "unparsable timestamp '" + s + "'");
    }
  } else {
    throw ParseError(source, line, "unparsable timestamp (expected integer epoch seconds)");
  }
  if (ts < 0) throw ParseError(source, line, "timestamp must be >= 0");
  return ts;
}

}  // namespace

bool chronologically_before(const Post& a, const Post& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  return a.post_id < b.post_id;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kValidation:
      return "validation";
    case Split::kTest:
      return "test";
  }
  return "train";
}

std::optional<Split> parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation") return Split::kValidation;
  if (name == "test") return Split::kTest;
  return std::nullopt;
}

Split default_split(std::string_view user_id) {
  const std::uint64_t bucket = mix64(fnv1a64(user_id)) % 10;
  if (bucket < 7) return Split::kTrain;
  if (bucket < 8) return Split::kValidation;
  return Split::kTest;
}

const UserHistory* Dataset::find(std::string_view user_id) const {
  const auto it = std::lower_bound(
      users.begin(), users.end(), user_id,
      [](const UserHistory& u, std::string_view id) { return u.user_id < id; });
  if (it == users.end() || it->user_id != user_id) return nullptr;
  return &*it;
}

std::vector<const UserHistory*> Dataset::in_split(Split which) const {
  std::vector<const UserHistory*> out;
  for (const auto& user : users) {
    const auto it = split.find(user.user_id);
    if (it != split.end() && it->second == which) out.push_back(&user);
  }
  return out;
}

std::size_t Dataset::post_count() const {
  std::size_t n = 0;
  for (const auto& user : users) n += user.posts.size();
  return n;
}

Dataset parse_histories(std::istream& in, const std::string& source) {
  std::map<std::string, UserHistory> by_user;
  std::map<std::string, std::optional<Split>> explicit_split;
  std::unordered_map<std::string, std::set<std::string>> seen_ids;

  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (is_blank(raw)) continue;
    json record;
    try {
      record = json::parse(raw);
    } catch (const json::parse_error& e) {
      throw ParseError(source, line, std::string("malformed record: ") + e.what());
    }
    if (!record.is_object()) throw ParseError(source, line, "record must be a JSON object");

    Post post;
    post.user_id = required_string(record, "user_id", source, line);
    post.post_id = required_string(record, "post_id", source, line);
    if (post.user_id.empty()) throw ParseError(source, line, "empty user_id");
    if (post.post_id.empty()) throw ParseError(source, line, "empty post_id");
    if (!record.contains("timestamp")) throw ParseError(source, line, "missing field 'timestamp'");
    post.timestamp = parse_timestamp(record["timestamp"], source, line);
    post.text = required_string(record, "text", source, line);
    if (is_blank(post.text)) throw ParseError(source, line, "empty text");
    if (const auto it = record.find("title"); it != record.end() && !it->is_null()) {
      if (!it->is_string()) throw ParseError(source, line, "field 'title' must be a string");
      if (!is_blank(it->get_ref<const std::string&>())) post.title = it->get<std::string>();
    }

    if (!seen_ids[post.user_id].insert(post.post_id).second) {
      throw ParseError(source, line,
                       "duplicate post_id '" + post.post_id + "' for user '" + post.user_id + "'");
    }

    UserHistory& user = by_user[post.user_id];
    user.user_id = post.user_id;

    if (const auto it = record.find("label"); it != record.end() && !it->is_null()) {
      if (!it->is_number_integer() || (it->get<int>() != 0 && it->get<int>() != 1)) {
        throw ParseError(source, line, "label must be 0 or 1");
      }
      const int label = it->get<int>();
      if (user.label && *user.label != label) {
        throw ParseError(source, line, "conflicting label for user '" + post.user_id + "'");
      }
      user.label = label;
    }
    if (const auto it = record.find("split"); it != record.end() && !it->is_null()) {
      const auto split = it->is_string() ? parse_split(it->get<std::string>()) : std::nullopt;
      if (!split) throw ParseError(source, line, "split must be train, validation or test");
      auto& slot = explicit_split[post.user_id];
      if (slot && *slot != *split) {
        throw ParseError(source, line, "conflicting split for user '" + post.user_id + "'");
      }
      slot = split;
    }
    user.posts.push_back(std::move(post));
  }

  Dataset dataset;
  dataset.users.reserve(by_user.size());
  for (auto& [id, user] : by_user) {
    std::sort(user.posts.begin(), user.posts.end(), chronologically_before);
    const auto it = explicit_split.find(id);
    dataset.split[id] =
        (it != explicit_split.end() && it->second) ? *it->second : default_split(id);
    dataset.users.push_back(std::move(user));
  }
  return dataset;
}

Dataset load_histories(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_histories(in, path.string());
}

void write_histories(std::ostream& out, const Dataset& dataset) {
  for (const auto& user : dataset.users) {
    const auto split_it = dataset.split.find(user.user_id);
    for (const auto& post : user.posts) {
      json record = {{"user_id", post.user_id},
                     {"post_id", post.post_id},
                     {"timestamp", post.timestamp},
                     {"text", post.text}};
      if (post.title) record["title"] = *post.title;
      if (user.label) record["label"] = *user.label;
      if (split_it != dataset.split.end()) record["split"] = to_string(split_it->second);
      out << record.dump() << '\n';
    }
  }
}

std::vector<PostGroup> group_by_interval(const UserHistory& history, int interval_days) {
  if (interval_days < 1) throw std::invalid_argument("interval_days must be >= 1");
  const std::int64_t width = static_cast<std::int64_t>(interval_days) * kSecondsPerDay;
  std::vector<PostGroup> groups;
  for (const auto& post : history.posts) {
    if (groups.empty() || post.timestamp - groups.back().start >= width) {
      groups.push_back(PostGroup{post.timestamp, {}});
    }
    groups.back().posts.push_back(post);
  }
  return groups;
}

}  // namespace erd
