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

// Posting histories: loading, serialization, temporal grouping and the
// synthetic generator used for offline end-to-end runs.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace erd {

inline constexpr std::int64_t kSecondsPerDay = 86400;

struct Post {
  std::string user_id;
  std::string post_id;
  std::int64_t timestamp = 0;  // epoch seconds, UTC
  std::string text;
  std::optional<std::string> title;
};

// Chronological order used everywhere: (timestamp, post_id).
bool chronologically_before(const Post& a, const Post& b);

struct UserHistory {
  std::string user_id;
  std::vector<Post> posts;  // sorted by (timestamp, post_id)
  std::optional<int> label;
};

enum class Split { kTrain, kValidation, kTest };

std::string_view to_string(Split split);
std::optional<Split> parse_split(std::string_view name);

struct Dataset {
  std::vector<UserHistory> users;  // sorted by user_id
  std::map<std::string, Split> split;

  const UserHistory* find(std::string_view user_id) const;
  // Users assigned to `split`, in user_id order.
  std::vector<const UserHistory*> in_split(Split which) const;
  std::size_t post_count() const;
};

// Reads line-delimited JSON records {user_id, post_id, timestamp, text,
// label?, title?, split?}. Blank lines are skipped. Throws ParseError with
// the offending line on malformed records, empty text, bad timestamps,
// conflicting labels/splits and duplicate post ids within a user.
// Users without an explicit split are assigned one from a hash of user_id
// (70% train, 10% validation, 20% test).
Dataset parse_histories(std::istream& in, const std::string& source = "<stream>");
Dataset load_histories(const std::filesystem::path& path);

// Writes one record per post, users in order, posts chronologically.
void write_histories(std::ostream& out, const Dataset& dataset);

// Deterministic split for users that arrive without one.
Split default_split(std::string_view user_id);

struct PostGroup {
  std::int64_t start = 0;  // timestamp of the group's first post
  std::vector<Post> posts;
};

// Greedy windows from each group's first post: a post joins the current
// group while it is less than interval_days after the group start.
std::vector<PostGroup> group_by_interval(const UserHistory& history,
                                         int interval_days);

struct SynthConfig {
  std::uint64_t seed = 0;
  int n_users = 400;
  int posts_per_user = 100;
  double positive_fraction = 0.25;
  // Per-token dropout and insertion probability for template paraphrases.
  double noise_rate = 0.15;
  // Fraction of a positive user's posts that paraphrase a template.
  double risky_rate = 0.5;
  // Per-post chance that a negative user writes one isolated risky post.
  double decoy_rate = 0.005;
  double mean_gap_days = 1.5;
  double train_fraction = 0.7;
  double validation_fraction = 0.1;

  void validate() const;
};

// Pure function of the config.
Dataset synth_generate(const SynthConfig& config);

}  // namespace erd
