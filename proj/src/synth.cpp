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

// Synthetic posting histories. Positive users mix template paraphrases
// (token dropout and insertion at noise_rate) into neutral filler; negative
// users post filler with the occasional isolated risky post.

#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "erd/corpus.hpp"
#include "erd/templates.hpp"
#include "erd/util.hpp"

namespace erd {
namespace {

constexpr std::int64_t kEpochStart = 1420070400;  // 2015-01-01T00:00:00Z

template <std::size_t N>
const char* pick(Rng& rng, const std::array<const char*, N>& items) {
  return items[rng.below(N)];
}

constexpr std::array<const char*, 14> kShows = {
    "the new sci-fi series", "a cooking documentary", "the playoff highlights",
    "an old western",        "that heist movie",      "the nature special",
    "a stand-up special",    "the season finale",     "a space documentary",
    "the baking competition", "a courtroom drama",    "the travel vlog",
    "the chess tournament",  "a car restoration show"};
constexpr std::array<const char*, 10> kPeople = {
    "my roommate", "my brother", "the neighbors", "some coworkers", "my cousin",
    "a friend from class", "my dad", "the team", "my aunt", "our landlord"};
constexpr std::array<const char*, 12> kItems = {
    "hiking boots", "a mechanical keyboard", "a road bike", "a rice cooker", "noise cancelling headphones",
    "a standing desk", "a used camera", "winter tires", "a tent", "a drone", "an espresso machine", "board games"};
constexpr std::array<const char*, 10> kCities = {
    "Portland", "Denver", "Austin", "Toronto", "Chicago", "Seattle", "Boston", "Dublin", "Melbourne", "Leeds"};
constexpr std::array<const char*, 10> kGood = {
    "pretty fun", "surprisingly good", "great", "worth it", "really solid",
    "hilarious", "impressive", "decent", "amazing", "better than expected"};
constexpr std::array<const char*, 10> kFoods = {
    "lasagna", "tacos", "banana bread", "ramen", "curry", "pancakes", "chili", "sushi rolls", "pizza dough", "stir fry"};
constexpr std::array<const char*, 10> kTopics = {
    "budget travel", "sourdough", "python scripts", "vintage cameras", "bouldering",
    "home networking", "fantasy football", "bird watching", "woodworking", "retro consoles"};
constexpr std::array<const char*, 8> kTeams = {
    "Lakers", "Packers", "Yankees", "Celtics", "Arsenal", "Canucks", "Bruins", "Dodgers"};

std::string filler_post(Rng& rng) {
  char buf[256];
  switch (rng.below(16)) {
    case 0:
      std::snprintf(buf, sizeof buf, "Just finished watching %s with %s, %s.", pick(rng, kShows),
                    pick(rng, kPeople), pick(rng, kGood));
      break;
    case 1:
      std::snprintf(buf, sizeof buf, "Anyone know a good place to buy %s in %s?", pick(rng, kItems),
                    pick(rng, kCities));
      break;
    case 2:
      std::snprintf(buf, sizeof buf, "The %s game last night was %s.", pick(rng, kTeams), pick(rng, kGood));
      break;
    case 3:
      std::snprintf(buf, sizeof buf, "Made %s for dinner tonight and it turned out %s.", pick(rng, kFoods),
                    pick(rng, kGood));
      break;
    case 4:
      std::snprintf(buf, sizeof buf, "Thinking about getting %s, any recommendations?", pick(rng, kItems));
      break;
    case 5:
      std::snprintf(buf, sizeof buf, "Traffic in %s this morning was wild.", pick(rng, kCities));
      break;
    case 6:
      std::snprintf(buf, sizeof buf, "Has anyone here gotten into %s? Looking for starter tips.",
                    pick(rng, kTopics));
      break;
    case 7:
      std::snprintf(buf, sizeof buf, "Our cat figured out how to open the pantry door, %s.",
                    pick(rng, kGood));
      break;
    case 8:
      std::snprintf(buf, sizeof buf, "Visiting %s next month with %s, what should we see?",
                    pick(rng, kCities), pick(rng, kPeople));
      break;
    case 9:
      std::snprintf(buf, sizeof buf, "Finally fixed the wifi setup using a guide on %s.", pick(rng, kTopics));
      break;
    case 10:
      std::snprintf(buf, sizeof buf, "Weekend plan: %s and maybe %s.", pick(rng, kTopics), pick(rng, kFoods));
      break;
    case 11:
      std::snprintf(buf, sizeof buf, "Does %s count as a real hobby? Asking for %s.", pick(rng, kTopics),
                    pick(rng, kPeople));
      break;
    case 12:
      std::snprintf(buf, sizeof buf, "Picked up %s at a yard sale for ten bucks.", pick(rng, kItems));
      break;
    case 13:
      std::snprintf(buf, sizeof buf, "Watching %s again, still %s.", pick(rng, kShows), pick(rng, kGood));
      break;
    case 14:
      std::snprintf(buf, sizeof buf, "Quick question about %s: which brand do people trust?",
                    pick(rng, kItems));
      break;
    default:
      std::snprintf(buf, sizeof buf, "Rain all day in %s, so %s it is.", pick(rng, kCities), pick(rng, kFoods));
      break;
  }
  return buf;
}

// Words spliced into paraphrases; the emotional ones overlap the bundled
// lexicon's negemo and health categories.
constexpr std::array<const char*, 20> kInsertions = {
    "really", "just",  "so",    "alone",  "lately",  "hate", "miss",   "honestly", "tired", "again",
    "always", "still", "awful", "lonely", "anymore", "sad",  "hurts",  "empty",    "today", "cry"};
constexpr std::array<const char*, 8> kOpeners = {
    "Honestly,", "Lately", "Some days", "Not sure why but", "Today", "Again", "Ugh,", "Tbh"};
constexpr std::array<const char*, 6> kClosers = {
    "Not sure what to do.", "Anyone else?", "It's been weeks.", "I hate this.",
    "Feeling so alone.", "Every single day."};

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : text) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string risky_post(Rng& rng, const std::vector<Template>& pool, double noise_rate) {
  const Template& t = pool[rng.below(pool.size())];
  std::vector<std::string> words;
  if (rng.bernoulli(0.4)) words.emplace_back(pick(rng, kOpeners));
  for (const auto& w : split_words(t.text)) {
    if (!rng.bernoulli(noise_rate)) words.push_back(w);
    if (rng.bernoulli(noise_rate)) words.emplace_back(pick(rng, kInsertions));
  }
  if (rng.bernoulli(0.4)) {
    for (const auto& w : split_words(pick(rng, kClosers))) words.push_back(w);
  }
  if (words.empty()) return t.text;
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::string pad_number(int value, int width) {
  std::string s = std::to_string(value);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_users < 1) throw std::invalid_argument("synth: n_users must be >= 1");
  if (posts_per_user < 1) throw std::invalid_argument("synth: posts_per_user must be >= 1");
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string("synth: ") + name + " must lie in [0, 1]");
  };
  unit(positive_fraction, "positive_fraction");
  unit(noise_rate, "noise_rate");
  unit(risky_rate, "risky_rate");
  unit(decoy_rate, "decoy_rate");
  unit(train_fraction, "train_fraction");
  unit(validation_fraction, "validation_fraction");
  if (train_fraction + validation_fraction > 1.0) {
    throw std::invalid_argument("synth: train_fraction + validation_fraction must be <= 1");
  }
  if (!(mean_gap_days > 0.0)) throw std::invalid_argument("synth: mean_gap_days must be > 0");
}

Dataset synth_generate(const SynthConfig& config) {
  config.validate();
  Rng rng(mix64(config.seed ^ 0x53594e5448ULL));
  const auto pool = preset("full").templates;

  const int n = config.n_users;
  const int positives = static_cast<int>(std::lround(config.positive_fraction * n));
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < positives; ++i) labels[static_cast<std::size_t>(i)] = 1;
  rng.shuffle(labels);

  Dataset dataset;
  dataset.users.reserve(static_cast<std::size_t>(n));
  for (int u = 0; u < n; ++u) {
    UserHistory user;
    user.user_id = "u" + pad_number(u, 5);
    user.label = labels[static_cast<std::size_t>(u)];
    const bool positive = *user.label == 1;
    double t = static_cast<double>(kEpochStart) + rng.uniform(0.0, 365.0 * kSecondsPerDay);
    bool any_risky = false;
    for (int j = 0; j < config.posts_per_user; ++j) {
      Post post;
      post.user_id = user.user_id;
      post.post_id = user.user_id + "-p" + pad_number(j, 5);
      t += std::max(60.0, rng.exponential(config.mean_gap_days * kSecondsPerDay));
      post.timestamp = static_cast<std::int64_t>(t);
      const bool last = j + 1 == config.posts_per_user;
      const bool risky = positive ? (rng.bernoulli(config.risky_rate) || (last && !any_risky))
                                  : rng.bernoulli(config.decoy_rate);
      any_risky = any_risky || risky;
      post.text = risky ? risky_post(rng, pool, config.noise_rate) : filler_post(rng);
      user.posts.push_back(std::move(post));
    }
    dataset.users.push_back(std::move(user));
  }

  // Stratified split so every partition sees both classes when possible.
  for (const int cls : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.users.size(); ++i) {
      if (*dataset.users[i].label == cls) members.push_back(i);
    }
    rng.shuffle(members);
    const auto m = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::lround(config.train_fraction * m));
    const auto n_val = static_cast<std::size_t>(std::lround(config.validation_fraction * m));
    for (std::size_t r = 0; r < members.size(); ++r) {
      const Split s = r < n_train ? Split::kTrain
                                  : (r < n_train + n_val ? Split::kValidation : Split::kTest);
      dataset.split[dataset.users[members[r]].user_id] = s;
    }
  }
  return dataset;
}

}  // namespace erd
