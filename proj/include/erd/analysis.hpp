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

// Lexical category proportions with a two-proportion z-test, and the
// moving-average depression score over interval groups.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "erd/corpus.hpp"

namespace erd {

// Category -> word entries. An entry ending in '*' matches any token with
// that prefix.
struct Lexicon {
  std::map<std::string, std::set<std::string>> categories;

  bool matches(const std::string& category, std::string_view token) const;
};

// Line-delimited JSON {category, words:[...]}.
Lexicon parse_lexicon(std::istream& in, const std::string& source = "<stream>");
Lexicon load_lexicon(const std::string& path);
// The bundled open lexicon: "i", "negemo" and "health".
const Lexicon& builtin_lexicon();

// Lowercase runs of ASCII letters.
std::vector<std::string> word_tokens(std::string_view text);

struct CategoryCount {
  std::int64_t matches = 0;
  std::int64_t total_tokens = 0;
  double proportion = 0.0;
};

// Throws erd::Error for an unknown category or when there are no tokens.
CategoryCount category_proportion(std::span<const Post> posts, const Lexicon& lexicon,
                                  const std::string& category);

struct ProportionTest {
  std::int64_t x1 = 0, n1 = 0, x2 = 0, n2 = 0;
  double p1 = 0.0, p2 = 0.0;
  double z = 0.0;
  double p_value = 1.0;  // two-sided
};

double normal_cdf(double z);

// Pooled two-sided z-test. When the pooled proportion is 0 or 1, z = 0 and
// p = 1.
ProportionTest two_proportion_z(std::int64_t x1, std::int64_t n1, std::int64_t x2, std::int64_t n2);

enum class SmoothingVariant {
  kAsPrinted,  // s_i = a s_{i-1} + (1 - a) pr_{i-1}
  kCurrent,    // s_i = a s_{i-1} + (1 - a) pr_i
};

// a = max(0, 0.5 (28 - dt) / 27) with dt in days between group starts.
double smoothing_weight(double days_between);

struct ScorePoint {
  std::int64_t start = 0;
  double probability = 0.0;
  double score = 0.0;
};

// Input: (group start timestamp, predicted probability) with strictly
// increasing timestamps; throws std::invalid_argument otherwise.
std::vector<ScorePoint> smooth_scores(std::span<const std::pair<std::int64_t, double>> probs,
                                      SmoothingVariant variant = SmoothingVariant::kAsPrinted);

}  // namespace erd
