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

#include "erd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "erd/bundled_data.hpp"
#include "erd/util.hpp"
#include "json.hpp"

namespace erd {

bool Lexicon::matches(const std::string& category, std::string_view token) const {
  const auto it = categories.find(category);
  if (it == categories.end()) return false;
  const auto& words = it->second;
  if (words.count(std::string(token))) return true;
  for (std::size_t len = 1; len <= token.size(); ++len) {
    if (words.count(std::string(token.substr(0, len)) + "*")) return true;
  }
  return false;
}

Lexicon parse_lexicon(std::istream& in, const std::string& source) {
  Lexicon lex;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (raw.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      const auto record = nlohmann::json::parse(raw);
      const auto category = record.at("category").get<std::string>();
      if (category.empty()) throw ParseError(source, line, "empty category name");
      auto& words = lex.categories[category];
      for (const auto& w : record.at("words")) {
        std::string word = w.get<std::string>();
        if (word.empty() || word == "*") throw ParseError(source, line, "empty lexicon entry");
        std::transform(word.begin(), word.end(), word.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        words.insert(std::move(word));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, line, e.what());
    }
  }
  if (lex.categories.empty()) throw ParseError(source, 0, "lexicon has no categories");
  return lex;
}

Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_lexicon(in, path);
}

const Lexicon& builtin_lexicon() {
  static const Lexicon lex = [] {
    std::istringstream in{std::string(bundled::kLexiconJsonl)};
    return parse_lexicon(in, "<builtin lexicon>");
  }();
  return lex;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalpha(c) && c < 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

CategoryCount category_proportion(std::span<const Post> posts, const Lexicon& lexicon,
                                  const std::string& category) {
  if (!lexicon.categories.count(category)) {
    throw Error("unknown lexicon category '" + category + "'");
  }
  CategoryCount c;
  for (const auto& post : posts) {
    for (const auto& tok : word_tokens(post.text)) {
      ++c.total_tokens;
      if (lexicon.matches(category, tok)) ++c.matches;
    }
  }
  if (c.total_tokens == 0) throw Error("category_proportion: posts contain no word tokens");
  c.proportion = static_cast<double>(c.matches) / static_cast<double>(c.total_tokens);
  return c;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

ProportionTest two_proportion_z(std::int64_t x1, std::int64_t n1, std::int64_t x2, std::int64_t n2) {
  if (n1 < 1 || n2 < 1) throw std::invalid_argument("two_proportion_z: sample sizes must be >= 1");
  if (x1 < 0 || x1 > n1 || x2 < 0 || x2 > n2) {
    throw std::invalid_argument("two_proportion_z: counts must satisfy 0 <= x <= n");
  }
  ProportionTest t{x1, n1, x2, n2};
  t.p1 = static_cast<double>(x1) / static_cast<double>(n1);
  t.p2 = static_cast<double>(x2) / static_cast<double>(n2);
  const double pooled = static_cast<double>(x1 + x2) / static_cast<double>(n1 + n2);
  if (pooled <= 0.0 || pooled >= 1.0) return t;
  const double se = std::sqrt(pooled * (1.0 - pooled) *
                              (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
  t.z = (t.p1 - t.p2) / se;
  // 2 (1 - Phi(|z|)) without cancellation.
  t.p_value = std::min(1.0, std::erfc(std::abs(t.z) * M_SQRT1_2));
  return t;
}

double smoothing_weight(double days_between) {
  // Gaps under a day count as one day so the weight never exceeds 1/2.
  const double days = std::max(1.0, days_between);
  return std::max(0.0, 0.5 * (28.0 - days) / (28.0 - 1.0));
}

std::vector<ScorePoint> smooth_scores(std::span<const std::pair<std::int64_t, double>> probs,
                                      SmoothingVariant variant) {
  std::vector<ScorePoint> out;
  out.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto [start, pr] = probs[i];
    if (i == 0) {
      out.push_back({start, pr, pr});
      continue;
    }
    if (start <= probs[i - 1].first) {
      throw std::invalid_argument("smooth_scores: group timestamps must be strictly increasing");
    }
    const double days = static_cast<double>(start - probs[i - 1].first) /
                        static_cast<double>(kSecondsPerDay);
    const double a = smoothing_weight(days);
    const double carried = variant == SmoothingVariant::kAsPrinted ? probs[i - 1].second : pr;
    out.push_back({start, pr, a * out.back().score + (1.0 - a) * carried});
  }
  return out;
}

}  // namespace erd
