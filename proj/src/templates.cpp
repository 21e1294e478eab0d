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

#include "erd/templates.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "erd/bundled_data.hpp"
#include "erd/util.hpp"
#include "json.hpp"

namespace erd {
namespace {

std::vector<Template> load_builtin() {
  const std::string actual = hex64(fnv1a64(bundled::kTemplatesJsonl));
  if (actual != bundled::kTemplatesChecksum) {
    throw Error("bundled template bank failed integrity check (fnv1a64 " + actual +
                ", expected " + std::string(bundled::kTemplatesChecksum) + ")");
  }
  std::istringstream in{std::string(bundled::kTemplatesJsonl)};
  return parse_bank(in, "<builtin templates>");
}

void append_scale(TemplateSet& set, const std::vector<Template>& bank, Scale scale) {
  for (const auto& t : bank) {
    if (t.scale == scale) set.templates.push_back(t);
  }
}

}  // namespace

std::string_view to_string(Scale scale) {
  switch (scale) {
    case Scale::kDirect:
      return "Direct";
    case Scale::kBDI2:
      return "BDI2";
    case Scale::kHDRS:
      return "HDRS";
    case Scale::kCESD:
      return "CESD";
    case Scale::kPHQ9:
      return "PHQ9";
  }
  return "Direct";
}

std::optional<Scale> parse_scale(std::string_view name) {
  for (const Scale s : {Scale::kDirect, Scale::kBDI2, Scale::kHDRS, Scale::kCESD, Scale::kPHQ9}) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

std::vector<Template> parse_bank(std::istream& in, const std::string& source) {
  std::vector<Template> bank;
  std::set<std::pair<Scale, std::string>> seen;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (raw.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(source, line, e.what());
    }
    Template t;
    try {
      const auto scale = parse_scale(record.at("scale").get<std::string>());
      if (!scale) throw ParseError(source, line, "unknown scale");
      t.scale = *scale;
      t.id = record.at("id").get<std::string>();
      t.dimension = record.value("dimension", std::string());
      t.text = record.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, line, e.what());
    }
    if (t.id.empty()) throw ParseError(source, line, "empty template id");
    if (t.text.find_first_not_of(" \t") == std::string::npos) {
      throw ParseError(source, line, "empty template text");
    }
    if (!seen.emplace(t.scale, t.id).second) {
      throw ParseError(source, line, "duplicate template " + std::string(to_string(t.scale)) +
                                         "/" + t.id);
    }
    bank.push_back(std::move(t));
  }
  return bank;
}

std::vector<Template> load_bank(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_bank(in, path);
}

const std::vector<Template>& builtin_bank() {
  static const std::vector<Template> bank = load_builtin();
  return bank;
}

TemplateSet preset(std::string_view name, const std::vector<Template>& bank) {
  std::vector<std::string_view> parts;
  for (std::size_t start = 0;;) {
    const std::size_t plus = name.find('+', start);
    parts.push_back(name.substr(start, plus - start));
    if (plus == std::string_view::npos) break;
    start = plus + 1;
  }

  std::vector<Scale> scales;
  auto add = [&scales](Scale s) {
    if (std::find(scales.begin(), scales.end(), s) == scales.end()) scales.push_back(s);
  };
  const bool combination = parts.size() > 1;
  if (combination) add(Scale::kDirect);
  for (const auto part : parts) {
    if (part == "depress") {
      add(Scale::kDirect);
    } else if (part == "full") {
      add(Scale::kDirect);
      add(Scale::kBDI2);
    } else if (part == "bdi2") {
      add(Scale::kBDI2);
    } else if (part == "hdrs") {
      add(Scale::kHDRS);
    } else if (part == "cesd") {
      add(Scale::kCESD);
    } else if (part == "phq9") {
      add(Scale::kPHQ9);
    } else {
      throw Error("unknown template preset '" + std::string(part) +
                  "' (expected depress, bdi2, hdrs, cesd, phq9, full or a '+' combination)");
    }
  }

  TemplateSet set{std::string(name), {}};
  for (const Scale s : scales) append_scale(set, bank, s);
  if (set.templates.empty()) {
    throw Error("template preset '" + std::string(name) + "' selects no templates");
  }
  return set;
}

TemplateSet preset(std::string_view name) { return preset(name, builtin_bank()); }

}  // namespace erd
