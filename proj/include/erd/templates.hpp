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

// Depression templates derived from clinical scales, and named presets.

#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace erd {

enum class Scale { kDirect, kBDI2, kHDRS, kCESD, kPHQ9 };

std::string_view to_string(Scale scale);
std::optional<Scale> parse_scale(std::string_view name);

struct Template {
  std::string id;
  Scale scale = Scale::kDirect;
  std::string dimension;
  std::string text;
};

struct TemplateSet {
  std::string name;
  std::vector<Template> templates;
};

// Parses line-delimited JSON {scale, id, dimension, text}; rejects empty
// texts and duplicate (scale, id).
std::vector<Template> parse_bank(std::istream& in, const std::string& source = "<stream>");
std::vector<Template> load_bank(const std::string& path);

// The compiled-in bank. Verified against its checksum on first use; a
// mismatch throws erd::Error.
const std::vector<Template>& builtin_bank();

// Preset names: depress, bdi2, hdrs, cesd, phq9, full, or a '+'-joined
// combination such as "hdrs+bdi2+phq9". Bare scale names select only that
// scale; "full" and every combination start with the Direct templates.
TemplateSet preset(std::string_view name, const std::vector<Template>& bank);
TemplateSet preset(std::string_view name);

}  // namespace erd
