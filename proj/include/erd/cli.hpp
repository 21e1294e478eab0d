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

// The `erd` command line: templates, synth, screen, train, stream,
// evaluate, sweep, lexical, curve and gradcheck.

#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "erd/util.hpp"

namespace erd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Environment variable consulted when --endpoint is not given.
inline constexpr const char* kEndpointEnv = "ERD_EMBED_ENDPOINT";

std::string_view version();

// A request that parsed but makes no sense (bad preset name, K larger than
// the model supports, ...). Reported with exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

// `args` excludes the program name. Tables meant for people (templates
// list, gradcheck) go to `out`; usage text and errors go to `err`; logs go
// to stderr.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace erd::cli
