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

// Helpers shared by the unit tests.

#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "erd/screening.hpp"
#include "json.hpp"

namespace erd::testing {

inline std::filesystem::path test_data(const std::string& name) {
  return std::filesystem::path(ERD_TEST_DATA) / name;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  return nlohmann::json::parse(in);
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  out << contents;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("erd-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// A post with a fixed risk and no embedding, for queue tests.
inline ScoredPost risky(int index, double risk, const std::string& user = "u") {
  ScoredPost s;
  s.post.user_id = user;
  s.post.post_id = "p" + std::to_string(1000 + index);
  s.post.timestamp = 1000 + index;
  s.post.text = "post " + std::to_string(index);
  s.risk = risk;
  s.bases.push_back({"t", "dim", risk});
  return s;
}

inline std::vector<ScoredPost> risky_stream(const std::vector<double>& risks) {
  std::vector<ScoredPost> out;
  for (std::size_t i = 0; i < risks.size(); ++i) out.push_back(risky(static_cast<int>(i), risks[i]));
  return out;
}

}  // namespace erd::testing
