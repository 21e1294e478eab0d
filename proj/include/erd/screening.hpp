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

// Risky post screening: a post's risk is its highest cosine similarity to
// any template of the active set; the most similar templates are kept as
// its diagnostic bases.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "erd/corpus.hpp"
#include "erd/embedding.hpp"
#include "erd/templates.hpp"

namespace erd {

inline constexpr std::size_t kDefaultBases = 3;

struct DiagnosticBasis {
  std::string template_id;
  std::string dimension;
  double similarity = 0.0;
};

struct ScoredPost {
  Post post;
  double risk = 0.0;                    // == bases.front().similarity
  std::vector<DiagnosticBasis> bases;   // descending similarity
  EmbeddingVector embedding;
};

// Text handed to the encoder: title + "\n" + text when a title exists.
std::string embedding_text(const Post& post);

// A template set together with its embeddings, computed once.
class TemplateIndex {
 public:
  TemplateIndex(TemplateSet set, EmbeddingProvider& provider, std::size_t bases = kDefaultBases);

  const TemplateSet& set() const { return set_; }
  const std::vector<EmbeddingVector>& embeddings() const { return embeddings_; }
  std::size_t bases() const { return bases_; }

  // Scores an already-embedded post. Ties between templates keep set order.
  ScoredPost score(const Post& post, EmbeddingVector embedding) const;

 private:
  TemplateSet set_;
  std::vector<EmbeddingVector> embeddings_;
  std::size_t bases_;
};

ScoredPost score_post(const Post& post, const TemplateIndex& index, EmbeddingProvider& provider);

// Scores every post of a history with one batched embedding call.
std::vector<ScoredPost> score_history(const UserHistory& history, const TemplateIndex& index,
                                      EmbeddingProvider& provider);

// At most k posts with the highest risk; among equal risks the later post
// wins. Result is chronological. `scored` must be chronological.
std::vector<ScoredPost> select_top_k(std::span<const ScoredPost> scored, std::size_t k);

// Indices (into `scored`) of the selection above, ascending.
std::vector<std::size_t> top_k_indices(std::span<const ScoredPost> scored, std::size_t k);

std::vector<ScoredPost> select_top_k(const UserHistory& history, std::size_t k,
                                     const TemplateIndex& index, EmbeddingProvider& provider);

}  // namespace erd
