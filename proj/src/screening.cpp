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

#include "erd/screening.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace erd {

std::string embedding_text(const Post& post) {
  if (post.title) return *post.title + "\n" + post.text;
  return post.text;
}

TemplateIndex::TemplateIndex(TemplateSet set, EmbeddingProvider& provider, std::size_t bases)
    : set_(std::move(set)), bases_(bases) {
  if (set_.templates.empty()) throw std::invalid_argument("template set is empty");
  if (bases_ == 0) throw std::invalid_argument("number of diagnostic bases must be >= 1");
  std::vector<std::string> texts;
  texts.reserve(set_.templates.size());
  for (const auto& t : set_.templates) texts.push_back(t.text);
  embeddings_ = provider.embed_batch(texts);
}

ScoredPost TemplateIndex::score(const Post& post, EmbeddingVector embedding) const {
  const std::size_t n = set_.templates.size();
  std::vector<double> sims(n);
  for (std::size_t i = 0; i < n; ++i) sims[i] = cosine(embedding, embeddings_[i]);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t m = std::min(bases_, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                    [&sims](std::size_t a, std::size_t b) {
                      if (sims[a] != sims[b]) return sims[a] > sims[b];
                      return a < b;
                    });

  ScoredPost out;
  out.post = post;
  out.bases.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto& t = set_.templates[order[j]];
    out.bases.push_back({t.id, t.dimension, sims[order[j]]});
  }
  out.risk = out.bases.front().similarity;
  out.embedding = std::move(embedding);
  return out;
}

ScoredPost score_post(const Post& post, const TemplateIndex& index, EmbeddingProvider& provider) {
  return index.score(post, provider.embed(embedding_text(post)));
}

std::vector<ScoredPost> score_history(const UserHistory& history, const TemplateIndex& index,
                                      EmbeddingProvider& provider) {
  std::vector<std::string> texts;
  texts.reserve(history.posts.size());
  for (const auto& p : history.posts) texts.push_back(embedding_text(p));
  auto vectors = provider.embed_batch(texts);
  std::vector<ScoredPost> out;
  out.reserve(history.posts.size());
  for (std::size_t i = 0; i < history.posts.size(); ++i) {
    out.push_back(index.score(history.posts[i], std::move(vectors[i])));
  }
  return out;
}

std::vector<std::size_t> top_k_indices(std::span<const ScoredPost> scored, std::size_t k) {
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(k, scored.size());
  // Higher risk first; for equal risk the later post first.
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&scored](std::size_t a, std::size_t b) {
                      if (scored[a].risk != scored[b].risk) return scored[a].risk > scored[b].risk;
                      return a > b;
                    });
  order.resize(take);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<ScoredPost> select_top_k(std::span<const ScoredPost> scored, std::size_t k) {
  std::vector<ScoredPost> out;
  for (const std::size_t i : top_k_indices(scored, k)) out.push_back(scored[i]);
  return out;
}

std::vector<ScoredPost> select_top_k(const UserHistory& history, std::size_t k,
                                     const TemplateIndex& index, EmbeddingProvider& provider) {
  const auto scored = score_history(history, index, provider);
  return select_top_k(scored, k);
}

}  // namespace erd
