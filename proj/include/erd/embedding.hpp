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

// Sentence embeddings behind a provider interface.
//
// Two providers exist: a deterministic feature-hashing embedder that runs
// offline, and an HTTP client for an external encoder service speaking
//
//   POST /embed   {"model": str, "texts": [str]}
//              -> {"model": str, "dim": int, "embeddings": [[num]]}
//   GET  /health  -> {"status": "ok", "model": str}
//
// Either can be wrapped in a CachedProvider backed by an append-only log.

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "erd/util.hpp"

namespace erd {

struct EmbeddingVector {
  std::vector<double> values;
  // Set by the local embedder when the text produced no features.
  bool degenerate = false;

  std::size_t dim() const { return values.size(); }
  double norm() const;
  bool is_zero() const;
};

// Cosine similarity. Returns 0 when either side is the zero vector.
// Throws std::invalid_argument on dimension mismatch.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

// Transport failure, timeout or HTTP 503. Safe to retry.
class ProviderUnavailable : public Error {
 public:
  using Error::Error;
};

// The service answered, but not with a usable payload (HTTP 400, bad JSON,
// wrong row count or dimension).
class ProviderResponseError : public Error {
 public:
  using Error::Error;
};

enum class ProviderKind { kLocal, kHttp };

inline constexpr std::uint64_t kDefaultEmbeddingSeed = 0x5eed5eedULL;

struct ProviderConfig {
  ProviderKind kind = ProviderKind::kLocal;
  int dim = 256;  // local only, >= 16
  std::uint64_t seed = kDefaultEmbeddingSeed;
  std::string endpoint;  // http only, e.g. "http://127.0.0.1:8080"
  std::string model_id = "paraphrase-MiniLM-L6-v2";
  std::optional<std::filesystem::path> cache_path;
  int max_batch = 64;
  int max_in_flight = 4;
  double timeout_seconds = 30.0;
  int retries = 2;

  void validate() const;
};

// NFC normalization, trimming, and collapsing of internal whitespace runs
// to a single space.
std::string normalize_text(std::string_view text);

// Lowercased (ASCII) tokens split on non-alphanumeric bytes. Bytes >= 0x80
// are kept inside tokens so UTF-8 words survive intact.
std::vector<std::string> hash_tokens(std::string_view text);

// Signed feature hashing over word unigrams ("u:" + w), word bigrams
// ("b:" + w1 + " " + w2) and character trigrams of "#" + w + "#"
// ("c:" + tri). Each feature f contributes sign(h) to bucket h % dim with
// h = mix64(fnv1a64(f) ^ seed) and sign negative when the top bit of h is
// set. The accumulated vector is L2-normalized; no features gives the zero
// vector flagged degenerate. The text is normalized first.
EmbeddingVector local_embed(std::string_view text, int dim,
                            std::uint64_t seed = kDefaultEmbeddingSeed);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  // One vector per text, in order. Texts must be non-empty.
  virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) = 0;

  // Identifies the embedding space for cache keys, e.g. "local|256|<seed>".
  virtual std::string cache_namespace() const = 0;

  EmbeddingVector embed(const std::string& text);
};

class LocalProvider : public EmbeddingProvider {
 public:
  LocalProvider(int dim, std::uint64_t seed = kDefaultEmbeddingSeed);

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override;
  std::string cache_namespace() const override;

  int dim() const { return dim_; }

 private:
  int dim_;
  std::uint64_t seed_;
};

class HttpProvider : public EmbeddingProvider {
 public:
  explicit HttpProvider(ProviderConfig config);

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override;
  std::string cache_namespace() const override;

  // Fetches GET /health. Throws ProviderUnavailable when the service is
  // down and ProviderResponseError on an unexpected payload.
  std::string health();

  // Number of POST /embed requests attempted so far.
  std::uint64_t request_count() const { return requests_.load(); }

 private:
  std::vector<EmbeddingVector> post_chunk(std::span<const std::string> texts);

  ProviderConfig config_;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<int> dim_{0};
};

// Append-only on-disk cache. Each line is
//   {"key_hash": hex, "dim": n, "values": [...], "checksum": hex}
// Lines that fail to parse or whose checksum does not match are ignored
// (treated as misses). Readers share a lock; writers are serialized.
class EmbeddingCache {
 public:
  // In-memory only when path is empty.
  explicit EmbeddingCache(std::optional<std::filesystem::path> path = std::nullopt);

  std::optional<EmbeddingVector> get(const std::string& key) const;
  void put(const std::string& key, const EmbeddingVector& vector);

  std::size_t size() const;
  std::size_t corrupt_entries() const { return corrupt_; }

  static std::string entry_checksum(const std::string& key, const EmbeddingVector& vector);

 private:
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, EmbeddingVector> entries_;
  std::optional<std::filesystem::path> path_;
  std::ofstream log_;
  std::size_t corrupt_ = 0;
};

// Consults the cache before delegating misses to the wrapped provider.
class CachedProvider : public EmbeddingProvider {
 public:
  CachedProvider(std::unique_ptr<EmbeddingProvider> inner, std::shared_ptr<EmbeddingCache> cache);

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override;
  std::string cache_namespace() const override { return inner_->cache_namespace(); }

  EmbeddingProvider& inner() { return *inner_; }
  const EmbeddingCache& cache() const { return *cache_; }

  // key_hash = fnv1a64(namespace + '\n' + hex64(fnv1a64(normalized text)))
  std::string key_for(const std::string& text) const;

 private:
  std::unique_ptr<EmbeddingProvider> inner_;
  std::shared_ptr<EmbeddingCache> cache_;
};

// Builds the configured provider, wrapped in a cache (persistent when
// cache_path is set).
std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config);

}  // namespace erd
