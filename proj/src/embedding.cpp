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

#include "erd/embedding.hpp"

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace erd {
namespace {

using nlohmann::json;

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_token_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

void add_feature(std::vector<double>& acc, std::string_view feature, std::uint64_t seed) {
  const std::uint64_t h = mix64(fnv1a64(feature) ^ seed);
  const std::size_t bucket = h % acc.size();
  acc[bucket] += (h >> 63) ? -1.0 : 1.0;
}

std::uint64_t values_hash(const std::vector<double>& values, std::uint64_t h) {
  for (const double v : values) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= bits & 0xff;
      h *= kFnvPrime;
      bits >>= 8;
    }
  }
  return h;
}

}  // namespace

double EmbeddingVector::norm() const {
  double sum = 0.0;
  for (const double v : values) sum += v * v;
  return std::sqrt(sum);
}

bool EmbeddingVector::is_zero() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("cosine: dimension mismatch (" + std::to_string(a.dim()) +
                                " vs " + std::to_string(b.dim()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double c = dot / std::sqrt(na * nb);
  return std::clamp(c, -1.0, 1.0);
}

void ProviderConfig::validate() const {
  if (kind == ProviderKind::kLocal && dim < 16) {
    throw std::invalid_argument("local embedding dim must be >= 16");
  }
  if (kind == ProviderKind::kHttp && endpoint.empty()) {
    throw std::invalid_argument("http provider requires an endpoint");
  }
  if (max_batch < 1 || max_in_flight < 1) {
    throw std::invalid_argument("max_batch and max_in_flight must be >= 1");
  }
}

std::string normalize_text(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  std::string normalized;
  if (U_SUCCESS(status)) {
    const icu::UnicodeString source = icu::UnicodeString::fromUTF8(
        icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    const icu::UnicodeString out = nfc->normalize(source, status);
    if (U_SUCCESS(status)) out.toUTF8String(normalized);
  }
  if (U_FAILURE(status)) normalized.assign(text);

  std::string collapsed;
  collapsed.reserve(normalized.size());
  bool pending_space = false;
  for (const char c : normalized) {
    if (is_space(c)) {
      pending_space = !collapsed.empty();
      continue;
    }
    if (pending_space) collapsed.push_back(' ');
    pending_space = false;
    collapsed.push_back(c);
  }
  return collapsed;
}

std::vector<std::string> hash_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_token_byte(c)) {
      current.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c + 32) : ch);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

EmbeddingVector local_embed(std::string_view text, int dim, std::uint64_t seed) {
  if (dim < 16) throw std::invalid_argument("local embedding dim must be >= 16");
  EmbeddingVector out;
  out.values.assign(static_cast<std::size_t>(dim), 0.0);
  const auto tokens = hash_tokens(normalize_text(text));
  std::string feature;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    feature = "u:" + tokens[i];
    add_feature(out.values, feature, seed);
    if (i + 1 < tokens.size()) {
      feature = "b:" + tokens[i] + " " + tokens[i + 1];
      add_feature(out.values, feature, seed);
    }
    const std::string padded = "#" + tokens[i] + "#";
    for (std::size_t j = 0; j + 3 <= padded.size(); ++j) {
      feature = "c:" + padded.substr(j, 3);
      add_feature(out.values, feature, seed);
    }
  }
  const double n = out.norm();
  if (n == 0.0) {
    out.degenerate = true;
    return out;
  }
  for (double& v : out.values) v /= n;
  return out;
}

EmbeddingVector EmbeddingProvider::embed(const std::string& text) {
  auto batch = embed_batch(std::span<const std::string>(&text, 1));
  return std::move(batch.front());
}

// --- LocalProvider ---------------------------------------------------------

LocalProvider::LocalProvider(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 16) throw std::invalid_argument("local embedding dim must be >= 16");
}

std::vector<EmbeddingVector> LocalProvider::embed_batch(std::span<const std::string> texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& text : texts) out.push_back(local_embed(text, dim_, seed_));
  return out;
}

std::string LocalProvider::cache_namespace() const {
  return "local|" + std::to_string(dim_) + "|" + hex64(seed_);
}

// --- HttpProvider ----------------------------------------------------------

HttpProvider::HttpProvider(ProviderConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw std::invalid_argument("http provider requires an endpoint");
}

std::string HttpProvider::cache_namespace() const { return "http|" + config_.model_id; }

std::string HttpProvider::health() {
  httplib::Client client(config_.endpoint);
  client.set_connection_timeout(std::chrono::duration<double>(config_.timeout_seconds));
  client.set_read_timeout(std::chrono::duration<double>(config_.timeout_seconds));
  const auto res = client.Get("/health");
  if (!res) {
    throw ProviderUnavailable("GET " + config_.endpoint + "/health failed: " +
                              httplib::to_string(res.error()));
  }
  if (res->status == 503) throw ProviderUnavailable("embedding service loading (503)");
  if (res->status != 200) {
    throw ProviderResponseError("GET /health returned HTTP " + std::to_string(res->status));
  }
  try {
    const json body = json::parse(res->body);
    if (body.at("status").get<std::string>() != "ok") {
      throw ProviderUnavailable("embedding service status: " + body.at("status").get<std::string>());
    }
    return body.at("model").get<std::string>();
  } catch (const json::exception& e) {
    throw ProviderResponseError(std::string("malformed /health response: ") + e.what());
  }
}

std::vector<EmbeddingVector> HttpProvider::post_chunk(std::span<const std::string> texts) {
  httplib::Client client(config_.endpoint);
  client.set_connection_timeout(std::chrono::duration<double>(config_.timeout_seconds));
  client.set_read_timeout(std::chrono::duration<double>(config_.timeout_seconds));
  client.set_write_timeout(std::chrono::duration<double>(config_.timeout_seconds));

  json request = {{"model", config_.model_id}, {"texts", json::array()}};
  for (const auto& t : texts) request["texts"].push_back(t);
  const std::string payload = request.dump();

  for (int attempt = 0;; ++attempt) {
    ++requests_;
    const auto res = client.Post("/embed", payload, "application/json");
    std::string failure;
    if (!res) {
      failure = "POST " + config_.endpoint + "/embed failed: " + httplib::to_string(res.error());
    } else if (res->status == 503) {
      failure = "embedding model unavailable (HTTP 503)";
    } else if (res->status != 200) {
      throw ProviderResponseError("POST /embed returned HTTP " + std::to_string(res->status) +
                                  ": " + res->body.substr(0, 200));
    } else {
      std::vector<EmbeddingVector> out;
      try {
        const json body = json::parse(res->body);
        const int dim = body.at("dim").get<int>();
        const auto& rows = body.at("embeddings");
        if (!rows.is_array() || rows.size() != texts.size()) {
          throw ProviderResponseError("embedding row count does not match request");
        }
        out.reserve(rows.size());
        for (const auto& row : rows) {
          EmbeddingVector v;
          v.values = row.get<std::vector<double>>();
          if (static_cast<int>(v.dim()) != dim || dim <= 0) {
            throw ProviderResponseError("embedding row has wrong dimension");
          }
          for (const double x : v.values) {
            if (!std::isfinite(x)) throw ProviderResponseError("non-finite embedding value");
          }
          out.push_back(std::move(v));
        }
        int expected = 0;
        if (!dim_.compare_exchange_strong(expected, dim) && expected != dim) {
          throw ProviderResponseError("embedding dimension changed between responses");
        }
      } catch (const json::exception& e) {
        throw ProviderResponseError(std::string("malformed /embed response: ") + e.what());
      }
      return out;
    }
    if (attempt >= config_.retries) throw ProviderUnavailable(failure);
    std::this_thread::sleep_for(std::chrono::milliseconds(100 << attempt));
  }
}

std::vector<EmbeddingVector> HttpProvider::embed_batch(std::span<const std::string> texts) {
  for (const auto& t : texts) {
    if (t.empty()) throw std::invalid_argument("embed_batch: empty text");
  }
  const std::size_t chunk = static_cast<std::size_t>(config_.max_batch);
  const std::size_t n_chunks = (texts.size() + chunk - 1) / chunk;
  std::vector<EmbeddingVector> out(texts.size());
  if (n_chunks == 0) return out;

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t c; (c = next++) < n_chunks;) {
      const std::size_t begin = c * chunk;
      const std::size_t len = std::min(chunk, texts.size() - begin);
      try {
        auto rows = post_chunk(texts.subspan(begin, len));
        std::move(rows.begin(), rows.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n_chunks;
      }
    }
  };
  const std::size_t n_threads =
      std::min<std::size_t>(static_cast<std::size_t>(config_.max_in_flight), n_chunks);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

// --- EmbeddingCache --------------------------------------------------------

std::string EmbeddingCache::entry_checksum(const std::string& key, const EmbeddingVector& vector) {
  std::uint64_t h = fnv1a64(key);
  h = fnv1a64(std::to_string(vector.dim()), h);
  return hex64(values_hash(vector.values, h));
}

EmbeddingCache::EmbeddingCache(std::optional<std::filesystem::path> path) : path_(std::move(path)) {
  if (!path_) return;
  if (std::ifstream in(*path_); in) {
    std::string raw;
    while (std::getline(in, raw)) {
      if (raw.empty()) continue;
      try {
        const json record = json::parse(raw);
        const std::string key = record.at("key_hash").get<std::string>();
        EmbeddingVector v;
        v.values = record.at("values").get<std::vector<double>>();
        if (record.at("dim").get<std::size_t>() != v.dim() ||
            record.at("checksum").get<std::string>() != entry_checksum(key, v)) {
          ++corrupt_;
          continue;
        }
        v.degenerate = v.is_zero();
        entries_[key] = std::move(v);
      } catch (const json::exception&) {
        ++corrupt_;
      }
    }
  }
  if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
  log_.open(*path_, std::ios::app);
  if (!log_) throw Error("cannot open embedding cache " + path_->string());
}

std::optional<EmbeddingVector> EmbeddingCache::get(const std::string& key) const {
  std::shared_lock lock(mutex_);
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingCache::put(const std::string& key, const EmbeddingVector& vector) {
  std::unique_lock lock(mutex_);
  if (!entries_.emplace(key, vector).second) return;
  if (log_.is_open()) {
    const json record = {{"key_hash", key},
                         {"dim", vector.dim()},
                         {"values", vector.values},
                         {"checksum", entry_checksum(key, vector)}};
    log_ << record.dump() << '\n';
    log_.flush();
  }
}

std::size_t EmbeddingCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

// --- CachedProvider --------------------------------------------------------

CachedProvider::CachedProvider(std::unique_ptr<EmbeddingProvider> inner,
                               std::shared_ptr<EmbeddingCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

std::string CachedProvider::key_for(const std::string& text) const {
  const std::string content = hex64(fnv1a64(normalize_text(text)));
  return hex64(fnv1a64(inner_->cache_namespace() + "\n" + content));
}

std::vector<EmbeddingVector> CachedProvider::embed_batch(std::span<const std::string> texts) {
  std::vector<EmbeddingVector> out(texts.size());
  std::vector<std::string> miss_texts;
  std::vector<std::size_t> miss_index;
  std::vector<std::string> keys(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty()) throw std::invalid_argument("embed_batch: empty text");
    keys[i] = key_for(texts[i]);
    if (auto hit = cache_->get(keys[i])) {
      out[i] = std::move(*hit);
    } else {
      miss_texts.push_back(texts[i]);
      miss_index.push_back(i);
    }
  }
  if (!miss_texts.empty()) {
    auto fresh = inner_->embed_batch(miss_texts);
    for (std::size_t j = 0; j < fresh.size(); ++j) {
      cache_->put(keys[miss_index[j]], fresh[j]);
      out[miss_index[j]] = std::move(fresh[j]);
    }
  }
  return out;
}

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config) {
  config.validate();
  std::unique_ptr<EmbeddingProvider> inner;
  if (config.kind == ProviderKind::kLocal) {
    inner = std::make_unique<LocalProvider>(config.dim, config.seed);
  } else {
    inner = std::make_unique<HttpProvider>(config);
  }
  return std::make_unique<CachedProvider>(std::move(inner),
                                          std::make_shared<EmbeddingCache>(config.cache_path));
}

}  // namespace erd
