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

#include <atomic>
#include <cmath>
#include <thread>

#include "doctest.h"
#include "erd/embedding.hpp"
#include "httplib.h"
#include "support.hpp"

using namespace erd;
using erd::testing::TempDir;

namespace {

EmbeddingVector vec(std::vector<double> v) {
  EmbeddingVector e;
  e.values = std::move(v);
  return e;
}

// Minimal stand-in for the encoder service. Each text maps to a vector
// derived from its length so answers are checkable.
class FakeServer {
 public:
  int status = 200;
  bool garble = false;
  bool short_rows = false;
  std::atomic<int> embed_calls{0};
  std::atomic<int> texts_seen{0};
  std::string last_model;

  FakeServer() {
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      if (status == 503) {
        res.status = 503;
        res.set_content(R"({"status":"loading"})", "application/json");
        return;
      }
      res.set_content(R"({"status":"ok","model":"fake-mini"})", "application/json");
    });
    server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      ++embed_calls;
      if (status != 200) {
        res.status = status;
        res.set_content(R"({"error":"nope"})", "application/json");
        return;
      }
      if (garble) {
        res.set_content("{\"model\": ", "application/json");
        return;
      }
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (...) {
        res.status = 400;
        return;
      }
      last_model = body.at("model").get<std::string>();
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& t : body.at("texts")) {
        ++texts_seen;
        const double n = static_cast<double>(t.get<std::string>().size());
        rows.push_back({n, 1.0, -n, 0.5});
      }
      if (short_rows && !rows.empty()) rows.erase(rows.end() - 1);
      res.set_content(nlohmann::json{{"model", last_model}, {"dim", 4}, {"embeddings", rows}}.dump(),
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

ProviderConfig http_config(const std::string& endpoint) {
  ProviderConfig c;
  c.kind = ProviderKind::kHttp;
  c.endpoint = endpoint;
  c.model_id = "fake-mini";
  c.retries = 0;
  c.timeout_seconds = 5.0;
  return c;
}

}  // namespace

TEST_CASE("cosine basics") {
  const auto v = vec({1.0, -2.0, 0.5});
  const auto neg = vec({-1.0, 2.0, -0.5});
  const auto zero = vec({0.0, 0.0, 0.0});
  CHECK(cosine(v, v) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine(v, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(cosine(zero, v) == 0.0);
  CHECK(cosine(zero, zero) == 0.0);
  CHECK_THROWS_AS(cosine(v, vec({1.0, 2.0})), std::invalid_argument);
}

TEST_CASE("cosine stays bounded on random input") {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> a(8), b(8);
    for (auto& x : a) x = rng.normal() * std::pow(10.0, rng.uniform(-5, 5));
    for (auto& x : b) x = rng.bernoulli(0.3) ? a[&x - b.data()] * 3.0 : rng.normal();
    const double c = cosine(vec(a), vec(b));
    CHECK(std::abs(c) <= 1.0 + 1e-12);
  }
}

TEST_CASE("local embedding matches the reference implementation") {
  const auto ref = erd::testing::read_json(erd::testing::test_data("embed_values.json"));
  const auto a = local_embed("I feel sad.", 256);
  const auto b = local_embed("I always cry.", 256);
  CHECK(std::abs(cosine(a, b) - ref["cosine_sad_cry"].get<double>()) < 1e-12);
  const auto expect = ref["sad_256"].get<std::vector<double>>();
  REQUIRE(a.dim() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(a.values[i] == doctest::Approx(expect[i]).epsilon(1e-14));

  // decomposed accent, dotless i and runs of spaces
  const auto u = local_embed("Cafe\u0301  na\u0131ve   d\u00e9j\u00e0 vu", 64);
  const auto expect_u = ref["unicode_64"].get<std::vector<double>>();
  for (std::size_t i = 0; i < expect_u.size(); ++i) CHECK(u.values[i] == doctest::Approx(expect_u[i]).epsilon(1e-14));
}

TEST_CASE("local embedding is deterministic and unit length") {
  const auto a = local_embed("I feel sad.", 256);
  const auto b = local_embed("I feel sad.", 256);
  CHECK(a.values == b.values);
  CHECK(cosine(a, b) == 1.0);
  for (const int dim : {16, 17, 64, 300, 1024}) {
    CHECK(std::abs(local_embed("I feel sad.", dim).norm() - 1.0) < 1e-9);
  }
  CHECK(local_embed("I feel sad.", 64, 1).values != local_embed("I feel sad.", 64, 2).values);
  CHECK_THROWS(local_embed("x", 15));
}

TEST_CASE("no tokens gives the degenerate zero vector") {
  const auto e = local_embed("!!! ...", 32);
  CHECK(e.degenerate);
  CHECK(e.is_zero());
  CHECK(e.dim() == 32);
  CHECK_FALSE(local_embed("ok", 32).degenerate);
}

TEST_CASE("normalization") {
  CHECK(normalize_text("  a \t b\n\nc  ") == "a b c");
  CHECK(normalize_text("Cafe\u0301") == "Caf\u00e9");
  CHECK(hash_tokens("Don't STOP-me now!") == std::vector<std::string>{"don", "t", "stop", "me", "now"});
  CHECK(local_embed("I  feel\tsad.", 64).values == local_embed("I feel sad.", 64).values);
}

TEST_CASE("local provider shapes") {
  auto provider = make_provider(ProviderConfig{});
  const std::vector<std::string> texts = {"one", "two words", "three little words"};
  const auto out = provider->embed_batch(texts);
  REQUIRE(out.size() == 3);
  for (const auto& v : out) CHECK(v.dim() == 256);
  CHECK(out[1].values == local_embed("two words", 256).values);
  ProviderConfig bad;
  bad.dim = 8;
  CHECK_THROWS(make_provider(bad));
}

TEST_CASE("cache round trip and corruption") {
  TempDir dir("cache");
  const auto path = dir / "cache.jsonl";
  const auto v = vec({0.25, -1.0, 3.5e-7, 1.0 / 3.0});
  {
    EmbeddingCache cache(path);
    CHECK(!cache.get("k1"));
    cache.put("k1", v);
    cache.put("k2", vec({1.0, 2.0, 3.0, 4.0}));
    CHECK(cache.get("k1")->values == v.values);
  }
  {
    EmbeddingCache cache(path);
    CHECK(cache.size() == 2);
    CHECK(cache.get("k1")->values == v.values);
  }
  // flip a digit in the first entry and append junk
  std::string text = erd::testing::slurp(path);
  const auto pos = text.find("0.25");
  REQUIRE(pos != std::string::npos);
  text[pos + 3] = '6';
  text += "{\"key_hash\": trailing garbage\n";
  erd::testing::write_file(path, text);
  EmbeddingCache cache(path);
  CHECK(!cache.get("k1"));
  CHECK(cache.get("k2"));
  CHECK(cache.corrupt_entries() == 2);
}

TEST_CASE("cached provider survives restarts") {
  TempDir dir("cache2");
  ProviderConfig c;
  c.dim = 32;
  c.cache_path = dir / "emb.jsonl";
  const std::vector<std::string> texts = {"I feel sad.", "I always cry."};
  const auto first = make_provider(c)->embed_batch(texts);
  const auto second = make_provider(c)->embed_batch(texts);
  CHECK(first[0].values == second[0].values);
  CHECK(first[1].values == second[1].values);
}

TEST_CASE("http provider speaks the embed protocol") {
  FakeServer server;
  HttpProvider provider(http_config(server.endpoint()));
  CHECK(provider.health() == "fake-mini");
  const std::vector<std::string> texts = {"a", "bbb", "cc"};
  const auto out = provider.embed_batch(texts);
  REQUIRE(out.size() == 3);
  CHECK(out[1].values == std::vector<double>{3.0, 1.0, -3.0, 0.5});
  CHECK(out[2].values[0] == 2.0);
  CHECK(server.last_model == "fake-mini");
  CHECK(provider.request_count() == 1);
}

TEST_CASE("http provider chunks big batches in order") {
  FakeServer server;
  auto cfg = http_config(server.endpoint());
  cfg.max_batch = 3;
  cfg.max_in_flight = 3;
  HttpProvider provider(cfg);
  std::vector<std::string> texts;
  for (int i = 1; i <= 20; ++i) texts.push_back(std::string(static_cast<std::size_t>(i), 'x'));
  const auto out = provider.embed_batch(texts);
  REQUIRE(out.size() == 20);
  for (int i = 0; i < 20; ++i) CHECK(out[static_cast<std::size_t>(i)].values[0] == i + 1);
  CHECK(server.embed_calls == 7);
}

TEST_CASE("warm cache makes no remote requests") {
  FakeServer server;
  auto inner = std::make_unique<HttpProvider>(http_config(server.endpoint()));
  HttpProvider* http = inner.get();
  CachedProvider cached(std::move(inner), std::make_shared<EmbeddingCache>());
  const std::vector<std::string> texts = {"alpha", "beta", "alpha"};
  cached.embed_batch(texts);
  const auto before = http->request_count();
  CHECK(before >= 1);
  const auto again = cached.embed_batch(texts);
  CHECK(http->request_count() == before);
  CHECK(again[0].values == again[2].values);
  // whitespace variants share a key
  cached.embed_batch(std::vector<std::string>{"  alpha "});
  CHECK(http->request_count() == before);
}

TEST_CASE("http errors are classified") {
  FakeServer server;
  SUBCASE("503 is retriable") {
    server.status = 503;
    auto cfg = http_config(server.endpoint());
    cfg.retries = 1;
    HttpProvider provider(cfg);
    CHECK_THROWS_AS(provider.embed_batch(std::vector<std::string>{"x"}), ProviderUnavailable);
    CHECK(provider.request_count() == 2);
    CHECK_THROWS_AS(provider.health(), ProviderUnavailable);
  }
  SUBCASE("400 is a response error") {
    server.status = 400;
    HttpProvider provider(http_config(server.endpoint()));
    CHECK_THROWS_AS(provider.embed_batch(std::vector<std::string>{"x"}), ProviderResponseError);
  }
  SUBCASE("garbled body") {
    server.garble = true;
    HttpProvider provider(http_config(server.endpoint()));
    CHECK_THROWS_AS(provider.embed_batch(std::vector<std::string>{"x"}), ProviderResponseError);
  }
  SUBCASE("row count mismatch") {
    server.short_rows = true;
    HttpProvider provider(http_config(server.endpoint()));
    CHECK_THROWS_AS(provider.embed_batch(std::vector<std::string>{"x", "y"}), ProviderResponseError);
  }
}

TEST_CASE("unreachable service is retriable") {
  std::string endpoint;
  {
    FakeServer server;
    endpoint = server.endpoint();
  }
  auto cfg = http_config(endpoint);
  cfg.timeout_seconds = 1.0;
  HttpProvider provider(cfg);
  CHECK_THROWS_AS(provider.embed_batch(std::vector<std::string>{"x"}), ProviderUnavailable);
  CHECK_THROWS_AS(provider.health(), ProviderUnavailable);
}

TEST_CASE("empty texts are refused") {
  LocalProvider local(32);
  auto provider = make_provider(ProviderConfig{});
  CHECK_THROWS(provider->embed_batch(std::vector<std::string>{"ok", ""}));
}

TEST_CASE("concurrent callers agree") {
  auto provider = make_provider(ProviderConfig{});
  std::vector<std::vector<EmbeddingVector>> results(4);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < 4; ++t) {
      pool.emplace_back([&, t] {
        std::vector<std::string> texts;
        for (int i = 0; i < 50; ++i) texts.push_back("text number " + std::to_string(i));
        results[t] = provider->embed_batch(texts);
      });
    }
  }
  for (std::size_t t = 1; t < 4; ++t) {
    for (std::size_t i = 0; i < 50; ++i) CHECK(results[t][i].values == results[0][i].values);
  }
}
