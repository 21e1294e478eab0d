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

#include <cmath>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "erd/han.hpp"
#include "support.hpp"

using namespace erd;
using namespace erd::han;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.embed_dim = 4;
  c.num_layers = 1;
  c.num_heads = 2;
  c.model_dim = 4;
  c.ff_dim = 6;
  c.max_posts = 3;
  return c;
}

// Parameters from a closed-form sequence over the flattened tensors; the
// Python reference fills its copy the same way.
ModelParams fixture_params() {
  ModelParams p = ModelParams::init(tiny_config());
  std::size_t g = 0;
  for (auto& t : tensors(p)) {
    for (std::size_t i = 0; i < t.size; ++i, ++g) t.data[i] = 0.3 * std::sin(0.7 * static_cast<double>(g) + 0.3);
  }
  return p;
}

UserExample fixture_example(const ModelConfig& c) {
  std::vector<std::vector<double>> rows(2, std::vector<double>(4));
  for (int r = 0; r < 2; ++r) {
    for (int col = 0; col < 4; ++col) rows[r][col] = std::cos(1.3 * r + 0.5 * col);
  }
  return make_example(rows, c);
}

UserExample random_example(const ModelConfig& c, Rng& rng, std::size_t active, double label = 0.0) {
  std::vector<std::vector<double>> rows(active, std::vector<double>(static_cast<std::size_t>(c.embed_dim)));
  for (auto& r : rows) {
    for (auto& x : r) x = rng.normal();
  }
  return make_example(rows, c, label);
}

ModelConfig small(int layers) {
  ModelConfig c;
  c.embed_dim = 6;
  c.num_layers = layers;
  c.num_heads = 2;
  c.model_dim = 8;
  c.ff_dim = 10;
  c.max_posts = 4;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("forward pass matches the scalar reference") {
  const ModelParams p = fixture_params();
  const auto pred = predict(fixture_example(p.config), p);
  CHECK(std::abs(pred.probability - 0.38526564716883294) < 1e-10);
  CHECK(std::abs(pred.attention(0) - 0.47296084682370787) < 1e-10);
  CHECK(std::abs(pred.attention(1) - 0.5270391531762922) < 1e-10);
  CHECK(pred.attention(2) == 0.0);
}

TEST_CASE("encoder output shape and masking") {
  const auto c = small(2);
  const auto p = ModelParams::init(c);
  Rng rng(1);
  const auto ex = random_example(c, rng, 2);
  const Matrix reps = user_encode(ex, p);
  CHECK(reps.rows() == c.max_posts);
  CHECK(reps.cols() == c.model_dim);
  CHECK(reps.row(2).isZero(0.0));
  CHECK(reps.row(3).isZero(0.0));
  CHECK(!reps.row(0).isZero(0.0));
  const auto batch = user_encode(UserBatch{ex, random_example(c, rng, 4)}, p);
  CHECK(batch.size() == 2);
  CHECK(batch[0] == reps);
}

TEST_CASE("padding does not leak into real positions") {
  const auto c = small(2);
  const auto p = ModelParams::init(c);
  Rng rng(2);
  auto ex = random_example(c, rng, 2);
  const Matrix before = user_encode(ex, p);
  ex.posts.row(3).setConstant(50.0);
  CHECK(user_encode(ex, p) == before);
}

TEST_CASE("zero layers is projection plus positions") {
  const auto c = small(0);
  const auto p = ModelParams::init(c);
  Rng rng(3);
  const auto ex = random_example(c, rng, 3);
  const Matrix reps = user_encode(ex, p);
  for (int i = 0; i < 3; ++i) {
    const Vector expect = p.in_proj_w * ex.posts.row(i).transpose() + p.in_proj_b + p.positions.row(i).transpose();
    CHECK((reps.row(i).transpose() - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("swapping two posts changes the output") {
  const auto c = small(1);
  const auto p = ModelParams::init(c);
  Rng rng(4);
  auto ex = random_example(c, rng, 3);
  const Matrix a = user_encode(ex, p);
  ex.posts.row(0).swap(ex.posts.row(2));
  const Matrix b = user_encode(ex, p);
  CHECK((a - b).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("attention pooling properties") {
  const auto c = small(1);
  auto p = ModelParams::init(c);
  Rng rng(6);
  Matrix reps = Matrix::Zero(c.max_posts, c.model_dim);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < c.model_dim; ++j) reps(i, j) = rng.normal();
  }
  const std::vector<std::uint8_t> mask = {1, 1, 1, 0};
  const auto r = attention_pool(reps, mask, p);
  CHECK(std::abs(r.weights.sum() - 1.0) < 1e-6);
  CHECK(r.weights(3) == 0.0);
  Vector u = Vector::Zero(c.model_dim);
  for (int i = 0; i < 3; ++i) u += r.weights(i) * reps.row(i).transpose();
  CHECK((u - r.user).cwiseAbs().maxCoeff() < 1e-12);

  const std::vector<std::uint8_t> one = {0, 1, 0, 0};
  const auto single = attention_pool(reps, one, p);
  CHECK(single.weights(1) == 1.0);
  CHECK((single.user - reps.row(1).transpose()).cwiseAbs().maxCoeff() == 0.0);

  reps.row(2) = reps.row(0);
  const std::vector<std::uint8_t> two = {1, 0, 1, 0};
  const auto sym = attention_pool(reps, two, p);
  CHECK(std::abs(sym.weights(0) - 0.5) < 1e-12);
  CHECK(std::abs(sym.weights(2) - 0.5) < 1e-12);

  const std::vector<std::uint8_t> none = {0, 0, 0, 0};
  CHECK_THROWS(attention_pool(reps, none, p));
}

TEST_CASE("zero classifier weights give one half") {
  const auto c = small(2);
  auto p = ModelParams::init(c);
  p.cls_w.setZero();
  p.cls_b = 0.0;
  Rng rng(7);
  for (int i = 0; i < 5; ++i) CHECK(predict(random_example(c, rng, 1 + i % 4), p).probability == 0.5);
}

TEST_CASE("probabilities stay inside the open interval") {
  const auto c = small(2);
  auto p = ModelParams::init(c);
  p.cls_w *= 30.0;
  Rng rng(8);
  UserBatch batch;
  for (int i = 0; i < 20; ++i) batch.push_back(random_example(c, rng, 1 + i % 4));
  for (const double prob : predict_prob(batch, p)) {
    CHECK(prob > 0.0);
    CHECK(prob < 1.0);
  }
}

TEST_CASE("bad inputs are rejected") {
  auto c = small(1);
  c.num_heads = 3;
  CHECK_THROWS(c.validate());
  c = small(1);
  c.max_posts = 0;
  CHECK_THROWS(c.validate());
  c = small(1);
  const auto p = ModelParams::init(c);
  Rng rng(9);
  auto ex = random_example(c, rng, 2);
  ex.posts(0, 0) = std::nan("");
  CHECK_THROWS_AS(user_encode(ex, p), std::invalid_argument);
  auto empty = random_example(c, rng, 1);
  empty.mask.assign(empty.mask.size(), 0);
  CHECK_THROWS_AS(user_encode(empty, p), std::invalid_argument);
  ex = random_example(c, rng, 2);
  ex.posts = Matrix::Zero(c.max_posts, c.embed_dim + 1);
  CHECK_THROWS_AS(user_encode(ex, p), std::invalid_argument);
  std::vector<std::vector<double>> too_many(5, std::vector<double>(6, 0.1));
  CHECK_THROWS(make_example(too_many, c));
}

TEST_CASE("loss falls monotonically on a separable pair") {
  auto c = small(1);
  c.epochs = 5;
  c.batch_size = 2;
  c.learning_rate = 1e-2;
  std::vector<std::vector<double>> pos(2, std::vector<double>(6, 1.0));
  std::vector<std::vector<double>> neg(2, std::vector<double>(6, -1.0));
  const UserBatch data = {make_example(pos, c, 1.0), make_example(neg, c, 0.0)};
  const auto result = train(data, c);
  REQUIRE(result.epoch_loss.size() == 5);
  for (std::size_t i = 1; i < result.epoch_loss.size(); ++i) {
    CHECK(result.epoch_loss[i] < result.epoch_loss[i - 1]);
  }
}

TEST_CASE("all-negative labels fit to low probability") {
  auto c = small(1);
  c.epochs = 30;
  c.batch_size = 8;
  c.learning_rate = 1e-2;
  Rng rng(10);
  UserBatch data;
  for (int i = 0; i < 16; ++i) data.push_back(random_example(c, rng, 1 + i % 4, 0.0));
  const auto result = train(data, c);
  double mean = 0.0;
  for (const double prob : predict_prob(data, result.params)) mean += prob;
  CHECK(mean / 16.0 < 0.1);
}

TEST_CASE("training is deterministic for a seed") {
  auto c = small(1);
  c.epochs = 2;
  Rng rng(11);
  UserBatch data;
  for (int i = 0; i < 10; ++i) data.push_back(random_example(c, rng, 1 + i % 4, i % 2));
  auto a = train(data, c).params;
  auto b = train(data, c).params;
  const auto ta = tensors(a);
  const auto tb = tensors(b);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    for (std::size_t j = 0; j < ta[i].size; ++j) CHECK(ta[i].data[j] == tb[i].data[j]);
  }
  c.seed = 6;
  auto d = train(data, c).params;
  CHECK(d.cls_w != a.cls_w);
}

TEST_CASE("epoch callback sees every epoch") {
  auto c = small(0);
  c.epochs = 3;
  Rng rng(12);
  const UserBatch data = {random_example(c, rng, 2, 1.0), random_example(c, rng, 3, 0.0)};
  std::vector<int> seen;
  train(data, c, [&](int epoch, double loss) {
    seen.push_back(epoch);
    CHECK(std::isfinite(loss));
  });
  CHECK(seen == std::vector<int>{1, 2, 3});
}

TEST_CASE("diverging training stops with a diagnostic") {
  auto c = small(1);
  c.epochs = 3;
  c.learning_rate = 1e300;
  Rng rng(13);
  const UserBatch data = {random_example(c, rng, 2, 1.0), random_example(c, rng, 3, 0.0)};
  CHECK_THROWS_AS(train(data, c), NonFiniteLoss);
}

TEST_CASE("model files round-trip bit for bit") {
  auto c = small(2);
  c.weight_decay = 0.01;
  auto p = ModelParams::init(c);
  std::stringstream buf;
  save_model(p, buf);
  auto q = load_model(buf);
  CHECK(q.config.weight_decay == 0.01);
  CHECK(q.config.num_layers == 2);
  const auto tp = tensors(p);
  const auto tq = tensors(q);
  REQUIRE(tp.size() == tq.size());
  for (std::size_t i = 0; i < tp.size(); ++i) {
    CHECK(tp[i].name == tq[i].name);
    REQUIRE(tp[i].size == tq[i].size);
    CHECK(std::memcmp(tp[i].data, tq[i].data, tp[i].size * sizeof(double)) == 0);
  }
  std::string bytes = buf.str();
  bytes[bytes.size() - 3] ^= 0x01;
  std::stringstream corrupt(bytes);
  CHECK_THROWS(load_model(corrupt));
  std::stringstream junk("not a model");
  CHECK_THROWS(load_model(junk));
}

TEST_CASE("gradients agree with finite differences") {
  for (std::uint64_t seed = 100; seed < 104; ++seed) {
    const auto r = grad_check(small_config(seed));
    INFO("seed " << seed << " worst " << r.worst_tensor << " err " << r.max_relative_error);
    CHECK(r.passed);
    CHECK(r.checked > 0);
  }
  auto cfg = small(2);
  cfg.weight_decay = 0.5;  // only touches the update rule, not the loss
  CHECK(grad_check(cfg).passed);
}

TEST_CASE("small configs are small and valid") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto c = small_config(seed);
    CHECK_NOTHROW(c.validate());
    CHECK(c.model_dim <= 16);
    CHECK(c.max_posts <= 4);
    CHECK(c.num_layers <= 2);
  }
}
