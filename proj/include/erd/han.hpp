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

// Hierarchical attentional classifier over a user's selected posts.
//
// Frozen post embeddings are projected to model_dim, summed with learned
// positional embeddings and passed through pre-norm transformer encoder
// blocks. Attentional pooling (a row vector W and scalar b scoring every
// contextual post) produces the user vector u, and a logistic head gives
// P(depressed). Padding positions are masked out of attention, zeroed in
// the encoder output and given zero pooling weight.
//
// Everything runs in double precision with hand-written gradients; the
// finite-difference checker below keeps them honest.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "erd/util.hpp"

namespace erd::han {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  int embed_dim = 256;
  int num_layers = 2;
  int num_heads = 4;
  int model_dim = 64;
  int ff_dim = 128;
  int max_posts = 16;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled, as in AdamW

  void validate() const;
};

struct LayerParams {
  Vector ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;  // model_dim x model_dim
  Vector bq, bk, bv, bo;
  Vector ln2_gain, ln2_bias;
  Matrix ff1_w;  // ff_dim x model_dim
  Vector ff1_b;
  Matrix ff2_w;  // model_dim x ff_dim
  Vector ff2_b;
};

struct ModelParams {
  ModelConfig config;
  Matrix in_proj_w;  // model_dim x embed_dim
  Vector in_proj_b;
  Matrix positions;  // max_posts x model_dim
  std::vector<LayerParams> layers;
  Vector pool_w;  // model_dim
  double pool_b = 0.0;
  Vector cls_w;  // model_dim
  double cls_b = 0.0;

  // Random initialization (scaled uniform weights, unit LayerNorm gains).
  static ModelParams init(const ModelConfig& config);
  // Same shapes as `like`, every entry zero.
  static ModelParams zeros_like(const ModelParams& like);
};

// A view of one named parameter tensor; storage is column-major.
struct TensorRef {
  std::string name;
  double* data;
  std::size_t size;
};

// Every parameter tensor in a fixed order (scalars are size-1 tensors).
std::vector<TensorRef> tensors(ModelParams& params);
std::size_t parameter_count(const ModelParams& params);

// One user: up to max_posts rows of post embeddings in chronological
// order. Rows with mask == 0 are padding.
struct UserExample {
  Matrix posts;  // max_posts x embed_dim
  std::vector<std::uint8_t> mask;
  double label = 0.0;

  std::size_t active() const;
};

using UserBatch = std::vector<UserExample>;

// Builds an example from chronological post embeddings (size <= max_posts),
// padding the tail.
UserExample make_example(std::span<const std::vector<double>> embeddings, const ModelConfig& config,
                         double label = 0.0);

// Contextual post representations, max_posts x model_dim, masked rows zero.
// Throws std::invalid_argument on shape mismatch, non-finite input or an
// all-padding example.
Matrix user_encode(const UserExample& example, const ModelParams& params);
std::vector<Matrix> user_encode(const UserBatch& batch, const ModelParams& params);

struct PoolResult {
  Vector user;     // model_dim
  Vector weights;  // max_posts, zero on masked rows
};

PoolResult attention_pool(const Matrix& reps, std::span<const std::uint8_t> mask,
                          const ModelParams& params);

struct Prediction {
  double probability = 0.5;
  double logit = 0.0;
  Vector attention;  // pooling weights per position
};

Prediction predict(const UserExample& example, const ModelParams& params);
std::vector<double> predict_prob(const UserBatch& batch, const ModelParams& params);

// Mean binary cross-entropy over the batch. When `grads` is non-null it is
// overwritten with d(loss)/d(params).
double loss_and_grad(const UserBatch& batch, const ModelParams& params, ModelParams* grads);

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

// Minibatch Adam on BCE. Deterministic given config.seed. Throws
// NonFiniteLoss if the loss ever stops being finite.
TrainResult train(const UserBatch& examples, const ModelConfig& config,
                  const std::function<void(int epoch, double loss)>& on_epoch = {});

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
  bool passed = false;
};

// Compares analytic gradients of every parameter with central differences
// (step 1e-5) on a random model and batch drawn from config.seed.
// relative error = |a - n| / max(|a|, |n|, 1e-6).
GradCheckResult grad_check(const ModelConfig& config, double tolerance = 1e-4);

// A random config small enough for grad_check: model_dim <= 16,
// max_posts <= 4, 0 to 2 layers.
ModelConfig small_config(std::uint64_t seed);

// Binary model file: "ERDHAN\0\1", u64 header length, JSON header
// {format, version, config, tensors:[{name, size, offset}], checksum},
// then raw little-endian doubles. checksum = fnv1a64 over the payload.
void save_model(const ModelParams& params, std::ostream& out);
void save_model(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_model(std::istream& in);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace erd::han
