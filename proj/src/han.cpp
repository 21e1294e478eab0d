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

#include "erd/han.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace erd::han {
namespace {

static_assert(std::endian::native == std::endian::little, "model files assume little-endian hosts");

constexpr double kLayerNormEps = 1e-5;
constexpr char kMagic[8] = {'E', 'R', 'D', 'H', 'A', 'N', '\0', '\1'};
constexpr int kFormatVersion = 1;

// Calls f(name, data, size) for every tensor; data is const when P is.
template <typename P, typename F>
void visit_tensors(P& p, F&& f) {
  f("in_proj_w", p.in_proj_w.data(), static_cast<std::size_t>(p.in_proj_w.size()));
  f("in_proj_b", p.in_proj_b.data(), static_cast<std::size_t>(p.in_proj_b.size()));
  f("positions", p.positions.data(), static_cast<std::size_t>(p.positions.size()));
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "layer" + std::to_string(i) + ".";
    auto g = [&](const char* name, auto& t) {
      f(pre + name, t.data(), static_cast<std::size_t>(t.size()));
    };
    g("ln1_gain", l.ln1_gain);
    g("ln1_bias", l.ln1_bias);
    g("wq", l.wq);
    g("bq", l.bq);
    g("wk", l.wk);
    g("bk", l.bk);
    g("wv", l.wv);
    g("bv", l.bv);
    g("wo", l.wo);
    g("bo", l.bo);
    g("ln2_gain", l.ln2_gain);
    g("ln2_bias", l.ln2_bias);
    g("ff1_w", l.ff1_w);
    g("ff1_b", l.ff1_b);
    g("ff2_w", l.ff2_w);
    g("ff2_b", l.ff2_b);
  }
  f("pool_w", p.pool_w.data(), static_cast<std::size_t>(p.pool_w.size()));
  f("pool_b", &p.pool_b, std::size_t{1});
  f("cls_w", p.cls_w.data(), static_cast<std::size_t>(p.cls_w.size()));
  f("cls_b", &p.cls_b, std::size_t{1});
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  static const double kInvSqrt2Pi = 0.5 * M_2_SQRTPI * M_SQRT1_2;
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias, LayerNormCache* cache) {
  const Eigen::Index n = x.rows();
  const double d = static_cast<double>(x.cols());
  Matrix xhat(n, x.cols());
  Vector inv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).sum() / d;
    const auto centered = (x.row(i).array() - mu).matrix();
    const double var = centered.squaredNorm() / d;
    inv(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = centered * inv(i);
  }
  Matrix y = (xhat.array().rowwise() * gain.transpose().array()).rowwise() +
             bias.transpose().array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

// Returns dx; accumulates dgain/dbias.
Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const Vector& gain,
                           Vector& dgain, Vector& dbias) {
  dgain += (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
  dbias += dy.colwise().sum().transpose();
  const Matrix dxhat = dy.array().rowwise() * gain.transpose().array();
  const double d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_dxhat = dxhat.row(i).sum() / d;
    const double mean_dxhat_xhat = dxhat.row(i).dot(cache.xhat.row(i)) / d;
    dx.row(i) = cache.inv_std(i) *
                (dxhat.row(i).array() - mean_dxhat - cache.xhat.row(i).array() * mean_dxhat_xhat)
                    .matrix();
  }
  return dx;
}

void softmax_rows(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
}

Vector softmax(const Vector& z) {
  const double mx = z.maxCoeff();
  Vector e = (z.array() - mx).exp().matrix();
  return e / e.sum();
}

struct LayerCache {
  Matrix x_in;
  LayerNormCache ln1;
  Matrix a;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, n x n
  Matrix ctx;
  LayerNormCache ln2;
  Matrix b;
  Matrix f_pre;
  Matrix f_act;
};

struct ForwardCache {
  std::vector<Eigen::Index> valid;  // positions of unmasked rows
  Matrix inputs;                    // n x embed_dim
  std::vector<LayerCache> layers;
  Matrix reps;  // n x model_dim
  Vector alpha;
  Vector user;
  double logit = 0.0;
};

void check_example(const UserExample& ex, const ModelConfig& cfg) {
  if (ex.posts.rows() != cfg.max_posts || ex.posts.cols() != cfg.embed_dim ||
      ex.mask.size() != static_cast<std::size_t>(cfg.max_posts)) {
    throw std::invalid_argument("user example shape does not match model config (expected " +
                                std::to_string(cfg.max_posts) + " x " +
                                std::to_string(cfg.embed_dim) + ")");
  }
  if (ex.active() == 0) throw std::invalid_argument("user example has no unmasked posts");
}

void forward(const UserExample& ex, const ModelParams& p, ForwardCache& c) {
  const ModelConfig& cfg = p.config;
  check_example(ex, cfg);
  c.valid.clear();
  for (int t = 0; t < cfg.max_posts; ++t) {
    if (ex.mask[static_cast<std::size_t>(t)]) c.valid.push_back(t);
  }
  const auto n = static_cast<Eigen::Index>(c.valid.size());
  c.inputs.resize(n, cfg.embed_dim);
  for (Eigen::Index i = 0; i < n; ++i) c.inputs.row(i) = ex.posts.row(c.valid[i]);
  if (!c.inputs.allFinite()) throw std::invalid_argument("non-finite post embedding");

  Matrix x = (c.inputs * p.in_proj_w.transpose()).rowwise() + p.in_proj_b.transpose();
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) += p.positions.row(c.valid[i]);

  const int heads = cfg.num_heads;
  const int dh = cfg.model_dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const LayerParams& lp = p.layers[l];
    LayerCache& lc = c.layers[l];
    lc.x_in = x;
    lc.a = layer_norm(x, lp.ln1_gain, lp.ln1_bias, &lc.ln1);
    lc.q = (lc.a * lp.wq.transpose()).rowwise() + lp.bq.transpose();
    lc.k = (lc.a * lp.wk.transpose()).rowwise() + lp.bk.transpose();
    lc.v = (lc.a * lp.wv.transpose()).rowwise() + lp.bv.transpose();
    lc.ctx.resize(n, cfg.model_dim);
    lc.probs.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Matrix s = lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose() * scale;
      softmax_rows(s);
      lc.ctx.middleCols(h * dh, dh) = s * lc.v.middleCols(h * dh, dh);
      lc.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    x += (lc.ctx * lp.wo.transpose()).rowwise() + lp.bo.transpose();
    lc.b = layer_norm(x, lp.ln2_gain, lp.ln2_bias, &lc.ln2);
    lc.f_pre = (lc.b * lp.ff1_w.transpose()).rowwise() + lp.ff1_b.transpose();
    lc.f_act = lc.f_pre.unaryExpr(&gelu);
    x += (lc.f_act * lp.ff2_w.transpose()).rowwise() + lp.ff2_b.transpose();
  }
  c.reps = std::move(x);

  const Vector z = (c.reps * p.pool_w).array() + p.pool_b;
  c.alpha = softmax(z);
  c.user = c.reps.transpose() * c.alpha;
  c.logit = p.cls_w.dot(c.user) + p.cls_b;
}

// Accumulates d(loss)/d(params) into g given d(loss)/d(logit).
void backward(const ForwardCache& c, const ModelParams& p, double dlogit, ModelParams& g) {
  const ModelConfig& cfg = p.config;
  g.cls_w += dlogit * c.user;
  g.cls_b += dlogit;
  const Vector du = dlogit * p.cls_w;

  Matrix dx = c.alpha * du.transpose();
  const Vector dalpha = c.reps * du;
  const Vector dz = c.alpha.array() * (dalpha.array() - c.alpha.dot(dalpha));
  g.pool_w += c.reps.transpose() * dz;
  g.pool_b += dz.sum();
  dx += dz * p.pool_w.transpose();

  const int heads = cfg.num_heads;
  const int dh = cfg.model_dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index n = c.reps.rows();
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const LayerParams& lp = p.layers[li];
    LayerParams& lg = g.layers[li];
    const LayerCache& lc = c.layers[li];

    // Feed-forward sublayer.
    const Matrix& dm = dx;
    lg.ff2_w += dm.transpose() * lc.f_act;
    lg.ff2_b += dm.colwise().sum().transpose();
    Matrix df = dm * lp.ff2_w;
    df.array() *= lc.f_pre.unaryExpr(&gelu_grad).array();
    lg.ff1_w += df.transpose() * lc.b;
    lg.ff1_b += df.colwise().sum().transpose();
    const Matrix db = df * lp.ff1_w;
    Matrix dmid = dx + layer_norm_backward(db, lc.ln2, lp.ln2_gain, lg.ln2_gain, lg.ln2_bias);

    // Self-attention sublayer.
    lg.wo += dmid.transpose() * lc.ctx;
    lg.bo += dmid.colwise().sum().transpose();
    const Matrix dctx = dmid * lp.wo;
    Matrix dq(n, cfg.model_dim), dk(n, cfg.model_dim), dv(n, cfg.model_dim);
    for (int h = 0; h < heads; ++h) {
      const Matrix& prob = lc.probs[static_cast<std::size_t>(h)];
      const auto dctx_h = dctx.middleCols(h * dh, dh);
      const Matrix dprob = dctx_h * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = prob.transpose() * dctx_h;
      const Vector row_dot = (prob.array() * dprob.array()).rowwise().sum();
      const Matrix ds = (prob.array() * (dprob.colwise() - row_dot).array()).matrix() * scale;
      dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh);
    }
    lg.wq += dq.transpose() * lc.a;
    lg.bq += dq.colwise().sum().transpose();
    lg.wk += dk.transpose() * lc.a;
    lg.bk += dk.colwise().sum().transpose();
    lg.wv += dv.transpose() * lc.a;
    lg.bv += dv.colwise().sum().transpose();
    const Matrix da = dq * lp.wq + dk * lp.wk + dv * lp.wv;
    dx = dmid + layer_norm_backward(da, lc.ln1, lp.ln1_gain, lg.ln1_gain, lg.ln1_bias);
  }

  g.in_proj_w += dx.transpose() * c.inputs;
  g.in_proj_b += dx.colwise().sum().transpose();
  for (Eigen::Index i = 0; i < n; ++i) g.positions.row(c.valid[i]) += dx.row(i);
}

Matrix glorot(Rng& rng, int rows, int cols) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
  return m;
}

Vector uniform_vector(Rng& rng, int n, double a) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.uniform(-a, a);
  return v;
}

}  // namespace

void ModelConfig::validate() const {
  if (embed_dim < 1 || model_dim < 1 || ff_dim < 1) {
    throw std::invalid_argument("embed_dim, model_dim and ff_dim must be >= 1");
  }
  if (num_layers < 0) throw std::invalid_argument("num_layers must be >= 0");
  if (num_heads < 1 || model_dim % num_heads != 0) {
    throw std::invalid_argument("num_heads must be >= 1 and divide model_dim");
  }
  if (max_posts < 1) throw std::invalid_argument("max_posts must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (batch_size < 1 || epochs < 0) throw std::invalid_argument("batch_size >= 1, epochs >= 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
}

ModelParams ModelParams::init(const ModelConfig& config) {
  config.validate();
  Rng rng(mix64(config.seed ^ 0x4a4e0001ULL));
  const int d = config.model_dim;
  ModelParams p;
  p.config = config;
  p.in_proj_w = glorot(rng, d, config.embed_dim);
  p.in_proj_b = Vector::Zero(d);
  p.positions = Matrix(config.max_posts, d);
  for (Eigen::Index i = 0; i < p.positions.size(); ++i) {
    p.positions.data()[i] = 0.02 * rng.normal();
  }
  p.layers.resize(static_cast<std::size_t>(config.num_layers));
  for (auto& l : p.layers) {
    l.ln1_gain = Vector::Ones(d);
    l.ln1_bias = Vector::Zero(d);
    l.wq = glorot(rng, d, d);
    l.wk = glorot(rng, d, d);
    l.wv = glorot(rng, d, d);
    l.wo = glorot(rng, d, d);
    l.bq = l.bk = l.bv = l.bo = Vector::Zero(d);
    l.ln2_gain = Vector::Ones(d);
    l.ln2_bias = Vector::Zero(d);
    l.ff1_w = glorot(rng, config.ff_dim, d);
    l.ff1_b = Vector::Zero(config.ff_dim);
    l.ff2_w = glorot(rng, d, config.ff_dim);
    l.ff2_b = Vector::Zero(d);
  }
  p.pool_w = uniform_vector(rng, d, 1.0 / std::sqrt(static_cast<double>(d)));
  p.pool_b = 0.0;
  p.cls_w = uniform_vector(rng, d, 1.0 / std::sqrt(static_cast<double>(d)));
  p.cls_b = 0.0;
  return p;
}

ModelParams ModelParams::zeros_like(const ModelParams& like) {
  ModelParams z = like;
  visit_tensors(z, [](const std::string&, double* data, std::size_t size) {
    std::fill(data, data + size, 0.0);
  });
  return z;
}

std::vector<TensorRef> tensors(ModelParams& params) {
  std::vector<TensorRef> out;
  visit_tensors(params, [&out](const std::string& name, double* data, std::size_t size) {
    out.push_back({name, data, size});
  });
  return out;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  visit_tensors(params, [&n](const std::string&, const double*, std::size_t size) { n += size; });
  return n;
}

std::size_t UserExample::active() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

UserExample make_example(std::span<const std::vector<double>> embeddings, const ModelConfig& config,
                         double label) {
  if (embeddings.empty()) throw std::invalid_argument("make_example: no posts");
  if (embeddings.size() > static_cast<std::size_t>(config.max_posts)) {
    throw std::invalid_argument("make_example: more posts than max_posts");
  }
  UserExample ex;
  ex.posts = Matrix::Zero(config.max_posts, config.embed_dim);
  ex.mask.assign(static_cast<std::size_t>(config.max_posts), 0);
  ex.label = label;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != static_cast<std::size_t>(config.embed_dim)) {
      throw std::invalid_argument("make_example: embedding dim " +
                                  std::to_string(embeddings[i].size()) + " != model embed_dim " +
                                  std::to_string(config.embed_dim));
    }
    ex.posts.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(embeddings[i].data(), config.embed_dim);
    ex.mask[i] = 1;
  }
  return ex;
}

Matrix user_encode(const UserExample& example, const ModelParams& params) {
  ForwardCache c;
  forward(example, params, c);
  Matrix out = Matrix::Zero(params.config.max_posts, params.config.model_dim);
  for (std::size_t i = 0; i < c.valid.size(); ++i) {
    out.row(c.valid[i]) = c.reps.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

std::vector<Matrix> user_encode(const UserBatch& batch, const ModelParams& params) {
  std::vector<Matrix> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) out.push_back(user_encode(ex, params));
  return out;
}

PoolResult attention_pool(const Matrix& reps, std::span<const std::uint8_t> mask,
                          const ModelParams& params) {
  if (reps.rows() != static_cast<Eigen::Index>(mask.size()) ||
      reps.cols() != params.pool_w.size()) {
    throw std::invalid_argument("attention_pool: shape mismatch");
  }
  std::vector<Eigen::Index> valid;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask[t]) valid.push_back(static_cast<Eigen::Index>(t));
  }
  if (valid.empty()) throw std::invalid_argument("attention_pool: every position is masked");
  Vector z(static_cast<Eigen::Index>(valid.size()));
  for (std::size_t i = 0; i < valid.size(); ++i) {
    z(static_cast<Eigen::Index>(i)) = reps.row(valid[i]).dot(params.pool_w) + params.pool_b;
  }
  const Vector alpha = softmax(z);
  PoolResult out;
  out.weights = Vector::Zero(reps.rows());
  out.user = Vector::Zero(reps.cols());
  for (std::size_t i = 0; i < valid.size(); ++i) {
    const double a = alpha(static_cast<Eigen::Index>(i));
    out.weights(valid[i]) = a;
    out.user += a * reps.row(valid[i]).transpose();
  }
  return out;
}

Prediction predict(const UserExample& example, const ModelParams& params) {
  ForwardCache c;
  forward(example, params, c);
  Prediction out;
  out.logit = c.logit;
  out.probability = sigmoid(c.logit);
  out.attention = Vector::Zero(params.config.max_posts);
  for (std::size_t i = 0; i < c.valid.size(); ++i) {
    out.attention(c.valid[i]) = c.alpha(static_cast<Eigen::Index>(i));
  }
  return out;
}

std::vector<double> predict_prob(const UserBatch& batch, const ModelParams& params) {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) out.push_back(predict(ex, params).probability);
  return out;
}

double loss_and_grad(const UserBatch& batch, const ModelParams& params, ModelParams* grads) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  if (grads) *grads = ModelParams::zeros_like(params);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  ForwardCache c;
  for (const auto& ex : batch) {
    forward(ex, params, c);
    loss += (softplus(c.logit) - ex.label * c.logit) * inv_n;
    if (grads) backward(c, params, (sigmoid(c.logit) - ex.label) * inv_n, *grads);
  }
  return loss;
}

TrainResult train(const UserBatch& examples, const ModelConfig& config,
                  const std::function<void(int, double)>& on_epoch) {
  config.validate();
  if (examples.empty()) throw std::invalid_argument("train: no examples");
  for (const auto& ex : examples) check_example(ex, config);

  TrainResult result{ModelParams::init(config), {}};
  ModelParams& params = result.params;
  ModelParams m1 = ModelParams::zeros_like(params);
  ModelParams m2 = ModelParams::zeros_like(params);
  ModelParams grads = ModelParams::zeros_like(params);
  auto p_t = tensors(params);
  auto m1_t = tensors(m1);
  auto m2_t = tensors(m2);

  Rng rng(mix64(config.seed ^ 0x5348554646ULL));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(config.batch_size);
  std::uint64_t step = 0;
  UserBatch batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(start + bs, order.size()); ++i) {
        batch.push_back(examples[order[i]]);
      }
      const double loss = loss_and_grad(batch, params, &grads);
      if (!std::isfinite(loss)) {
        throw NonFiniteLoss("non-finite training loss at epoch " + std::to_string(epoch + 1) +
                            ", step " + std::to_string(step + 1) +
                            "; try a lower learning_rate");
      }
      epoch_loss += loss * static_cast<double>(batch.size());
      ++step;
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      auto g_t = tensors(grads);
      for (std::size_t t = 0; t < p_t.size(); ++t) {
        for (std::size_t i = 0; i < p_t[t].size; ++i) {
          const double g = g_t[t].data[i];
          double& m = m1_t[t].data[i];
          double& v = m2_t[t].data[i];
          m = config.beta1 * m + (1.0 - config.beta1) * g;
          v = config.beta2 * v + (1.0 - config.beta2) * g * g;
          // Decoupled decay, applied to every tensor alike.
          p_t[t].data[i] -= config.learning_rate * ((m / bc1) / (std::sqrt(v / bc2) + config.adam_epsilon) +
                                                    config.weight_decay * p_t[t].data[i]);
        }
      }
    }
    epoch_loss /= static_cast<double>(examples.size());
    result.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch + 1, epoch_loss);
  }
  return result;
}

GradCheckResult grad_check(const ModelConfig& config, double tolerance) {
  config.validate();
  constexpr double kStep = 1e-5;
  constexpr double kFloor = 1e-6;
  Rng rng(mix64(config.seed ^ 0x67726164ULL));

  ModelParams params = ModelParams::init(config);
  // Move every entry off its initial value so biases and gains are tested
  // away from 0 and 1.
  for (auto& t : tensors(params)) {
    for (std::size_t i = 0; i < t.size; ++i) t.data[i] += rng.uniform(-0.3, 0.3);
  }

  UserBatch batch(3);
  for (auto& ex : batch) {
    ex.posts = Matrix(config.max_posts, config.embed_dim);
    for (Eigen::Index i = 0; i < ex.posts.size(); ++i) ex.posts.data()[i] = rng.normal();
    ex.mask.assign(static_cast<std::size_t>(config.max_posts), 0);
    for (auto& m : ex.mask) m = rng.bernoulli(0.7) ? 1 : 0;
    ex.mask[rng.below(ex.mask.size())] = 1;
    ex.label = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }

  ModelParams grads;
  loss_and_grad(batch, params, &grads);
  auto p_t = tensors(params);
  auto g_t = tensors(grads);

  GradCheckResult result;
  for (std::size_t t = 0; t < p_t.size(); ++t) {
    for (std::size_t i = 0; i < p_t[t].size; ++i) {
      double& x = p_t[t].data[i];
      const double saved = x;
      x = saved + kStep;
      const double up = loss_and_grad(batch, params, nullptr);
      x = saved - kStep;
      const double down = loss_and_grad(batch, params, nullptr);
      x = saved;
      const double numeric = (up - down) / (2.0 * kStep);
      const double analytic = g_t[t].data[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), kFloor});
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_tensor = p_t[t].name;
      }
      ++result.checked;
    }
  }
  result.passed = result.max_relative_error <= tolerance;
  return result;
}

ModelConfig small_config(std::uint64_t seed) {
  Rng rng(mix64(seed ^ 0x736d616c6cULL));
  ModelConfig c;
  c.seed = seed;
  c.num_heads = 1 + static_cast<int>(rng.below(2));
  c.model_dim = std::min(16, c.num_heads * (2 + static_cast<int>(rng.below(5))));
  c.embed_dim = 2 + static_cast<int>(rng.below(6));
  c.ff_dim = 2 + static_cast<int>(rng.below(10));
  c.num_layers = static_cast<int>(rng.below(3));
  c.max_posts = 1 + static_cast<int>(rng.below(4));
  return c;
}

// --- serialization ---------------------------------------------------------

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},     {"num_layers", c.num_layers},
          {"num_heads", c.num_heads},     {"model_dim", c.model_dim},
          {"ff_dim", c.ff_dim},           {"max_posts", c.max_posts},
          {"seed", c.seed},               {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},   {"epochs", c.epochs},
          {"beta1", c.beta1},             {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon}, {"weight_decay", c.weight_decay}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.model_dim = j.at("model_dim").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.max_posts = j.at("max_posts").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  return c;
}

}  // namespace

void save_model(const ModelParams& params, std::ostream& out) {
  std::string payload;
  nlohmann::json index = nlohmann::json::array();
  visit_tensors(params, [&](const std::string& name, const double* data, std::size_t size) {
    index.push_back({{"name", name}, {"size", size}, {"offset", payload.size()}});
    payload.append(reinterpret_cast<const char*>(data), size * sizeof(double));
  });
  const nlohmann::json header = {{"format", "erd-han"},
                                 {"version", kFormatVersion},
                                 {"config", config_to_json(params.config)},
                                 {"tensors", index},
                                 {"payload_bytes", payload.size()},
                                 {"checksum", hex64(fnv1a64(payload))}};
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("failed to write model");
}

void save_model(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  save_model(params, out);
}

ModelParams load_model(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error("not an erd-han model file");
  }
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1u << 24)) {
    throw Error("corrupt model header");
  }
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw Error("truncated model header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("corrupt model header: ") + e.what());
  }
  if (header.value("version", 0) != kFormatVersion) {
    throw Error("unsupported model format version " + header.value("version", nlohmann::json()).dump());
  }
  const std::size_t bytes = header.at("payload_bytes").get<std::size_t>();
  std::string payload(bytes, '\0');
  if (!in.read(payload.data(), static_cast<std::streamsize>(bytes))) {
    throw Error("truncated model payload");
  }
  if (hex64(fnv1a64(payload)) != header.at("checksum").get<std::string>()) {
    throw Error("model checksum mismatch");
  }

  ModelParams params = ModelParams::init(config_from_json(header.at("config")));
  const auto& index = header.at("tensors");
  auto refs = tensors(params);
  if (index.size() != refs.size()) throw Error("model tensor count does not match its config");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& entry = index[i];
    const auto size = entry.at("size").get<std::size_t>();
    const auto offset = entry.at("offset").get<std::size_t>();
    if (entry.at("name").get<std::string>() != refs[i].name || size != refs[i].size ||
        offset + size * sizeof(double) > payload.size()) {
      throw Error("model tensor '" + refs[i].name + "' does not match its config");
    }
    std::memcpy(refs[i].data, payload.data() + offset, size * sizeof(double));
  }
  return params;
}

ModelParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model " + path.string());
  return load_model(in);
}

}  // namespace erd::han
