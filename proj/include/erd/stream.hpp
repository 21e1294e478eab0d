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

// Online early risk detection over one user's post stream.
//
// Every arriving post is scored against the templates and offered to a
// capacity-K evolving queue of the riskiest posts:
//   1. a queue that is not full accepts the post;
//   2. a full queue rejects a post strictly less risky than its minimum,
//      otherwise it evicts the (earliest) minimum-risk entry and inserts the
//      post, keeping chronological order.
// The classifier runs only when the queue changed, and the first
// probability above the threshold raises an irrevocable alert.

#pragma once

#include <atomic>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "erd/corpus.hpp"
#include "erd/han.hpp"
#include "erd/screening.hpp"

namespace erd {

class EvolvingQueue {
 public:
  explicit EvolvingQueue(std::size_t capacity);

  // Returns true when the queue changed.
  bool update(ScoredPost post);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool full() const { return entries_.size() == capacity_; }
  const std::vector<ScoredPost>& entries() const { return entries_; }

  // Minimum risk and the index of its earliest holder. Queue must be
  // non-empty.
  double min_risk() const { return entries_[min_index_].risk; }
  std::size_t min_index() const { return min_index_; }

 private:
  void refresh_min();

  std::size_t capacity_;
  std::vector<ScoredPost> entries_;  // chronological
  std::size_t min_index_ = 0;
};

// Anything that maps the current queue to P(depressed).
class RiskClassifier {
 public:
  virtual ~RiskClassifier() = default;
  virtual double predict(std::span<const ScoredPost> queue) const = 0;
};

class HanClassifier : public RiskClassifier {
 public:
  explicit HanClassifier(const han::ModelParams& params) : params_(params) {}

  double predict(std::span<const ScoredPost> queue) const override;
  // Pooling weights aligned with `queue`.
  han::Prediction explain(std::span<const ScoredPost> queue) const;

  const han::ModelParams& params() const { return params_; }

 private:
  han::UserExample to_example(std::span<const ScoredPost> queue) const;

  const han::ModelParams& params_;
};

struct TracePoint {
  int post_index = 0;  // 1-based count of posts seen
  double probability = 0.0;
};

struct DetectorState {
  explicit DetectorState(std::size_t capacity) : queue(capacity) {}

  EvolvingQueue queue;
  bool alerted = false;
  std::optional<int> alert_post_index;
  int posts_seen = 0;
  int inferences = 0;
  std::vector<TracePoint> prob_trace;
};

struct Decision {
  std::string user_id;
  bool alerted = false;
  std::optional<int> alert_post_index;
  double final_probability = 0.5;
  int posts_seen = 0;
  int inferences = 0;
};

// Advances the detector by one post. The state must not be alerted yet and
// threshold must lie in (0, 1). Alerts when probability > threshold.
void process_post(DetectorState& state, ScoredPost post, const RiskClassifier& model,
                  double threshold);

struct StreamOptions {
  std::size_t k = 16;
  double threshold = 0.5;
  // Keep scoring and classifying after an alert so the probability trace
  // covers the whole history (for threshold sweeps). The decision and its
  // counters still freeze at the alert.
  bool full_trace = false;
};

struct StreamRun {
  Decision decision;
  DetectorState state;
  // Probabilities computed after the alert; only with full_trace.
  std::vector<TracePoint> trace_after_alert;
  int posts_total = 0;
  bool full_trace = false;  // scored to the end of the history
};

// Scores each post on arrival and folds process_post over the history,
// stopping at the alert.
StreamRun run_stream(const UserHistory& history, const RiskClassifier& model,
                     const TemplateIndex& index, EmbeddingProvider& provider,
                     const StreamOptions& options);

// Sum of inferences over sum of posts seen. Throws std::invalid_argument
// when no posts were seen.
double inference_fraction(std::span<const Decision> decisions);

}  // namespace erd
