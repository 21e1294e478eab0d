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

#include "erd/stream.hpp"

#include <algorithm>
#include <exception>
#include <stdexcept>

namespace erd {

EvolvingQueue::EvolvingQueue(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("queue capacity must be >= 1");
  entries_.reserve(capacity);
}

void EvolvingQueue::refresh_min() {
  min_index_ = 0;
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    if (entries_[i].risk < entries_[min_index_].risk) min_index_ = i;
  }
}

bool EvolvingQueue::update(ScoredPost post) {
  if (full()) {
    if (post.risk < min_risk()) return false;
    entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(min_index_));
  }
  const auto pos = std::upper_bound(entries_.begin(), entries_.end(), post,
                                    [](const ScoredPost& a, const ScoredPost& b) {
                                      return chronologically_before(a.post, b.post);
                                    });
  entries_.insert(pos, std::move(post));
  refresh_min();
  return true;
}

han::UserExample HanClassifier::to_example(std::span<const ScoredPost> queue) const {
  std::vector<std::vector<double>> rows;
  rows.reserve(queue.size());
  for (const auto& sp : queue) rows.push_back(sp.embedding.values);
  return han::make_example(rows, params_.config);
}

double HanClassifier::predict(std::span<const ScoredPost> queue) const {
  return han::predict(to_example(queue), params_).probability;
}

han::Prediction HanClassifier::explain(std::span<const ScoredPost> queue) const {
  return han::predict(to_example(queue), params_);
}

void process_post(DetectorState& state, ScoredPost post, const RiskClassifier& model,
                  double threshold) {
  if (state.alerted) throw std::logic_error("process_post called after alert");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("threshold must lie in (0, 1)");
  }
  ++state.posts_seen;
  if (!state.queue.update(std::move(post))) return;
  const double prob = model.predict(state.queue.entries());
  ++state.inferences;
  state.prob_trace.push_back({state.posts_seen, prob});
  if (prob > threshold) {
    state.alerted = true;
    state.alert_post_index = state.posts_seen;
  }
}

StreamRun run_stream(const UserHistory& history, const RiskClassifier& model,
                     const TemplateIndex& index, EmbeddingProvider& provider,
                     const StreamOptions& options) {
  StreamRun run{{}, DetectorState(options.k), {}, static_cast<int>(history.posts.size()),
                options.full_trace};
  DetectorState& state = run.state;
  std::optional<EvolvingQueue> shadow;
  int position = 0;
  for (const auto& post : history.posts) {
    ++position;
    if (state.alerted) {
      if (!options.full_trace) break;
      if (!shadow) shadow = state.queue;
      if (shadow->update(score_post(post, index, provider))) {
        run.trace_after_alert.push_back({position, model.predict(shadow->entries())});
      }
      continue;
    }
    try {
      process_post(state, score_post(post, index, provider), model, options.threshold);
    } catch (const std::exception& e) {
      // The original exception stays reachable via std::rethrow_if_nested.
      std::throw_with_nested(
          Error("user " + history.user_id + ", post " + post.post_id + ": " + e.what()));
    }
  }

  Decision& d = run.decision;
  d.user_id = history.user_id;
  d.alerted = state.alerted;
  d.alert_post_index = state.alert_post_index;
  d.posts_seen = state.posts_seen;
  d.inferences = state.inferences;
  d.final_probability = state.prob_trace.empty() ? 0.5 : state.prob_trace.back().probability;
  return run;
}

double inference_fraction(std::span<const Decision> decisions) {
  long long inferences = 0;
  long long seen = 0;
  for (const auto& d : decisions) {
    inferences += d.inferences;
    seen += d.posts_seen;
  }
  if (seen == 0) throw std::invalid_argument("inference_fraction: no posts were processed");
  return static_cast<double>(inferences) / static_cast<double>(seen);
}

}  // namespace erd
