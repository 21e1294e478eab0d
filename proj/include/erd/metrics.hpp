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

// Early-detection and classification metrics.
//
// ERDE_o charges every user:
//   false positive  c_fp     (default: fraction of positive users)
//   false negative  c_fn
//   true positive   c_tp * lc_o(k),  lc_o(k) = 1 - 1 / (1 + e^(k - o))
//   true negative   0
// where k is the number of posts seen when the alert fired. A user that
// never alerts is a negative prediction. Reported as 100 x mean cost.

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "erd/stream.hpp"

namespace erd {

using LabelMap = std::map<std::string, int>;

struct ErdeParams {
  int o = 5;
  double c_fn = 1.0;
  double c_tp = 1.0;
  std::optional<double> c_fp;  // nullopt = positive fraction of the labels used

  void validate() const;
};

double latency_cost(int k, int o);

// Throws erd::Error when a decision has no label.
double erde(std::span<const Decision> decisions, const LabelMap& labels, const ErdeParams& params);

struct Confusion {
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

struct ClassificationScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Confusion counts;
  // Set when the corresponding denominator was zero and the score reported
  // as 0 by convention.
  bool precision_undefined = false;
  bool recall_undefined = false;
};

ClassificationScores classification_scores(std::span<const Decision> decisions,
                                           const LabelMap& labels);
ClassificationScores scores_from_counts(const Confusion& counts);

struct ScoredLabel {
  double score;
  int label;
};

// Mann-Whitney AUC with midranks for ties. Throws std::invalid_argument
// unless both classes are present.
double auc(std::span<const ScoredLabel> scores);

struct EvalReport {
  double erde5 = 0.0;
  double erde50 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;  // absent when only one class is present
  Confusion counts;
  std::optional<double> mean_latency;    // posts seen at alert, true positives
  std::optional<double> median_latency;
  double inference_fraction = 0.0;
  int users = 0;
};

// AUC uses each decision's final probability.
EvalReport evaluate(std::span<const Decision> decisions, const LabelMap& labels,
                    const ErdeParams& base = {});

// A user's probability trace as recorded by the stream run.
struct UserTrace {
  std::string user_id;
  int posts_total = 0;
  std::vector<TracePoint> points;  // ascending post_index
};

// Alerts at the first trace point strictly above threshold.
Decision decision_at_threshold(const UserTrace& trace, double threshold);

struct SweepRow {
  double threshold = 0.0;
  double erde5 = 0.0;
  double erde50 = 0.0;
  double f1 = 0.0;
  int alerts = 0;
};

// Re-simulates alerting for every threshold from recorded traces; no model
// is run. Throws std::invalid_argument on an empty threshold list.
std::vector<SweepRow> threshold_sweep(std::span<const UserTrace> traces, const LabelMap& labels,
                                      std::span<const double> thresholds);

// Parses "lo:hi:step" (inclusive, tolerant to rounding) or a comma list.
std::vector<double> parse_thresholds(const std::string& spec);

}  // namespace erd
