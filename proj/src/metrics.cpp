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

#include "erd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace erd {
namespace {

int label_of(const LabelMap& labels, const std::string& user_id) {
  const auto it = labels.find(user_id);
  if (it == labels.end()) throw Error("no label for user '" + user_id + "'");
  return it->second;
}

double positive_fraction(std::span<const Decision> decisions, const LabelMap& labels) {
  if (decisions.empty()) return 0.0;
  int positives = 0;
  for (const auto& d : decisions) positives += label_of(labels, d.user_id);
  return static_cast<double>(positives) / static_cast<double>(decisions.size());
}

}  // namespace

void ErdeParams::validate() const {
  if (o < 1) throw std::invalid_argument("ERDE o must be >= 1");
  if (c_fn < 0 || c_tp < 0 || (c_fp && *c_fp < 0)) {
    throw std::invalid_argument("ERDE costs must be >= 0");
  }
}

double latency_cost(int k, int o) {
  return 1.0 - 1.0 / (1.0 + std::exp(static_cast<double>(k - o)));
}

double erde(std::span<const Decision> decisions, const LabelMap& labels, const ErdeParams& params) {
  params.validate();
  if (decisions.empty()) throw std::invalid_argument("erde: no decisions");
  const double c_fp = params.c_fp ? *params.c_fp : positive_fraction(decisions, labels);
  double total = 0.0;
  for (const auto& d : decisions) {
    const int label = label_of(labels, d.user_id);
    if (d.alerted) {
      if (!d.alert_post_index || *d.alert_post_index < 1) {
        throw std::invalid_argument("erde: alerted decision without alert_post_index >= 1");
      }
      total += label ? params.c_tp * latency_cost(*d.alert_post_index, params.o) : c_fp;
    } else if (label) {
      total += params.c_fn;
    }
  }
  return 100.0 * total / static_cast<double>(decisions.size());
}

ClassificationScores scores_from_counts(const Confusion& c) {
  ClassificationScores s;
  s.counts = c;
  if (c.tp + c.fp > 0) {
    s.precision = static_cast<double>(c.tp) / (c.tp + c.fp);
  } else {
    s.precision_undefined = true;
  }
  if (c.tp + c.fn > 0) {
    s.recall = static_cast<double>(c.tp) / (c.tp + c.fn);
  } else {
    s.recall_undefined = true;
  }
  if (s.precision + s.recall > 0) s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

ClassificationScores classification_scores(std::span<const Decision> decisions,
                                           const LabelMap& labels) {
  Confusion c;
  for (const auto& d : decisions) {
    const int label = label_of(labels, d.user_id);
    if (d.alerted) {
      (label ? c.tp : c.fp) += 1;
    } else {
      (label ? c.fn : c.tn) += 1;
    }
  }
  return scores_from_counts(c);
}

double auc(std::span<const ScoredLabel> scores) {
  std::vector<ScoredLabel> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredLabel& a, const ScoredLabel& b) { return a.score < b.score; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) ++j;
    // Ranks i+1..j share the midrank.
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (sorted[t].label) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = sorted.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw std::invalid_argument("auc requires both positive and negative examples");
  }
  const double np = static_cast<double>(positives);
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(negatives));
}

EvalReport evaluate(std::span<const Decision> decisions, const LabelMap& labels,
                    const ErdeParams& base) {
  EvalReport r;
  r.users = static_cast<int>(decisions.size());
  ErdeParams p5 = base;
  p5.o = 5;
  ErdeParams p50 = base;
  p50.o = 50;
  r.erde5 = erde(decisions, labels, p5);
  r.erde50 = erde(decisions, labels, p50);
  const auto cls = classification_scores(decisions, labels);
  r.precision = cls.precision;
  r.recall = cls.recall;
  r.f1 = cls.f1;
  r.counts = cls.counts;

  std::vector<ScoredLabel> scored;
  std::vector<double> latencies;
  bool pos = false, neg = false;
  for (const auto& d : decisions) {
    const int label = label_of(labels, d.user_id);
    scored.push_back({d.final_probability, label});
    (label ? pos : neg) = true;
    if (d.alerted && label) latencies.push_back(*d.alert_post_index);
  }
  if (pos && neg) r.auc = auc(scored);
  if (!latencies.empty()) {
    double sum = 0.0;
    for (const double l : latencies) sum += l;
    r.mean_latency = sum / static_cast<double>(latencies.size());
    std::sort(latencies.begin(), latencies.end());
    const std::size_t mid = latencies.size() / 2;
    r.median_latency = latencies.size() % 2 ? latencies[mid]
                                            : 0.5 * (latencies[mid - 1] + latencies[mid]);
  }
  bool any_posts = false;
  for (const auto& d : decisions) any_posts = any_posts || d.posts_seen > 0;
  if (any_posts) r.inference_fraction = inference_fraction(decisions);
  return r;
}

Decision decision_at_threshold(const UserTrace& trace, double threshold) {
  Decision d;
  d.user_id = trace.user_id;
  d.posts_seen = trace.posts_total;
  for (const auto& point : trace.points) {
    ++d.inferences;
    d.final_probability = point.probability;
    if (point.probability > threshold) {
      d.alerted = true;
      d.alert_post_index = point.post_index;
      d.posts_seen = point.post_index;
      break;
    }
  }
  return d;
}

std::vector<SweepRow> threshold_sweep(std::span<const UserTrace> traces, const LabelMap& labels,
                                      std::span<const double> thresholds) {
  if (thresholds.empty()) throw std::invalid_argument("threshold_sweep: no thresholds");
  std::vector<SweepRow> rows;
  std::vector<Decision> decisions(traces.size());
  for (const double t : thresholds) {
    SweepRow row;
    row.threshold = t;
    for (std::size_t i = 0; i < traces.size(); ++i) {
      decisions[i] = decision_at_threshold(traces[i], t);
      row.alerts += decisions[i].alerted ? 1 : 0;
    }
    row.erde5 = erde(decisions, labels, ErdeParams{5, 1.0, 1.0, std::nullopt});
    row.erde50 = erde(decisions, labels, ErdeParams{50, 1.0, 1.0, std::nullopt});
    row.f1 = classification_scores(decisions, labels).f1;
    rows.push_back(row);
  }
  return rows;
}

std::vector<double> parse_thresholds(const std::string& spec) {
  std::vector<double> out;
  auto parse = [&spec](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw std::invalid_argument("bad threshold list '" + spec + "'");
    return v;
  };
  if (spec.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
    if (parts.size() != 3) throw std::invalid_argument("threshold range must be lo:hi:step");
    const double lo = parse(parts[0]), hi = parse(parts[1]), step = parse(parts[2]);
    if (!(step > 0) || hi < lo) throw std::invalid_argument("threshold range must be lo:hi:step");
    const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
    for (long i = 0; i <= n; ++i) {
      // Round to 12 decimals so 0.3 + 3*0.05 prints as 0.45.
      out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12);
    }
  } else {
    std::stringstream ss(spec);
    for (std::string part; std::getline(ss, part, ',');) out.push_back(parse(part));
  }
  for (const double t : out) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("thresholds must lie in (0, 1)");
  }
  if (out.empty()) throw std::invalid_argument("no thresholds given");
  return out;
}

}  // namespace erd
