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

// End-to-end acceptance checks. One line per criterion:
//   PASS|FAIL <name>: <measurement>
// Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "erd/analysis.hpp"
#include "erd/cli.hpp"
#include "erd/han.hpp"
#include "erd/metrics.hpp"
#include "erd/screening.hpp"
#include "erd/stream.hpp"
#include "json.hpp"

#include <unistd.h>

namespace fs = std::filesystem;
using namespace erd;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

ScoredPost post_with_risk(std::size_t i, double risk) {
  ScoredPost s;
  s.post.user_id = "u";
  s.post.post_id = "p" + std::to_string(100000 + i);
  s.post.timestamp = static_cast<std::int64_t>(i);
  s.post.text = "x";
  s.risk = risk;
  return s;
}

// Counts calls; never alerts.
class Counting : public RiskClassifier {
 public:
  double predict(std::span<const ScoredPost>) const override {
    ++calls;
    return 0.0001;
  }
  mutable int calls = 0;
};

// ---------------------------------------------------------------------------

void queue_equivalence_and_gating() {
  const auto t0 = Clock::now();
  Rng rng(20260101);
  int streams = 0, mismatched = 0, gating_off = 0;
  const std::size_t ks[] = {1, 4, 16};
  for (int s = 0; s < 1000; ++s) {
    const std::size_t k = ks[s % 3];
    const bool ties = (s / 3) % 2 == 0;
    const std::size_t n = rng.below(201);
    std::vector<ScoredPost> posts;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = ties ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform(-1.0, 1.0);
      posts.push_back(post_with_risk(i, r));
    }
    DetectorState state(k);
    EvolvingQueue mirror(k);
    Counting model;
    int mutations = 0;
    for (const auto& p : posts) {
      mutations += mirror.update(p) ? 1 : 0;
      process_post(state, p, model, 0.5);
    }
    std::set<std::string> online, offline;
    for (const auto& e : state.queue.entries()) online.insert(e.post.post_id);
    for (const auto i : top_k_indices(posts, k)) offline.insert(posts[i].post.post_id);
    if (online != offline) ++mismatched;
    if (state.inferences != mutations || model.calls != mutations) ++gating_off;
    ++streams;
  }
  const double secs = seconds_since(t0);
  report("queue/offline equivalence", mismatched == 0 && secs < 10.0,
         std::to_string(streams) + " streams, " + std::to_string(mismatched) + " mismatched, " + fmt(secs, 3) +
             " s (limit 10 s)");

  // Fraction of posts that trigger inference for K=16, n=200, iid risks.
  long long seen = 0, inferences = 0;
  Rng frng(7);
  for (int s = 0; s < 500; ++s) {
    DetectorState state(16);
    Counting model;
    for (std::size_t i = 0; i < 200; ++i) process_post(state, post_with_risk(i, frng.uniform()), model, 0.5);
    seen += state.posts_seen;
    inferences += state.inferences;
  }
  const double fraction = static_cast<double>(inferences) / static_cast<double>(seen);
  double h200 = 0.0, h16 = 0.0;
  for (int i = 1; i <= 200; ++i) h200 += 1.0 / i;
  for (int i = 1; i <= 16; ++i) h16 += 1.0 / i;
  const double expected = (16.0 + 16.0 * (h200 - h16)) / 200.0;
  report("inference gating", gating_off == 0 && fraction < 0.35,
         "inferences == mutations in " + std::to_string(streams - gating_off) + "/" + std::to_string(streams) +
             " streams; K=16 n=200 fraction " + fmt(fraction) + " (limit 0.35, closed form " + fmt(expected) + ")");
}

void gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = han::grad_check(han::small_config(seed), 1e-4);
    if (r.max_relative_error >= worst) {
      worst = r.max_relative_error;
      where = "config " + std::to_string(seed) + " " + r.worst_tensor;
    }
  }
  double pooling_worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto c = han::small_config(seed);
    c.num_layers = 0;
    pooling_worst = std::max(pooling_worst, han::grad_check(c, 1e-6).max_relative_error);
  }
  const double secs = seconds_since(t0);
  report("gradient check", worst <= 1e-4 && pooling_worst <= 1e-6 && secs < 60.0,
         "max relative error " + fmt(worst, 3) + " at " + where + " (limit 1e-4); zero-layer configs " +
             fmt(pooling_worst, 3) + "; " + fmt(secs, 3) + " s (limit 60 s)");
}

void attention_invariants() {
  Rng rng(31);
  double worst_sum = 0.0, worst_masked = 0.0, worst_single = 0.0, worst_pair = 0.0;
  for (int t = 0; t < 200; ++t) {
    const auto c = han::small_config(static_cast<std::uint64_t>(t));
    auto p = han::ModelParams::init(c);
    for (auto& x : p.pool_w) x = rng.normal() * 3.0;
    han::Matrix reps(c.max_posts, c.model_dim);
    for (Eigen::Index i = 0; i < reps.size(); ++i) reps.data()[i] = rng.normal();
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(c.max_posts));
    for (auto& m : mask) m = rng.bernoulli(0.6);
    mask[rng.below(mask.size())] = 1;
    const auto r = han::attention_pool(reps, mask, p);
    worst_sum = std::max(worst_sum, std::abs(r.weights.sum() - 1.0));
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) worst_masked = std::max(worst_masked, std::abs(r.weights(static_cast<Eigen::Index>(i))));
    }
    std::vector<std::uint8_t> one(mask.size(), 0);
    const std::size_t only = rng.below(one.size());
    one[only] = 1;
    const auto s = han::attention_pool(reps, one, p);
    worst_single = std::max({worst_single, std::abs(s.weights(static_cast<Eigen::Index>(only)) - 1.0),
                             (s.user - reps.row(static_cast<Eigen::Index>(only)).transpose()).cwiseAbs().maxCoeff()});
    if (c.max_posts >= 2) {
      reps.row(1) = reps.row(0);
      std::vector<std::uint8_t> two(mask.size(), 0);
      two[0] = two[1] = 1;
      const auto d = han::attention_pool(reps, two, p);
      worst_pair = std::max({worst_pair, std::abs(d.weights(0) - 0.5), std::abs(d.weights(1) - 0.5)});
    }
  }
  report("attention invariants",
         worst_sum <= 1e-6 && worst_masked == 0.0 && worst_single <= 1e-6 && worst_pair <= 1e-6,
         "|sum-1| " + fmt(worst_sum, 3) + ", masked max " + fmt(worst_masked, 3) + ", single-post " +
             fmt(worst_single, 3) + ", identical-pair " + fmt(worst_pair, 3) + " over 200 instances");
}

void erde_cases(const nlohmann::json& ref) {
  auto decide = [](const std::string& u, std::optional<int> k) {
    Decision d;
    d.user_id = u;
    d.alerted = k.has_value();
    d.alert_post_index = k;
    d.posts_seen = k.value_or(10);
    return d;
  };
  const std::vector<Decision> tn = {decide("a", std::nullopt), decide("b", std::nullopt)};
  const double all_tn = erde(tn, LabelMap{{"a", 0}, {"b", 0}}, {5, 1.0, 1.0, std::nullopt});
  const std::vector<Decision> tp = {decide("p", 5)};
  const double tp_at_o = erde(tp, LabelMap{{"p", 1}}, {5, 1.0, 1.0, std::nullopt}) / 100.0;
  const std::vector<Decision> fp = {decide("n", 2)};
  const double fp_cost = erde(fp, LabelMap{{"n", 0}}, {5, 1.0, 1.0, 0.25}) / 100.0;
  const std::vector<Decision> mixed = {decide("n", 2), decide("p", 1)};
  const double m = erde(mixed, LabelMap{{"n", 0}, {"p", 1}}, {5, 1.0, 1.0, std::nullopt});
  const double expect = ref["erde_mixed_two_users"].get<double>();
  report("ERDE unit cases", all_tn == 0.0 && tp_at_o == 0.5 && fp_cost == 0.25 && std::abs(m - expect) <= 1e-9,
         "all-TN " + fmt(all_tn) + ", TP at k=o " + fmt(tp_at_o) + ", FP " + fmt(fp_cost) + " (c_fp 0.25), mixed " +
             fmt(m, 12) + " vs " + fmt(expect, 12));
}

void auc_cases(const nlohmann::json& ref) {
  const std::vector<ScoredLabel> perfect = {{0.9, 1}, {0.7, 1}, {0.2, 0}, {0.1, 0}};
  const std::vector<ScoredLabel> tied = {{0.3, 1}, {0.3, 0}, {0.3, 1}, {0.3, 0}};
  int exact = 0, total = 0;
  for (const auto& fx : ref["auc_fixtures"]) {
    std::vector<ScoredLabel> s;
    const auto scores = fx["scores"].get<std::vector<double>>();
    const auto labels = fx["labels"].get<std::vector<int>>();
    for (std::size_t i = 0; i < scores.size(); ++i) s.push_back({scores[i], labels[i]});
    exact += auc(s) == fx["auc"].get<double>() ? 1 : 0;
    ++total;
  }
  const double a = auc(perfect), b = auc(tied);
  report("AUC", a == 1.0 && b == 0.5 && exact == total && total > 0,
         "perfect " + fmt(a) + ", all-tied " + fmt(b) + ", " + std::to_string(exact) + "/" + std::to_string(total) +
             " six-element fixtures exact");
}

void z_cases(const nlohmann::json& ref) {
  double dz = 0.0, dp = 0.0;
  int n = 0;
  for (const auto& c : ref["ztest_cases"]) {
    const auto t = two_proportion_z(c["x1"], c["n1"], c["x2"], c["n2"]);
    dz = std::max(dz, std::abs(t.z - c["z"].get<double>()));
    dp = std::max(dp, std::abs(t.p_value - c["p"].get<double>()));
    ++n;
  }
  const auto eq = two_proportion_z(25, 100, 50, 200);
  report("z-test", n == 100 && dz <= 1e-6 && dp <= 1e-6 && eq.p_value == 1.0,
         std::to_string(n) + " cases, max |dz| " + fmt(dz, 3) + ", max |dp| " + fmt(dp, 3) +
             " (limit 1e-6); equal proportions p " + fmt(eq.p_value));
}

void smoothing_cases() {
  const bool ends = smoothing_weight(1.0) == 0.5 && smoothing_weight(28.0) == 0.0 && smoothing_weight(45.0) == 0.0;
  Rng rng(77);
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::pair<std::int64_t, double>> s;
    std::int64_t ts = 0;
    const std::size_t n = 1 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i) {
      ts += 1 + static_cast<std::int64_t>(rng.below(40 * kSecondsPerDay));
      s.emplace_back(ts, rng.uniform());
    }
    for (const auto v : {SmoothingVariant::kAsPrinted, SmoothingVariant::kCurrent}) {
      const auto out = smooth_scores(s, v);
      double lo = 1.0, hi = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        lo = std::min(lo, s[i].second);
        hi = std::max(hi, s[i].second);
        if (out[i].score < lo - 1e-12 || out[i].score > hi + 1e-12) ++violations;
      }
    }
  }
  report("smoothing", ends && violations == 0,
         std::string("alpha(1)=0.5 and alpha(>=28)=0 ") + (ends ? "hold" : "violated") + ", " +
             std::to_string(violations) + " bound violations over 1000 random series");
}

// ---------------------------------------------------------------------------
// Synthetic pipeline through the command line.

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct PipelineRun {
  bool ok = false;
  double seconds = 0.0;
  fs::path dir;
};

PipelineRun pipeline(const fs::path& dir, const std::string& jobs) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto p = [&](const char* name) { return (dir / name).string(); };
  const std::vector<std::string> g = {"--seed", "0", "--jobs", jobs, "--log-level", "warn"};
  auto with = [&](std::vector<std::string> rest) {
    std::vector<std::string> a = g;
    a.insert(a.end(), rest.begin(), rest.end());
    return a;
  };
  PipelineRun r;
  r.dir = dir;
  const auto t0 = Clock::now();
  r.ok = cli(with({"synth", "--out", p("posts.jsonl"), "--users", "400", "--posts", "100"})) == 0 &&
         cli(with({"screen", "--input", p("posts.jsonl"), "--out", p("scored.jsonl"), "--set", "full", "--k", "16"})) == 0 &&
         cli(with({"train", "--screened", p("scored.jsonl"), "--out", p("model.bin"), "--epochs", "5"})) == 0 &&
         cli(with({"stream", "--model", p("model.bin"), "--input", p("posts.jsonl"), "--out", p("decisions.jsonl"),
                   "--stats", p("stats.json"), "--set", "full", "--k", "16", "--threshold", "0.5", "--split",
                   "test"})) == 0 &&
         cli(with({"evaluate", "--decisions", p("decisions.jsonl"), "--labels", p("posts.jsonl"), "--out",
                   p("report.json")})) == 0;
  r.seconds = seconds_since(t0);
  return r;
}

void synthetic_pipeline() {
  const fs::path root = fs::temp_directory_path() / ("erd-acceptance-" + std::to_string(::getpid()));
  const auto first = pipeline(root / "a", "1");
  if (!first.ok) {
    report("synthetic end-to-end", false, "pipeline failed after " + fmt(first.seconds, 3) + " s");
    report("lexical property", false, "no scored data");
    report("determinism", false, "no first run");
    fs::remove_all(root);
    return;
  }
  std::ifstream rin(first.dir / "report.json");
  const auto rep = nlohmann::json::parse(rin);
  const double f1 = rep["metrics"]["f1"].get<double>();
  report("synthetic end-to-end", f1 >= 0.90 && first.seconds < 300.0,
         "F1 " + fmt(f1) + " on " + std::to_string(rep["users"].get<int>()) + " held-out users (limit 0.90), ERDE5 " +
             fmt(rep["metrics"]["erde5"].get<double>()) + ", ERDE50 " + fmt(rep["metrics"]["erde50"].get<double>()) +
             ", " + fmt(first.seconds, 3) + " s (limit 300 s)");

  const bool lex_ok = cli({"--log-level", "warn", "lexical", "--scored", (first.dir / "scored.jsonl").string(),
                           "--categories", "i,negemo,health", "--out", (first.dir / "lexical.json").string()}) == 0;
  if (lex_ok) {
    std::ifstream lin(first.dir / "lexical.json");
    const auto lex = nlohmann::json::parse(lin);
    const auto& neg = lex["categories"]["negemo"];
    const double sel = neg["selected"]["proportion"].get<double>();
    const double oth = neg["other"]["proportion"].get<double>();
    const double pv = neg["p_value"].get<double>();
    report("lexical property", sel > oth && pv < 0.001,
           "negemo selected " + fmt(sel) + " vs other " + fmt(oth) + ", p " + fmt(pv, 3) + " (limit 0.001)");
  } else {
    report("lexical property", false, "lexical command failed");
  }

  // Same seeds and configs again, this time with four workers.
  const auto second = pipeline(root / "b", "4");
  const std::string a = slurp(first.dir / "decisions.jsonl");
  const std::string b = second.ok ? slurp(second.dir / "decisions.jsonl") : std::string();
  // And a third stream pass over the first model, single worker.
  const auto third = (root / "a" / "decisions-again.jsonl").string();
  const bool again_ok = cli({"--seed", "0", "--log-level", "warn", "stream", "--model",
                             (first.dir / "model.bin").string(), "--input", (first.dir / "posts.jsonl").string(),
                             "--out", third, "--set", "full", "--k", "16", "--threshold", "0.5", "--split",
                             "test"}) == 0;
  const std::string c = again_ok ? slurp(third) : std::string();
  const bool same_model = slurp(first.dir / "model.bin") == slurp(second.dir / "model.bin");
  report("determinism", second.ok && again_ok && !a.empty() && a == b && a == c,
         std::string("decisions.jsonl ") + (a == b ? "identical" : "differs") + " between --jobs 1 and --jobs 4 full runs, " +
             (a == c ? "identical" : "differs") + " on repeat; model files " + (same_model ? "identical" : "differ"));
  fs::remove_all(root);
}

}  // namespace

int main() {
  std::ifstream in(fs::path(ERD_TEST_DATA) / "oracle_values.json");
  const auto ref = nlohmann::json::parse(in);
  queue_equivalence_and_gating();
  gradient_check();
  attention_invariants();
  erde_cases(ref);
  auc_cases(ref);
  z_cases(ref);
  smoothing_cases();
  synthetic_pipeline();
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
