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

#include "erd/cli.hpp"

#include <fmt/format.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "erd/analysis.hpp"
#include "erd/corpus.hpp"
#include "erd/embedding.hpp"
#include "erd/han.hpp"
#include "erd/metrics.hpp"
#include "erd/records.hpp"
#include "erd/screening.hpp"
#include "erd/stream.hpp"
#include "erd/templates.hpp"
#include "json.hpp"

namespace erd::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::string_view kVersion = "0.1.0";

spdlog::logger& log() {
  static const auto logger = [] {
    auto sink = std::make_shared<spdlog::sinks::stderr_sink_mt>();
    auto l = std::make_shared<spdlog::logger>("erd", sink);
    l->set_pattern("%Y-%m-%dT%H:%M:%S.%e level=%l %v");
    return l;
  }();
  return *logger;
}

// ---------------------------------------------------------------------------
// Shared plumbing

struct Globals {
  std::uint64_t seed = 0;
  std::string provider = "local";
  std::string endpoint;
  std::string cache;
  std::optional<int> dim;
  std::string model_id = ProviderConfig{}.model_id;
  int jobs = 1;
  std::string log_level = "info";
  std::string out_dir;
};

struct Run {
  std::string command;
  std::vector<std::string> args;
  Globals globals;
  std::ostream* out = nullptr;
};

ProviderConfig provider_config(const Globals& g, std::optional<int> dim_hint = std::nullopt) {
  ProviderConfig c;
  c.kind = g.provider == "http" ? ProviderKind::kHttp : ProviderKind::kLocal;
  c.dim = g.dim.value_or(dim_hint.value_or(c.dim));
  c.model_id = g.model_id;
  c.endpoint = g.endpoint;
  if (c.endpoint.empty()) {
    if (const char* env = std::getenv(kEndpointEnv)) c.endpoint = env;
  }
  if (c.kind == ProviderKind::kHttp && c.endpoint.empty()) {
    throw UsageError(std::string("--provider http needs --endpoint or ") + kEndpointEnv);
  }
  if (!g.cache.empty()) c.cache_path = g.cache;
  c.max_in_flight = std::max(1, g.jobs);
  return c;
}

fs::path output_path(const Run& run, const std::string& path) {
  fs::path p(path);
  if (!run.globals.out_dir.empty() && p.is_relative()) p = fs::path(run.globals.out_dir) / p;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out.flush()) throw Error("write failed for " + path.string());
}

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "missing";
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

// Written next to the primary output as <out>.manifest.json. Holds no
// clock values, so identical runs write identical manifests.
void write_manifest(const Run& run, const fs::path& primary, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs) {
  json in = json::object();
  for (const auto& p : inputs) in[p.string()] = file_checksum(p);
  json outs = json::object();
  for (const auto& p : outputs) outs[p.string()] = file_checksum(p);
  const json manifest = {{"tool", "erd"},
                         {"version", kVersion},
                         {"command", run.command},
                         {"args", run.args},
                         {"seed", run.globals.seed},
                         {"provider", run.globals.provider},
                         {"inputs", in},
                         {"outputs", outs}};
  write_file(fs::path(primary.string() + ".manifest.json"), manifest.dump(2) + "\n");
}

template <typename F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::max(1, jobs));
  if (threads == 1 || n < 2) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::optional<Split> split_filter(const std::string& name) {
  if (name == "all") return std::nullopt;
  return parse_split(name);
}

std::vector<const UserHistory*> select_users(const Dataset& data, const std::string& split) {
  if (const auto s = split_filter(split)) return data.in_split(*s);
  std::vector<const UserHistory*> all;
  for (const auto& u : data.users) all.push_back(&u);
  return all;
}

TemplateSet template_set(const std::string& name, const std::string& bank_path) {
  try {
    if (bank_path.empty()) return preset(name);
    return preset(name, load_bank(bank_path));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

// Flat key = value settings read with CLI11's TOML reader. Section headers
// are not allowed.
std::map<std::string, std::string> read_flat_config(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) throw UsageError("cannot open config file " + path);
  std::map<std::string, std::string> out;
  for (const auto& item : CLI::ConfigTOML().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty()) throw UsageError(path + ": sections are not supported ('" + item.fullname() + "')");
    if (item.inputs.size() != 1) throw UsageError(path + ": '" + item.name + "' must be a single value");
    out[item.name] = item.inputs.front();
  }
  return out;
}

template <typename T>
T config_number(const std::string& path, const std::string& key, const std::string& value) {
  T v{};
  if (!CLI::detail::lexical_cast(value, v)) {
    throw UsageError(path + ": '" + key + "' has invalid value '" + value + "'");
  }
  return v;
}

template <typename T>
void override_if(T& target, const std::optional<T>& value) {
  if (value) target = *value;
}

std::string csv_number(double v) { return fmt::format("{}", v); }

// ---------------------------------------------------------------------------
// templates

struct TemplatesArgs {
  std::string set = "full";
  std::string bank;
};

int cmd_templates(const Run& run, const TemplatesArgs& a) {
  const auto set = template_set(a.set, a.bank);
  for (const auto& t : set.templates) {
    *run.out << to_string(t.scale) << '\t' << t.id << '\t' << t.dimension << '\t' << t.text << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out;
  std::string config;
  std::optional<int> users, posts;
  std::optional<double> positive_fraction, noise_rate, risky_rate, decoy_rate, mean_gap_days;
  std::optional<double> train_fraction, validation_fraction;
};

int cmd_synth(const Run& run, const SynthArgs& a) {
  SynthConfig c;
  c.seed = run.globals.seed;
  if (!a.config.empty()) {
    const std::map<std::string, std::function<void(const std::string&)>> setters = {
        {"seed", [&](const std::string& v) { c.seed = config_number<std::uint64_t>(a.config, "seed", v); }},
        {"n_users", [&](const std::string& v) { c.n_users = config_number<int>(a.config, "n_users", v); }},
        {"posts_per_user",
         [&](const std::string& v) { c.posts_per_user = config_number<int>(a.config, "posts_per_user", v); }},
        {"positive_fraction",
         [&](const std::string& v) { c.positive_fraction = config_number<double>(a.config, "positive_fraction", v); }},
        {"noise_rate", [&](const std::string& v) { c.noise_rate = config_number<double>(a.config, "noise_rate", v); }},
        {"risky_rate", [&](const std::string& v) { c.risky_rate = config_number<double>(a.config, "risky_rate", v); }},
        {"decoy_rate", [&](const std::string& v) { c.decoy_rate = config_number<double>(a.config, "decoy_rate", v); }},
        {"mean_gap_days",
         [&](const std::string& v) { c.mean_gap_days = config_number<double>(a.config, "mean_gap_days", v); }},
        {"train_fraction",
         [&](const std::string& v) { c.train_fraction = config_number<double>(a.config, "train_fraction", v); }},
        {"validation_fraction", [&](const std::string& v) {
           c.validation_fraction = config_number<double>(a.config, "validation_fraction", v);
         }}};
    for (const auto& [key, value] : read_flat_config(a.config)) {
      const auto it = setters.find(key);
      if (it == setters.end()) throw UsageError(a.config + ": unknown key '" + key + "'");
      it->second(value);
    }
  }
  override_if(c.n_users, a.users);
  override_if(c.posts_per_user, a.posts);
  override_if(c.positive_fraction, a.positive_fraction);
  override_if(c.noise_rate, a.noise_rate);
  override_if(c.risky_rate, a.risky_rate);
  override_if(c.decoy_rate, a.decoy_rate);
  override_if(c.mean_gap_days, a.mean_gap_days);
  override_if(c.train_fraction, a.train_fraction);
  override_if(c.validation_fraction, a.validation_fraction);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto dataset = synth_generate(c);
  std::ostringstream ss;
  write_histories(ss, dataset);
  const auto out = output_path(run, a.out);
  write_file(out, ss.str());
  std::vector<fs::path> inputs;
  if (!a.config.empty()) inputs.emplace_back(a.config);
  write_manifest(run, out, inputs, {out});
  log().info("synth users={} posts={} out={}", dataset.users.size(), dataset.post_count(), out.string());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// screen

struct ScreenArgs {
  std::string input, out;
  std::string set = "full";
  std::string bank;
  std::string split = "all";
  int k = 16;
  int bases = static_cast<int>(kDefaultBases);
};

int cmd_screen(const Run& run, const ScreenArgs& a) {
  const auto data = load_histories(a.input);
  auto provider = make_provider(provider_config(run.globals));
  const TemplateIndex index(template_set(a.set, a.bank), *provider, static_cast<std::size_t>(a.bases));
  const auto users = select_users(data, a.split);

  std::vector<std::string> chunks(users.size());
  std::atomic<std::size_t> selected_total{0};
  parallel_for(users.size(), run.globals.jobs, [&](std::size_t u) {
    const UserHistory& h = *users[u];
    const auto scored = score_history(h, index, *provider);
    const auto keep = top_k_indices(scored, static_cast<std::size_t>(a.k));
    selected_total += keep.size();
    const auto it = data.split.find(h.user_id);
    const std::optional<Split> split = it == data.split.end() ? std::nullopt : std::optional(it->second);
    std::string text;
    std::size_t next = 0;
    for (std::size_t i = 0; i < scored.size(); ++i) {
      const bool selected = next < keep.size() && keep[next] == i;
      if (selected) ++next;
      text += scored_line(scored[i], selected, h.label, split);
      text += '\n';
    }
    chunks[u] = std::move(text);
  });

  const auto out = output_path(run, a.out);
  std::string all;
  for (auto& c : chunks) all += c;
  write_file(out, all);
  write_manifest(run, out, {a.input}, {out});
  log().info("screen users={} selected={} set={} k={} out={}", users.size(), selected_total.load(), a.set, a.k,
             out.string());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string screened, out, config;
  std::string split = "train";
  std::string states = "all";
  int prefix_samples = 8;
  std::optional<int> epochs, batch_size, model_dim, layers, heads, ff_dim, max_posts;
  std::optional<double> learning_rate, weight_decay;
};

han::ModelConfig train_config(const Run& run, const TrainArgs& a) {
  han::ModelConfig c;
  c.seed = run.globals.seed;
  if (!a.config.empty()) {
    const auto& p = a.config;
    const std::map<std::string, std::function<void(const std::string&)>> setters = {
        {"seed", [&](const std::string& v) { c.seed = config_number<std::uint64_t>(p, "seed", v); }},
        {"num_layers", [&](const std::string& v) { c.num_layers = config_number<int>(p, "num_layers", v); }},
        {"num_heads", [&](const std::string& v) { c.num_heads = config_number<int>(p, "num_heads", v); }},
        {"model_dim", [&](const std::string& v) { c.model_dim = config_number<int>(p, "model_dim", v); }},
        {"ff_dim", [&](const std::string& v) { c.ff_dim = config_number<int>(p, "ff_dim", v); }},
        {"max_posts", [&](const std::string& v) { c.max_posts = config_number<int>(p, "max_posts", v); }},
        {"learning_rate",
         [&](const std::string& v) { c.learning_rate = config_number<double>(p, "learning_rate", v); }},
        {"batch_size", [&](const std::string& v) { c.batch_size = config_number<int>(p, "batch_size", v); }},
        {"epochs", [&](const std::string& v) { c.epochs = config_number<int>(p, "epochs", v); }},
        {"beta1", [&](const std::string& v) { c.beta1 = config_number<double>(p, "beta1", v); }},
        {"beta2", [&](const std::string& v) { c.beta2 = config_number<double>(p, "beta2", v); }},
        {"adam_epsilon", [&](const std::string& v) { c.adam_epsilon = config_number<double>(p, "adam_epsilon", v); }},
        {"weight_decay", [&](const std::string& v) { c.weight_decay = config_number<double>(p, "weight_decay", v); }}};
    for (const auto& [key, value] : read_flat_config(p)) {
      const auto it = setters.find(key);
      if (it == setters.end()) throw UsageError(p + ": unknown key '" + key + "'");
      it->second(value);
    }
  }
  override_if(c.epochs, a.epochs);
  override_if(c.batch_size, a.batch_size);
  override_if(c.model_dim, a.model_dim);
  override_if(c.num_layers, a.layers);
  override_if(c.num_heads, a.heads);
  override_if(c.ff_dim, a.ff_dim);
  override_if(c.max_posts, a.max_posts);
  override_if(c.learning_rate, a.learning_rate);
  override_if(c.weight_decay, a.weight_decay);
  return c;
}

int cmd_train(const Run& run, const TrainArgs& a) {
  han::ModelConfig config = train_config(run, a);
  const auto records = load_scored(a.screened);
  const auto wanted = split_filter(a.split);

  struct Sample {
    std::vector<std::size_t> rows;  // into texts, chronological
    int label;
  };
  std::vector<Sample> samples;
  std::vector<std::string> texts;
  std::size_t unlabeled = 0, users = 0;
  int positives = 0;
  Rng rng(mix64(config.seed ^ 0x707265666978ULL));

  std::size_t k = 0;
  for (const auto& [user, recs] : records) {
    k = std::max<std::size_t>(k, std::count_if(recs.begin(), recs.end(), [](const auto& r) { return r.selected; }));
  }
  if (k > static_cast<std::size_t>(config.max_posts)) {
    throw UsageError(fmt::format("{} selects up to {} posts per user but max_posts is {}; screen with a smaller --k",
                                 a.screened, k, config.max_posts));
  }

  for (const auto& [user, recs] : records) {
    const auto split = recs.front().split.value_or(default_split(user));
    if (wanted && split != *wanted) continue;
    if (!recs.front().label) {
      ++unlabeled;
      continue;
    }
    const int label = *recs.front().label;
    ++users;
    positives += label;
    std::vector<ScoredPost> scored(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      scored[i].post = recs[i].post;
      scored[i].risk = recs[i].risk;
    }
    std::vector<std::size_t> selected;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (recs[i].selected) selected.push_back(i);
    }
    if (selected.empty()) continue;
    double floor = 1.0;
    for (const auto i : selected) floor = std::min(floor, recs[i].risk);

    std::vector<std::ptrdiff_t> text_of(recs.size(), -1);
    auto add = [&](const std::vector<std::size_t>& picked, bool prefix) {
      // A positive user's early queue often holds nothing that survives to
      // the final selection yet; labeling such a state positive only
      // teaches the model to memorize filler.
      if (prefix && label == 1) {
        double top = -1.0;
        for (const auto i : picked) top = std::max(top, recs[i].risk);
        if (top < floor) return;
      }
      Sample sample{{}, label};
      for (const auto i : picked) {
        if (text_of[i] < 0) {
          text_of[i] = static_cast<std::ptrdiff_t>(texts.size());
          texts.push_back(embedding_text(recs[i].post));
        }
        sample.rows.push_back(static_cast<std::size_t>(text_of[i]));
      }
      samples.push_back(std::move(sample));
    };
    add(selected, false);
    // Queue states the online detector passes through before it has seen
    // the whole history.
    if (a.states == "all") {
      std::map<std::string, std::size_t> index_of;
      for (std::size_t i = 0; i < recs.size(); ++i) index_of[recs[i].post.post_id] = i;
      EvolvingQueue queue(k);
      for (std::size_t i = 0; i + 1 < recs.size(); ++i) {
        if (!queue.update(scored[i])) continue;
        std::vector<std::size_t> picked;
        for (const auto& e : queue.entries()) picked.push_back(index_of.at(e.post.post_id));
        add(picked, true);
      }
    }
    // Half the random draws stay within the first K posts, where the queue
    // is still filling up.
    for (int s = 0; a.states == "sampled" && s < a.prefix_samples; ++s) {
      const std::size_t span = s % 2 == 0 ? std::min(recs.size(), k) : recs.size();
      const auto len = 1 + static_cast<std::size_t>(rng.below(span));
      add(top_k_indices(std::span<const ScoredPost>(scored.data(), len), k), true);
    }
  }
  if (unlabeled) log().warn("train skipped {} unlabeled users", unlabeled);
  if (samples.empty()) throw Error("no labeled users in split '" + a.split + "' of " + a.screened);

  auto provider = make_provider(provider_config(run.globals));
  const auto vectors = provider->embed_batch(texts);
  config.embed_dim = static_cast<int>(vectors.front().dim());
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  han::UserBatch examples;
  examples.reserve(samples.size());
  for (const auto& sample : samples) {
    std::vector<std::vector<double>> rows;
    for (const auto r : sample.rows) rows.push_back(vectors[r].values);
    examples.push_back(han::make_example(rows, config, sample.label));
  }
  log().info("train users={} positives={} examples={} embed_dim={} params={}", users, positives, examples.size(),
             config.embed_dim, han::parameter_count(han::ModelParams::init(config)));

  const auto result = han::train(examples, config, [](int epoch, double loss) {
    log().info("train epoch={} loss={:.6f}", epoch, loss);
  });
  const auto out = output_path(run, a.out);
  han::save_model(result.params, out);
  std::vector<fs::path> inputs{a.screened};
  if (!a.config.empty()) inputs.emplace_back(a.config);
  write_manifest(run, out, inputs, {out});
  return kExitOk;
}

// ---------------------------------------------------------------------------
// stream

struct StreamArgs {
  std::string model, input, out, stats, traces;
  std::string set = "full";
  std::string bank;
  std::string split = "all";
  int k = 16;
  double threshold = 0.5;
  bool full_trace = false;
};

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
}

int cmd_stream(const Run& run, const StreamArgs& a) {
  auto t0 = Clock::now();
  const auto params = han::load_model(fs::path(a.model));
  const auto& mc = params.config;
  if (a.k > mc.max_posts) {
    throw UsageError(fmt::format("--k {} exceeds the model's max_posts {}", a.k, mc.max_posts));
  }
  const double load_model_ms = ms_since(t0);

  t0 = Clock::now();
  const auto data = load_histories(a.input);
  const auto users = select_users(data, a.split);
  const double load_input_ms = ms_since(t0);

  t0 = Clock::now();
  auto provider = make_provider(provider_config(run.globals, mc.embed_dim));
  const TemplateIndex index(template_set(a.set, a.bank), *provider);
  if (!index.embeddings().empty() && static_cast<int>(index.embeddings().front().dim()) != mc.embed_dim) {
    throw UsageError(fmt::format("model expects {}-dimensional embeddings, provider gives {}", mc.embed_dim,
                                 index.embeddings().front().dim()));
  }
  const double templates_ms = ms_since(t0);

  t0 = Clock::now();
  const HanClassifier model(params);
  StreamOptions options;
  options.k = static_cast<std::size_t>(a.k);
  options.threshold = a.threshold;
  options.full_trace = a.full_trace;
  std::vector<Decision> decisions(users.size());
  std::vector<std::string> trace_lines(users.size());
  std::vector<int> totals(users.size());
  parallel_for(users.size(), run.globals.jobs, [&](std::size_t u) {
    const auto result = run_stream(*users[u], model, index, *provider, options);
    decisions[u] = result.decision;
    totals[u] = result.posts_total;
    if (!a.traces.empty()) trace_lines[u] = trace_line(result, users[u]->label) + "\n";
  });
  const double stream_ms = ms_since(t0);

  const auto out = output_path(run, a.out);
  std::string text;
  for (const auto& d : decisions) text += decision_line(d) + "\n";
  write_file(out, text);
  std::vector<fs::path> outputs{out};
  if (!a.traces.empty()) {
    const auto traces = output_path(run, a.traces);
    std::string all;
    for (const auto& l : trace_lines) all += l;
    write_file(traces, all);
    outputs.push_back(traces);
  }

  long long seen = 0, inferences = 0, total = 0;
  int alerts = 0;
  for (std::size_t u = 0; u < decisions.size(); ++u) {
    seen += decisions[u].posts_seen;
    inferences += decisions[u].inferences;
    total += totals[u];
    alerts += decisions[u].alerted ? 1 : 0;
  }
  const double fraction = seen ? static_cast<double>(inferences) / static_cast<double>(seen) : 0.0;
  if (!a.stats.empty()) {
    const auto stats = output_path(run, a.stats);
    const json j = {{"users", decisions.size()},
                    {"alerts", alerts},
                    {"posts_total", total},
                    {"posts_seen", seen},
                    {"inferences", inferences},
                    {"inference_fraction", fraction},
                    {"k", a.k},
                    {"threshold", a.threshold},
                    {"timings_ms",
                     {{"load_model", load_model_ms},
                      {"load_input", load_input_ms},
                      {"embed_templates", templates_ms},
                      {"stream", stream_ms}}}};
    write_file(stats, j.dump(2) + "\n");
    outputs.push_back(stats);
  }
  write_manifest(run, out, {a.model, a.input}, outputs);
  log().info("stream users={} alerts={} posts_seen={} inferences={} inference_fraction={:.4f} ms={:.0f}",
             decisions.size(), alerts, seen, inferences, fraction, stream_ms);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string decisions, labels, out;
  std::string metrics = "erde5,erde50,f1,auc";
  std::optional<double> c_fp;
};

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(); }

int cmd_evaluate(const Run& run, const EvaluateArgs& a) {
  static const std::vector<std::string> known = {"erde5", "erde50", "f1", "precision", "recall", "auc"};
  const auto wanted = split_list(a.metrics);
  if (wanted.empty()) throw UsageError("--metrics is empty");
  for (const auto& m : wanted) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw UsageError("unknown metric '" + m + "' (known: erde5, erde50, f1, precision, recall, auc)");
    }
  }
  const auto decisions = load_decisions(a.decisions);
  const auto labels = load_labels(a.labels);
  if (decisions.empty()) throw Error(a.decisions + " holds no decisions");
  ErdeParams base;
  base.c_fp = a.c_fp;
  const auto report = evaluate(decisions, labels, base);
  if (!report.auc) log().warn("evaluate: only one class present, auc is undefined");

  json metrics = json::object();
  for (const auto& m : wanted) {
    if (m == "erde5") metrics[m] = report.erde5;
    if (m == "erde50") metrics[m] = report.erde50;
    if (m == "f1") metrics[m] = report.f1;
    if (m == "precision") metrics[m] = report.precision;
    if (m == "recall") metrics[m] = report.recall;
    if (m == "auc") metrics[m] = optional_number(report.auc);
  }
  const json j = {{"users", report.users},
                  {"metrics", metrics},
                  {"confusion",
                   {{"tp", report.counts.tp}, {"fp", report.counts.fp}, {"tn", report.counts.tn},
                    {"fn", report.counts.fn}}},
                  {"latency", {{"mean", optional_number(report.mean_latency)},
                               {"median", optional_number(report.median_latency)}}},
                  {"inference_fraction", report.inference_fraction}};
  const auto out = output_path(run, a.out);
  write_file(out, j.dump(2) + "\n");
  write_manifest(run, out, {a.decisions, a.labels}, {out});
  log().info("evaluate users={} f1={:.4f} erde5={:.4f} erde50={:.4f}", report.users, report.f1, report.erde5,
             report.erde50);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string traces, labels, out;
  std::string thresholds = "0.3:0.8:0.05";
};

int cmd_sweep(const Run& run, const SweepArgs& a) {
  std::vector<double> thresholds;
  try {
    thresholds = parse_thresholds(a.thresholds);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  auto file = load_traces(a.traces);
  const LabelMap labels = a.labels.empty() ? file.labels : load_labels(a.labels);
  if (!file.all_complete) {
    log().warn("sweep: some traces stop at the alert; rerun stream with --full-trace for exact results above "
               "the original threshold");
  }
  const auto rows = threshold_sweep(file.traces, labels, thresholds);
  std::string csv = "threshold,erde5,erde50,f1\n";
  for (const auto& r : rows) {
    csv += fmt::format("{},{},{},{}\n", csv_number(r.threshold), csv_number(r.erde5), csv_number(r.erde50),
                       csv_number(r.f1));
  }
  const auto out = output_path(run, a.out);
  write_file(out, csv);
  std::vector<fs::path> inputs{a.traces};
  if (!a.labels.empty()) inputs.emplace_back(a.labels);
  write_manifest(run, out, inputs, {out});
  return kExitOk;
}

// ---------------------------------------------------------------------------
// lexical

struct LexicalArgs {
  std::string scored, lexicon, out;
  std::string categories = "i,negemo,health";
  std::string users = "auto";
};

json count_json(const CategoryCount& c) {
  return {{"matches", c.matches}, {"tokens", c.total_tokens}, {"proportion", c.proportion}};
}

int cmd_lexical(const Run& run, const LexicalArgs& a) {
  const auto records = load_scored(a.scored);
  const Lexicon lexicon = a.lexicon.empty() ? builtin_lexicon() : load_lexicon(a.lexicon);
  const auto categories = split_list(a.categories);
  if (categories.empty()) throw UsageError("--categories is empty");
  for (const auto& c : categories) {
    if (!lexicon.categories.count(c)) throw UsageError("lexicon has no category '" + c + "'");
  }

  bool any_label = false;
  for (const auto& [user, recs] : records) any_label = any_label || recs.front().label.has_value();
  const bool positives_only = a.users == "positive" || (a.users == "auto" && any_label);
  if (a.users == "positive" && !any_label) throw UsageError("--users positive needs labeled records");

  std::vector<Post> selected, other;
  int users = 0;
  for (const auto& [user, recs] : records) {
    if (positives_only && recs.front().label.value_or(0) != 1) continue;
    ++users;
    for (const auto& r : recs) (r.selected ? selected : other).push_back(r.post);
  }
  if (selected.empty() || other.empty()) {
    throw Error("lexical needs both selected and non-selected posts");
  }

  json cats = json::object();
  for (const auto& c : categories) {
    const auto s = category_proportion(selected, lexicon, c);
    const auto o = category_proportion(other, lexicon, c);
    const auto t = two_proportion_z(s.matches, s.total_tokens, o.matches, o.total_tokens);
    cats[c] = {{"selected", count_json(s)}, {"other", count_json(o)}, {"z", t.z}, {"p_value", t.p_value}};
    log().info("lexical category={} selected={:.5f} other={:.5f} z={:.3f} p={:.3g}", c, s.proportion,
               o.proportion, t.z, t.p_value);
  }
  const json j = {{"users", users},
                  {"user_filter", positives_only ? "positive" : "all"},
                  {"selected_posts", selected.size()},
                  {"other_posts", other.size()},
                  {"categories", cats}};
  const auto out = output_path(run, a.out);
  write_file(out, j.dump(2) + "\n");
  std::vector<fs::path> inputs{a.scored};
  if (!a.lexicon.empty()) inputs.emplace_back(a.lexicon);
  write_manifest(run, out, inputs, {out});
  return kExitOk;
}

// ---------------------------------------------------------------------------
// curve

struct CurveArgs {
  std::string model, input, out, user;
  std::string set = "full";
  std::string bank;
  std::string smoothing = "as-printed";
  int interval_days = 14;
  std::optional<int> k;
};

int cmd_curve(const Run& run, const CurveArgs& a) {
  const auto params = han::load_model(fs::path(a.model));
  const int k = a.k.value_or(params.config.max_posts);
  if (k > params.config.max_posts) {
    throw UsageError(fmt::format("--k {} exceeds the model's max_posts {}", k, params.config.max_posts));
  }
  const auto data = load_histories(a.input);
  if (data.users.empty()) throw Error(a.input + " holds no users");
  const UserHistory* history = a.user.empty() ? &data.users.front() : data.find(a.user);
  if (!history) throw UsageError("user '" + a.user + "' not found in " + a.input);

  auto provider = make_provider(provider_config(run.globals, params.config.embed_dim));
  const TemplateIndex index(template_set(a.set, a.bank), *provider);
  const HanClassifier model(params);

  std::vector<std::pair<std::int64_t, double>> probs;
  for (const auto& group : group_by_interval(*history, a.interval_days)) {
    UserHistory part{history->user_id, group.posts, history->label};
    const auto chosen = select_top_k(part, static_cast<std::size_t>(k), index, *provider);
    probs.emplace_back(group.start, model.predict(chosen));
  }
  const auto variant = a.smoothing == "current" ? SmoothingVariant::kCurrent : SmoothingVariant::kAsPrinted;
  std::string csv = "group_start,pr,s\n";
  for (const auto& p : smooth_scores(probs, variant)) {
    csv += fmt::format("{},{},{}\n", p.start, csv_number(p.probability), csv_number(p.score));
  }
  const auto out = output_path(run, a.out);
  write_file(out, csv);
  write_manifest(run, out, {a.model, a.input}, {out});
  log().info("curve user={} groups={}", history->user_id, probs.size());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  int configs = 20;
  double tolerance = 1e-4;
  bool pooling_only = false;
  std::string out;
};

int cmd_gradcheck(const Run& run, const GradcheckArgs& a) {
  bool ok = true;
  json rows = json::array();
  for (int i = 0; i < a.configs; ++i) {
    auto c = han::small_config(run.globals.seed + static_cast<std::uint64_t>(i));
    if (a.pooling_only) c.num_layers = 0;
    const auto r = han::grad_check(c, a.tolerance);
    ok = ok && r.passed;
    *run.out << fmt::format(
        "config {:2d} layers={} heads={} model_dim={:2d} embed_dim={} max_posts={} checked={:5d} "
        "max_rel={:.3e} worst={} {}\n",
        i, c.num_layers, c.num_heads, c.model_dim, c.embed_dim, c.max_posts, r.checked, r.max_relative_error,
        r.worst_tensor.empty() ? "-" : r.worst_tensor, r.passed ? "ok" : "FAIL");
    rows.push_back({{"seed", c.seed},
                    {"num_layers", c.num_layers},
                    {"num_heads", c.num_heads},
                    {"model_dim", c.model_dim},
                    {"max_posts", c.max_posts},
                    {"max_relative_error", r.max_relative_error},
                    {"worst_tensor", r.worst_tensor},
                    {"passed", r.passed}});
  }
  if (!a.out.empty()) {
    const auto out = output_path(run, a.out);
    write_file(out, json{{"tolerance", a.tolerance}, {"configs", rows}}.dump(2) + "\n");
    write_manifest(run, out, {}, {out});
  }
  if (!ok) log().error("gradcheck: at least one config exceeded tolerance {}", a.tolerance);
  return ok ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

void print_error_chain(std::ostream& err, const std::exception& e, int depth = 0) {
  err << (depth ? "  caused by: " : "error: ") << e.what() << '\n';
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    print_error_chain(err, inner, depth + 1);
  } catch (...) {
  }
}

}  // namespace

std::string_view version() { return kVersion; }

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Early risk detection: template screening, evolving-queue streaming and evaluation", "erd"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Run run;
  run.args = args;
  run.out = &out;
  Globals& g = run.globals;
  app.add_option("--seed", g.seed, "Seed for synth, model init and gradcheck")->capture_default_str();
  app.add_option("--provider", g.provider, "Embedding provider")
      ->check(CLI::IsMember({"local", "http"}))
      ->capture_default_str();
  app.add_option("--endpoint", g.endpoint, std::string("Embedding service URL (default: $") + kEndpointEnv + ")");
  app.add_option("--cache", g.cache, "Persistent embedding cache (JSONL)");
  app.add_option("--dim", g.dim, "Local embedding dimension (default 256, or the model's)")
      ->check(CLI::Range(16, 1 << 16));
  app.add_option("--model-id", g.model_id, "Model id sent to the embedding service")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads for per-user work")->check(CLI::Range(1, 256))->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Directory for relative output paths");

  const auto splits = CLI::IsMember({"all", "train", "validation", "test"});

  // templates
  auto* templates = app.add_subcommand("templates", "Inspect the template bank");
  templates->require_subcommand(1);
  TemplatesArgs ta;
  auto* tlist = templates->add_subcommand("list", "Print the templates of a preset, one per row");
  tlist->add_option("--set", ta.set, "Preset: depress, bdi2, full, hdrs, cesd, phq9 or a '+' combination")
      ->capture_default_str();
  tlist->add_option("--bank", ta.bank, "Template bank file instead of the bundled one")->check(CLI::ExistingFile);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  SynthArgs sa;
  synth->add_option("--out", sa.out, "Output posts file")->required();
  synth->add_option("--config", sa.config, "Flat key = value config file")->check(CLI::ExistingFile);
  synth->add_option("--users", sa.users, "Number of users");
  synth->add_option("--posts", sa.posts, "Posts per user");
  synth->add_option("--positive-fraction", sa.positive_fraction);
  synth->add_option("--noise-rate", sa.noise_rate);
  synth->add_option("--risky-rate", sa.risky_rate, "Share of a positive user's posts that paraphrase templates");
  synth->add_option("--decoy-rate", sa.decoy_rate, "Share of a negative user's posts that are risky decoys");
  synth->add_option("--mean-gap-days", sa.mean_gap_days);
  synth->add_option("--train-fraction", sa.train_fraction);
  synth->add_option("--validation-fraction", sa.validation_fraction);

  // screen
  auto* screen = app.add_subcommand("screen", "Score posts against templates and select the top K per user");
  ScreenArgs sc;
  screen->add_option("--input", sc.input, "Posts file")->required()->check(CLI::ExistingFile);
  screen->add_option("--out", sc.out, "Scored records file")->required();
  screen->add_option("--set", sc.set, "Template preset")->capture_default_str();
  screen->add_option("--bank", sc.bank)->check(CLI::ExistingFile);
  screen->add_option("--k", sc.k, "Posts kept per user")->check(CLI::Range(1, 1 << 20))->capture_default_str();
  screen->add_option("--bases", sc.bases, "Diagnostic bases per post")->check(CLI::Range(1, 1000))->capture_default_str();
  screen->add_option("--split", sc.split)->check(splits)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train the attention classifier on screened posts");
  TrainArgs tr;
  train->add_option("--screened", tr.screened, "Scored records from screen")->required()->check(CLI::ExistingFile);
  train->add_option("--out", tr.out, "Model file")->required();
  train->add_option("--config", tr.config, "Flat key = value model config")->check(CLI::ExistingFile);
  train->add_option("--split", tr.split)->check(splits)->capture_default_str();
  train->add_option("--states", tr.states,
                    "Examples per user: the final selection only, plus random history prefixes, or plus every "
                    "queue state of the online detector")
      ->check(CLI::IsMember({"final", "sampled", "all"}))
      ->capture_default_str();
  train->add_option("--prefix-samples", tr.prefix_samples, "Prefixes per user with --states sampled")
      ->check(CLI::Range(0, 1000))
      ->capture_default_str();
  train->add_option("--epochs", tr.epochs);
  train->add_option("--batch-size", tr.batch_size);
  train->add_option("--lr", tr.learning_rate);
  train->add_option("--weight-decay", tr.weight_decay);
  train->add_option("--model-dim", tr.model_dim);
  train->add_option("--layers", tr.layers);
  train->add_option("--heads", tr.heads);
  train->add_option("--ff-dim", tr.ff_dim);
  train->add_option("--max-posts", tr.max_posts);

  // stream
  auto* stream = app.add_subcommand("stream", "Run online detection over post streams");
  StreamArgs st;
  stream->add_option("--model", st.model)->required()->check(CLI::ExistingFile);
  stream->add_option("--input", st.input, "Posts file")->required()->check(CLI::ExistingFile);
  stream->add_option("--out", st.out, "Decisions file")->required();
  stream->add_option("--stats", st.stats, "Run statistics (JSON)");
  stream->add_option("--traces", st.traces, "Probability traces for sweep");
  stream->add_flag("--full-trace", st.full_trace, "Keep tracing after an alert");
  stream->add_option("--set", st.set)->capture_default_str();
  stream->add_option("--bank", st.bank)->check(CLI::ExistingFile);
  stream->add_option("--k", st.k)->check(CLI::Range(1, 1 << 20))->capture_default_str();
  stream->add_option("--threshold", st.threshold)
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  stream->add_option("--split", st.split)->check(splits)->capture_default_str();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score decisions against labels");
  EvaluateArgs ev;
  eval->add_option("--decisions", ev.decisions)->required()->check(CLI::ExistingFile);
  eval->add_option("--labels", ev.labels, "Any JSONL with user_id and label")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", ev.out, "Report (JSON)")->required();
  eval->add_option("--metrics", ev.metrics)->capture_default_str();
  eval->add_option("--c-fp", ev.c_fp, "False positive cost (default: positive fraction)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Replay recorded traces over a threshold grid");
  SweepArgs sw;
  sweep->add_option("--traces", sw.traces)->required()->check(CLI::ExistingFile);
  sweep->add_option("--labels", sw.labels, "Labels (default: those stored in the traces)")
      ->check(CLI::ExistingFile);
  sweep->add_option("--thresholds", sw.thresholds, "lo:hi:step or a comma list")->capture_default_str();
  sweep->add_option("--out", sw.out, "CSV file")->required();

  // lexical
  auto* lexical = app.add_subcommand("lexical", "Compare lexicon categories in selected and other posts");
  LexicalArgs lx;
  lexical->add_option("--scored", lx.scored)->required()->check(CLI::ExistingFile);
  lexical->add_option("--lexicon", lx.lexicon, "Lexicon file (default: bundled)")->check(CLI::ExistingFile);
  lexical->add_option("--categories", lx.categories)->capture_default_str();
  lexical->add_option("--users", lx.users, "auto uses positive users when labels exist")
      ->check(CLI::IsMember({"auto", "positive", "all"}))
      ->capture_default_str();
  lexical->add_option("--out", lx.out)->required();

  // curve
  auto* curve = app.add_subcommand("curve", "Smoothed depression score over interval groups for one user");
  CurveArgs cv;
  curve->add_option("--model", cv.model)->required()->check(CLI::ExistingFile);
  curve->add_option("--input", cv.input)->required()->check(CLI::ExistingFile);
  curve->add_option("--out", cv.out, "CSV file")->required();
  curve->add_option("--user", cv.user, "User id (default: first user)");
  curve->add_option("--interval-days", cv.interval_days)->check(CLI::Range(1, 3650))->capture_default_str();
  curve->add_option("--set", cv.set)->capture_default_str();
  curve->add_option("--bank", cv.bank)->check(CLI::ExistingFile);
  curve->add_option("--k", cv.k, "Posts per group (default: model max_posts)")->check(CLI::Range(1, 1 << 20));
  curve->add_option("--smoothing", cv.smoothing, "as-printed carries pr(i-1); current carries pr(i)")
      ->check(CLI::IsMember({"as-printed", "current"}))
      ->capture_default_str();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the model gradients");
  GradcheckArgs gc;
  gradcheck->add_option("--configs", gc.configs, "Random small configs")->check(CLI::Range(1, 10000))->capture_default_str();
  gradcheck->add_option("--tolerance", gc.tolerance)->capture_default_str();
  gradcheck->add_flag("--pooling-only", gc.pooling_only, "Force zero transformer layers");
  gradcheck->add_option("--out", gc.out, "Report (JSON)");

  std::vector<const char*> argv{"erd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  log().set_level(spdlog::level::from_str(g.log_level));
  try {
    run.command = app.get_subcommands().front()->get_name();
    if (templates->parsed()) return cmd_templates(run, ta);
    if (synth->parsed()) return cmd_synth(run, sa);
    if (screen->parsed()) return cmd_screen(run, sc);
    if (train->parsed()) return cmd_train(run, tr);
    if (stream->parsed()) {
      if (!(st.threshold > 0.0 && st.threshold < 1.0)) throw UsageError("--threshold must lie in (0, 1)");
      return cmd_stream(run, st);
    }
    if (eval->parsed()) return cmd_evaluate(run, ev);
    if (sweep->parsed()) return cmd_sweep(run, sw);
    if (lexical->parsed()) return cmd_lexical(run, lx);
    if (curve->parsed()) return cmd_curve(run, cv);
    if (gradcheck->parsed()) return cmd_gradcheck(run, gc);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ProviderUnavailable& e) {
    print_error_chain(err, e);
    err << "hint: is the embedding service reachable? (--endpoint or " << kEndpointEnv << ")\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    print_error_chain(err, e);
    return kExitFailure;
  }
  err << app.help();
  return kExitUsage;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace erd::cli
