#include "seqopt/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

namespace seqopt {

namespace {

using nlohmann::json;

/// Reads known keys from one JSON object and rejects the rest, so that
/// misspelled fields surface as errors naming the full path.
class FieldReader {
 public:
  FieldReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = convert<T>(*it, key);
    } catch (const json::exception&) {
      throw ConfigError(field(key) + ": wrong type");
    }
  }

  bool has(const char* key) { return obj_.contains(key); }
  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key.c_str()) + ": unknown field");
    }
  }

  std::string field(const char* key) const { return path_.empty() ? std::string(key) : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  template <typename T>
  T convert(const json& v, const char* key) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field(key) + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
      if (v.is_number_integer()) {
        const auto x = v.get<std::int64_t>();
        if (std::is_unsigned_v<T> && x < 0) throw ConfigError(field(key) + ": expected a nonnegative integer");
        return static_cast<T>(x);
      }
      throw ConfigError(field(key) + ": expected an integer");
    } else {
      return v.get<T>();
    }
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

json agent_json(const AgentConfig& a) {
  return json{{"alpha", a.alpha},
              {"gamma", a.gamma},
              {"prompt_length", a.prompt_length},
              {"top_k", a.top_k},
              {"buffer_capacity", a.buffer_capacity},
              {"batch_episodes", a.batch_episodes},
              {"polyak_rho", a.polyak_rho},
              {"sample_top_k", a.sample_top_k},
              {"learning_rate", a.learning_rate}};
}

json model_json(const ModelSpec& m, std::uint64_t adapter_seed) {
  return json{{"vocab_size", m.vocab_size}, {"embed_dim", m.embed_dim},       {"input_dim", m.input_dim},
              {"hidden", m.hidden},         {"encoder_seed", m.encoder_seed}, {"head_seed", m.head_seed},
              {"tabular", m.tabular},       {"activation", to_string(m.activation)},
              {"adapter_seed", adapter_seed}};
}

json environment_json(const EnvironmentSpec& e) {
  json j{{"kind", e.kind}, {"seed", e.seed}, {"reseed_per_run", e.reseed_per_run}};
  if (e.kind == "hidden_embedding" || e.kind == "classifier") {
    j["plant_top_k"] = e.plant_top_k;
    j["text_input_dim"] = e.text_input_dim;
    j["text_state_dim"] = e.text_state_dim;
  }
  if (e.kind == "classifier") {
    const auto& c = e.classifier;
    j["classes"] = c.classes;
    j["examples_per_class"] = c.examples_per_class;
    j["example_dim"] = c.example_dim;
    j["logit_scale"] = c.logit_scale;
    j["lambda1"] = c.lambda1;
    j["lambda2"] = c.lambda2;
    j["aggregate"] = c.aggregate == RewardAggregate::mean ? "mean" : "sum";
  }
  if (e.kind == "tabular") {
    j["source"] = e.tabular_source;
    if (e.tabular_source == "file") j["file"] = e.file;
    if (e.tabular_source == "planted_count") j["target_token"] = e.target_token;
  }
  if (e.kind == "bridge") {
    j["command"] = e.command;
    j["timeout_ms"] = e.timeout_ms;
  }
  return j;
}

void read_environment(const json& j, EnvironmentSpec& e) {
  FieldReader r(j, "environment");
  r.read("kind", e.kind);
  r.read("seed", e.seed);
  r.read("reseed_per_run", e.reseed_per_run);
  r.read("plant_top_k", e.plant_top_k);
  r.read("text_input_dim", e.text_input_dim);
  r.read("text_state_dim", e.text_state_dim);
  auto& c = e.classifier;
  r.read("classes", c.classes);
  r.read("examples_per_class", c.examples_per_class);
  r.read("example_dim", c.example_dim);
  r.read("logit_scale", c.logit_scale);
  r.read("lambda1", c.lambda1);
  r.read("lambda2", c.lambda2);
  std::string aggregate = "mean";
  r.read("aggregate", aggregate);
  if (aggregate != "mean" && aggregate != "sum") throw ConfigError("environment.aggregate: expected mean or sum");
  c.aggregate = aggregate == "mean" ? RewardAggregate::mean : RewardAggregate::sum;
  r.read("source", e.tabular_source);
  r.read("file", e.file);
  r.read("target_token", e.target_token);
  r.read("command", e.command);
  r.read("timeout_ms", e.timeout_ms);
  r.finish();
}

void read_model(const json& j, ModelSpec& m, std::uint64_t& adapter_seed) {
  FieldReader r(j, "model");
  r.read("vocab_size", m.vocab_size);
  r.read("embed_dim", m.embed_dim);
  r.read("input_dim", m.input_dim);
  r.read("hidden", m.hidden);
  r.read("encoder_seed", m.encoder_seed);
  r.read("head_seed", m.head_seed);
  r.read("tabular", m.tabular);
  std::string act = to_string(m.activation);
  r.read("activation", act);
  if (act == "relu") {
    m.activation = Activation::relu;
  } else if (act == "identity") {
    m.activation = Activation::identity;
  } else {
    throw ConfigError("model.activation: expected relu or identity");
  }
  r.read("adapter_seed", adapter_seed);
  r.finish();
}

void read_agent(const json& j, AgentConfig& a) {
  FieldReader r(j, "agent");
  if (r.has("alpha") && r.has("reward_scale")) throw ConfigError("agent: give alpha or reward_scale, not both");
  r.read("alpha", a.alpha);
  if (r.has("reward_scale")) {
    double scale = 0.0;
    r.read("reward_scale", scale);
    if (!(scale > 0)) throw ConfigError("agent.reward_scale must be positive");
    a.alpha = 1.0 / scale;
  }
  r.read("gamma", a.gamma);
  r.read("prompt_length", a.prompt_length);
  r.read("top_k", a.top_k);
  r.read("buffer_capacity", a.buffer_capacity);
  r.read("batch_episodes", a.batch_episodes);
  r.read("polyak_rho", a.polyak_rho);
  r.read("sample_top_k", a.sample_top_k);
  r.read("learning_rate", a.learning_rate);
  r.finish();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

// --- configuration ----------------------------------------------------------

void ExperimentConfig::validate() const {
  static const std::set<std::string> kinds = {"hidden_embedding", "classifier", "tabular", "bridge"};
  const auto& e = environment;
  if (!kinds.count(e.kind)) throw ConfigError("environment.kind: unknown kind '" + e.kind + "'");
  model.validate();
  agent_for(0).validate(model.vocab_size);
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (e.kind == "hidden_embedding" || e.kind == "classifier") {
    if (e.plant_top_k < 1 || e.plant_top_k > model.vocab_size) {
      throw ConfigError("environment.plant_top_k must lie in [1, model.vocab_size]");
    }
    if (e.text_input_dim < 1 || e.text_state_dim < 1) throw ConfigError("environment.text_*_dim must be >= 1");
  }
  if (e.kind == "classifier") {
    const auto& c = e.classifier;
    if (c.classes < 2) throw ConfigError("environment.classes must be >= 2");
    if (c.examples_per_class < 1) throw ConfigError("environment.examples_per_class must be >= 1");
    if (c.example_dim < 1) throw ConfigError("environment.example_dim must be >= 1");
  }
  if (e.kind == "tabular") {
    if (e.tabular_source != "random" && e.tabular_source != "planted_count" && e.tabular_source != "file") {
      throw ConfigError("environment.source: expected random, planted_count or file");
    }
    if (e.tabular_source == "file" && e.file.empty()) throw ConfigError("environment.file: required for source=file");
    if (e.tabular_source == "planted_count" && (e.target_token < 0 || e.target_token >= model.vocab_size)) {
      throw ConfigError("environment.target_token outside the vocabulary");
    }
  }
  if (e.kind == "bridge") {
    if (e.command.empty()) throw ConfigError("environment.command: required for kind=bridge");
    if (e.timeout_ms < 1) throw ConfigError("environment.timeout_ms must be >= 1");
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  return json{{"environment", environment_json(environment)},
              {"model", model_json(model, adapter_seed)},
              {"agent", agent_json(agent)},
              {"variant", variant},
              {"iterations", iterations},
              {"seeds", seeds},
              {"out_dir", out_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  FieldReader r(j, "");
  if (const json* e = r.child("environment")) read_environment(*e, c.environment);
  if (const json* m = r.child("model")) read_model(*m, c.model, c.adapter_seed);
  if (const json* a = r.child("agent")) read_agent(*a, c.agent);
  r.read("variant", c.variant);
  r.read("iterations", c.iterations);
  if (const json* s = r.child("seeds")) {
    if (!s->is_array()) throw ConfigError("seeds: expected an array of nonnegative integers");
    c.seeds.clear();
    for (const auto& v : *s) {
      if (!v.is_number_unsigned()) throw ConfigError("seeds: expected an array of nonnegative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  r.read("out_dir", c.out_dir);
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto config = from_json(j);
  // A relative table file is taken relative to the config file.
  auto& file = config.environment.file;
  if (!file.empty() && std::filesystem::path(file).is_relative()) {
    file = (path.parent_path() / file).lexically_normal().string();
  }
  return config;
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("out_dir");
  return hex64(fnv1a(j.dump()));
}

AgentConfig ExperimentConfig::agent_for(std::uint64_t seed) const {
  AgentConfig a = make_variant(variant, agent);
  // The variant's exploration width means "at most"; a smaller vocabulary keeps every token.
  a.sample_top_k = std::min(a.sample_top_k, model.vocab_size);
  a.seed = seed;
  return a;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, comma - pos);
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || end != item.data() + item.size()) {
      throw ConfigError("seed list: cannot parse '" + item + "' as a nonnegative integer");
    }
    seeds.push_back(v);
    pos = comma + 1;
  }
  return seeds;
}

void apply_seed_override(ExperimentConfig& config) {
  if (const char* env = std::getenv("SEQOPT_SEED"); env != nullptr && *env != '\0') {
    config.seeds = parse_seed_list(env);
  }
}

// --- running ----------------------------------------------------------------

QFunctionModel make_policy_model(const ExperimentConfig& config, std::uint64_t seed) {
  return QFunctionModel::create(config.model, config.adapter_seed + seed, config.agent.learning_rate);
}

std::unique_ptr<RewardOracle> make_environment(const ExperimentConfig& config, std::uint64_t seed,
                                               const QFunctionModel& policy) {
  const auto& e = config.environment;
  const Index vocab = config.model.vocab_size;
  const Index length = config.agent.prompt_length;
  const std::uint64_t env_seed = e.seed + (e.reseed_per_run ? seed : 0);

  if (e.kind == "hidden_embedding") {
    FrozenEncoder text(vocab, e.text_input_dim, e.text_state_dim, env_seed);
    return std::make_unique<HiddenEmbeddingEnv>(std::move(text),
                                                plant_fluent_sequence(policy, length, e.plant_top_k, env_seed));
  }
  if (e.kind == "classifier") {
    ClassifierSpec spec = e.classifier;
    spec.seed = env_seed;
    spec.text_dim = e.text_state_dim;
    return std::make_unique<SyntheticClassifierEnv>(vocab, spec,
                                                    plant_fluent_sequence(policy, length, e.plant_top_k, env_seed));
  }
  if (e.kind == "tabular") {
    if (e.tabular_source == "random") return std::make_unique<TabularEnv>(TabularEnv::random(vocab, length, env_seed));
    if (e.tabular_source == "planted_count") {
      return std::make_unique<TabularEnv>(TabularEnv::planted_count(vocab, length, e.target_token));
    }
    auto table = TabularEnv::load(e.file, vocab);
    if (table.prompt_length() != length) {
      throw ConfigError("environment.file: sequence length " + std::to_string(table.prompt_length()) +
                        " != agent.prompt_length " + std::to_string(length));
    }
    if (!table.complete()) throw ConfigError("environment.file: table does not cover every sequence");
    return std::make_unique<TabularEnv>(std::move(table));
  }
  BridgeSpec spec;
  spec.command = e.command;
  spec.timeout = std::chrono::milliseconds(e.timeout_ms);
  spec.vocab_size = vocab;
  spec.prompt_length = length;
  return std::make_unique<BridgeEnv>(std::move(spec));
}

RunRecord run_single(const ExperimentConfig& config, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config_hash = config.hash();
  rec.variant = config.variant;
  rec.seed = seed;

  QFunctionModel policy = make_policy_model(config, seed);
  auto oracle = make_environment(config, seed, policy);
  AgentState state(std::move(policy), config.agent_for(seed));
  rec.curve.reserve(static_cast<std::size_t>(config.iterations));
  try {
    for (Index it = 0; it < config.iterations; ++it) {
      const auto step = train(state, *oracle, 1);
      rec.curve.push_back(step.front());
    }
  } catch (const EnvironmentError& e) {
    rec.error = e.what();
  }
  if (!rec.curve.empty()) {
    rec.final_greedy = rec.curve.back().greedy_reward;
    rec.best_so_far = best_so_far_curve(rec.curve).back();
  }
  rec.wall_seconds = seconds_since(t0);
  return rec;
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::size_t n = config.seeds.size();
  std::vector<RunRecord> records(n);
  std::vector<std::exception_ptr> failures(n);
  {
    std::vector<std::jthread> workers;
    workers.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      workers.emplace_back([&, i] {
        try {
          records[i] = run_single(config, config.seeds[i]);
        } catch (...) {
          failures[i] = std::current_exception();
        }
      });
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  if (!config.out_dir.empty()) {
    const std::filesystem::path dir(config.out_dir);
    std::filesystem::create_directories(dir);
    json runs = json::array();
    for (const auto& r : records) {
      const std::string tag = "seed" + std::to_string(r.seed);
      write_text_file(dir / ("curve_" + tag + ".csv"), curve_csv(r.curve));
      write_text_file(dir / ("summary_" + tag + ".json"), summary_json(r).dump(2) + "\n");
      runs.push_back(summary_json(r));
    }
    json summary{{"config_hash", config.hash()},
                 {"config", config.to_json()},
                 {"iterations_note", "one iteration = one exploratory oracle call; greedy evaluations counted separately"},
                 {"runs", runs}};
    write_text_file(dir / "summary.json", summary.dump(2) + "\n");
  }
  return records;
}

// --- curves and statistics --------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw InternalError("format_double: conversion failed");
  return std::string(buf, end);
}

std::string curve_csv(const LearningCurve& curve) {
  std::string out = kCurveHeader;
  out += '\n';
  for (const auto& r : curve) {
    out += std::to_string(r.iteration);
    out += ',' + format_double(r.episode_reward);
    out += ',' + format_double(r.greedy_reward);
    out += ',' + format_double(r.mean_loss);
    out += ',' + format_double(r.mean_support_size);
    out += ',' + std::to_string(r.buffer_size);
    out += '\n';
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("write failed for " + path.string());
}

nlohmann::json summary_json(const RunRecord& r) {
  json j{{"config_hash", r.config_hash},
         {"variant", r.variant},
         {"seed", r.seed},
         {"iterations_completed", r.curve.size()},
         {"final_greedy_reward", r.final_greedy},
         {"best_so_far_reward", r.best_so_far},
         {"wall_seconds", r.wall_seconds}};
  j["error"] = r.error ? json(*r.error) : json(nullptr);
  return j;
}

std::vector<double> best_so_far_curve(const LearningCurve& curve) {
  std::vector<double> out;
  out.reserve(curve.size());
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& r : curve) {
    best = std::max({best, r.episode_reward, r.greedy_reward});
    out.push_back(best);
  }
  return out;
}

Metric parse_metric(const std::string& name) {
  if (name == "final_greedy") return Metric::final_greedy;
  if (name == "best_so_far") return Metric::best_so_far;
  if (name == "auc") return Metric::auc;
  throw ConfigError("unknown metric '" + name + "' (expected final_greedy, best_so_far or auc)");
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::final_greedy: return "final_greedy";
    case Metric::best_so_far: return "best_so_far";
    case Metric::auc: return "auc";
  }
  return "?";
}

std::vector<double> metric_series(const LearningCurve& curve, Metric m) {
  if (m != Metric::final_greedy) return best_so_far_curve(curve);
  std::vector<double> out;
  out.reserve(curve.size());
  for (const auto& r : curve) out.push_back(r.greedy_reward);
  return out;
}

double metric_value(const LearningCurve& curve, Metric m) {
  if (curve.empty()) throw DomainError("metric of an empty curve");
  const auto series = metric_series(curve, m);
  if (m != Metric::auc) return series.back();
  double sum = 0.0;
  for (double v : series) sum += v;
  return sum / double(series.size());
}

MeanSe mean_and_se(const std::vector<double>& values) {
  if (values.empty()) throw DomainError("mean_and_se: no values");
  MeanSe s;
  s.n = static_cast<Index>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= double(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.se = std::sqrt(ss / double(s.n - 1)) / std::sqrt(double(s.n));
  }
  return s;
}

// --- comparisons and sweeps -------------------------------------------------

std::string ComparisonReport::table_text() const {
  std::ostringstream os;
  os << "# one iteration = one exploratory oracle call; greedy evaluations counted separately\n";
  os << std::left << std::setw(24) << "variant" << std::setw(14) << "metric" << std::setw(6) << "n" << std::setw(14)
     << "mean" << "se\n";
  for (const auto& v : variants) {
    os << std::left << std::setw(24) << v.variant << std::setw(14) << to_string(metric) << std::setw(6) << v.stats.n
       << std::setw(14) << format_double(v.stats.mean) << format_double(v.stats.se) << "\n";
  }
  return os.str();
}

ComparisonReport compare_variants(const std::vector<ExperimentConfig>& configs, Metric metric,
                                  const std::string& out_dir) {
  if (configs.empty()) throw ConfigError("compare: no configurations given");
  const auto& ref = configs.front();
  for (const auto& c : configs) {
    c.validate();
    if (environment_json(c.environment) != environment_json(ref.environment)) {
      throw ConfigError("compare: environments differ between configurations");
    }
    if (model_json(c.model, c.adapter_seed) != model_json(ref.model, ref.adapter_seed)) {
      throw ConfigError("compare: model sections differ between configurations");
    }
    if (c.agent.prompt_length != ref.agent.prompt_length) {
      throw ConfigError("compare: agent.prompt_length differs between configurations");
    }
    if (c.seeds != ref.seeds) throw ConfigError("compare: seed lists differ between configurations");
    if (c.iterations != ref.iterations) throw ConfigError("compare: iteration budgets differ between configurations");
  }

  ComparisonReport report;
  report.metric = metric;
  report.long_csv = "variant,seed,iteration,value\n";
  report.table_csv = "variant,metric,n,mean,se\n";
  std::set<std::string> labels;
  for (const auto& c0 : configs) {
    std::string label = c0.variant;
    for (int k = 2; labels.count(label); ++k) label = c0.variant + "_" + std::to_string(k);
    labels.insert(label);

    ExperimentConfig c = c0;
    c.out_dir = out_dir.empty() ? "" : (std::filesystem::path(out_dir) / label).string();
    auto runs = run_experiment(c);

    VariantSummary vs;
    vs.variant = label;
    for (const auto& r : runs) {
      if (r.error) throw EnvironmentError("compare: run " + label + " seed " + std::to_string(r.seed) + " failed: " + *r.error);
      vs.seeds.push_back(r.seed);
      vs.values.push_back(metric_value(r.curve, metric));
      const auto series = metric_series(r.curve, metric);
      for (std::size_t i = 0; i < series.size(); ++i) {
        report.long_csv += label + ',' + std::to_string(r.seed) + ',' + std::to_string(r.curve[i].iteration) + ',' +
                           format_double(series[i]) + '\n';
      }
    }
    vs.stats = mean_and_se(vs.values);
    report.table_csv += label + ',' + to_string(metric) + ',' + std::to_string(vs.stats.n) + ',' +
                        format_double(vs.stats.mean) + ',' + format_double(vs.stats.se) + '\n';
    report.variants.push_back(std::move(vs));
    report.runs.push_back(std::move(runs));
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text_file(std::filesystem::path(out_dir) / "comparison_long.csv", report.long_csv);
    write_text_file(std::filesystem::path(out_dir) / "comparison.csv", report.table_csv);
    write_text_file(std::filesystem::path(out_dir) / "comparison.txt", report.table_text());
  }
  return report;
}

ExperimentConfig with_parameter(const ExperimentConfig& config, const std::string& parameter, double value) {
  ExperimentConfig c = config;
  auto as_count = [&](const char* name) {
    if (!(value >= 1) || value != std::floor(value)) {
      throw ConfigError(std::string("sweep: ") + name + " values must be positive integers");
    }
    return static_cast<Index>(value);
  };
  if (parameter == "prompt_length") {
    c.agent.prompt_length = as_count("prompt_length");
  } else if (parameter == "top_k") {
    c.agent.top_k = as_count("top_k");
  } else if (parameter == "reward_scale") {
    if (!(value > 0)) throw ConfigError("sweep: reward_scale values must be positive");
    c.agent.alpha = 1.0 / value;
  } else {
    throw ConfigError("sweep: unknown parameter '" + parameter + "' (expected prompt_length, top_k or reward_scale)");
  }
  c.validate();
  return c;
}

SweepReport sweep(const ExperimentConfig& config, const std::string& parameter, const std::vector<double>& values,
                  Metric metric) {
  if (values.empty()) throw ConfigError("sweep: no values given");
  SweepReport report;
  report.parameter = parameter;
  report.metric = metric;
  report.csv = "parameter,value,metric,n,mean,se\n";

  std::vector<ExperimentConfig> configs;
  for (double v : values) configs.push_back(with_parameter(config, parameter, v));
  for (std::size_t i = 0; i < values.size(); ++i) {
    ExperimentConfig c = configs[i];
    if (!config.out_dir.empty()) {
      c.out_dir = (std::filesystem::path(config.out_dir) / (parameter + "_" + format_double(values[i]))).string();
    }
    SweepRow row;
    row.value = values[i];
    for (const auto& r : run_experiment(c)) {
      if (r.error) throw EnvironmentError("sweep: seed " + std::to_string(r.seed) + " failed: " + *r.error);
      row.metrics.push_back(metric_value(r.curve, metric));
    }
    row.stats = mean_and_se(row.metrics);
    report.csv += parameter + ',' + format_double(row.value) + ',' + to_string(metric) + ',' +
                  std::to_string(row.stats.n) + ',' + format_double(row.stats.mean) + ',' +
                  format_double(row.stats.se) + '\n';
    report.rows.push_back(std::move(row));
  }
  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    write_text_file(std::filesystem::path(config.out_dir) / ("sweep_" + parameter + ".csv"), report.csv);
  }
  return report;
}

}  // namespace seqopt
