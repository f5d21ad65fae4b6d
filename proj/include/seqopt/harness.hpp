#pragma once

// Experiment runner: JSON configuration, one independent agent per seed,
// learning-curve CSVs and summaries, variant comparisons and grid sweeps.
//
// One outer iteration makes exactly one exploratory oracle call; the greedy
// evaluation recorded alongside it is a second call, counted separately.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqopt/agents.hpp"
#include "seqopt/environments.hpp"
#include "seqopt/frozen_lm.hpp"

namespace seqopt {

/// Environment section. Which fields matter depends on `kind`:
/// hidden_embedding, classifier, tabular or bridge.
struct EnvironmentSpec {
  std::string kind = "hidden_embedding";
  /// Seed of the environment's private parts; offset by the run seed when
  /// reseed_per_run is set, so each seed is a distinct problem instance.
  std::uint64_t seed = 777;
  bool reseed_per_run = true;

  // hidden_embedding and classifier: planted target drawn from the top
  // plant_top_k base logits of the policy model.
  Index plant_top_k = 50;
  Index text_input_dim = 32;
  Index text_state_dim = 32;

  // classifier
  ClassifierSpec classifier;

  // tabular: source is "random", "planted_count" or "file"
  std::string tabular_source = "random";
  std::string file;
  Token target_token = 0;

  // bridge
  std::vector<std::string> command;
  Index timeout_ms = 10000;
};

struct ExperimentConfig {
  EnvironmentSpec environment;
  ModelSpec model;
  std::uint64_t adapter_seed = 100;  // offset by the run seed
  AgentConfig agent;                 // backup and flags come from `variant`
  std::string variant = "pin";
  Index iterations = 1000;
  std::vector<std::uint64_t> seeds = {0};
  std::string out_dir;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// FNV-1a over the canonical JSON form, excluding out_dir.
  std::string hash() const;
  /// The agent configuration actually used for `seed`.
  AgentConfig agent_for(std::uint64_t seed) const;
};

/// Replaces config.seeds with the comma-separated list in SEQOPT_SEED, if set.
void apply_seed_override(ExperimentConfig& config);
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

struct RunRecord {
  std::string config_hash;
  std::string variant;
  std::uint64_t seed = 0;
  LearningCurve curve;
  double final_greedy = 0.0;
  double best_so_far = 0.0;
  double wall_seconds = 0.0;
  std::optional<std::string> error;  // set when the run stopped early
};

/// Policy model for a seed: shared frozen parts, seed-dependent adapter.
QFunctionModel make_policy_model(const ExperimentConfig& config, std::uint64_t seed);
std::unique_ptr<RewardOracle> make_environment(const ExperimentConfig& config, std::uint64_t seed,
                                               const QFunctionModel& policy);

/// Runs one seed without writing files. Environment failures end the run and
/// are reported in `error` with the partial curve kept.
RunRecord run_single(const ExperimentConfig& config, std::uint64_t seed);

/// All seeds in parallel, one worker each. When out_dir is set, writes
/// curve_seed<S>.csv and summary_seed<S>.json per seed and summary.json.
std::vector<RunRecord> run_experiment(const ExperimentConfig& config);

// --- curves and statistics --------------------------------------------------

inline constexpr const char* kCurveHeader =
    "iteration,episode_reward,greedy_reward,mean_loss,mean_support_size,buffer_size";

std::string format_double(double v);
std::string curve_csv(const LearningCurve& curve);
void write_text_file(const std::filesystem::path& path, const std::string& text);
nlohmann::json summary_json(const RunRecord& record);

/// Running maximum over every reward observed so far, exploratory and greedy.
std::vector<double> best_so_far_curve(const LearningCurve& curve);

enum class Metric { final_greedy, best_so_far, auc };
Metric parse_metric(const std::string& name);
std::string to_string(Metric m);

/// Per-iteration series behind a metric: the greedy reward for final_greedy,
/// the best-so-far curve otherwise.
std::vector<double> metric_series(const LearningCurve& curve, Metric m);
/// final_greedy and best_so_far take the series' last value; auc its mean.
double metric_value(const LearningCurve& curve, Metric m);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  // sample standard deviation (n - 1) over sqrt(n); 0 for n = 1
  Index n = 0;
};
MeanSe mean_and_se(const std::vector<double>& values);

// --- comparisons and sweeps -------------------------------------------------

struct VariantSummary {
  std::string variant;
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;  // one per seed
  MeanSe stats;
};

struct ComparisonReport {
  Metric metric = Metric::auc;
  std::vector<VariantSummary> variants;
  std::string long_csv;   // variant,seed,iteration,value
  std::string table_csv;  // variant,metric,n,mean,se
  std::vector<std::vector<RunRecord>> runs;

  std::string table_text() const;
};

/// Runs every config and summarizes per variant. Configs must agree on
/// everything except agent settings and variant. Files are written to
/// `out_dir` when it is nonempty.
ComparisonReport compare_variants(const std::vector<ExperimentConfig>& configs, Metric metric,
                                  const std::string& out_dir = "");

struct SweepRow {
  double value = 0.0;
  std::vector<double> metrics;  // one per seed
  MeanSe stats;
};

struct SweepReport {
  std::string parameter;
  Metric metric = Metric::auc;
  std::vector<SweepRow> rows;
  std::string csv;  // parameter,value,metric,n,mean,se
};

/// Parameter is prompt_length, top_k or reward_scale (sets alpha = 1/value).
ExperimentConfig with_parameter(const ExperimentConfig& config, const std::string& parameter, double value);
SweepReport sweep(const ExperimentConfig& config, const std::string& parameter, const std::vector<double>& values,
                  Metric metric);

}  // namespace seqopt
