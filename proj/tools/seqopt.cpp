// Command-line front end: run, compare, sweep and verify.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acceptance.hpp"
#include "seqopt/harness.hpp"

namespace {

using namespace seqopt;

struct CommonFlags {
  std::string config;
  std::string variant;
  Index iters = 0;
  std::string seeds;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Experiment configuration (JSON)")->required();
  cmd->add_option("--variant", f.variant, "Variant name, overrides the config");
  cmd->add_option("--iters", f.iters, "Iteration budget, overrides the config");
  cmd->add_option("--seed", f.seeds, "Seed or comma-separated seeds, overrides SEQOPT_SEED and the config");
  cmd->add_option("--out", f.out, "Output directory, overrides the config");
}

/// Config file first, then SEQOPT_SEED, then explicit flags.
ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig c = ExperimentConfig::load(f.config);
  apply_seed_override(c);
  if (!f.variant.empty()) c.variant = f.variant;
  if (f.iters != 0) c.iterations = f.iters;
  if (!f.seeds.empty()) c.seeds = parse_seed_list(f.seeds);
  if (!f.out.empty()) c.out_dir = f.out;
  c.validate();
  return c;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(item);
      item.clear();
    } else {
      item += ch;
    }
  }
  out.push_back(item);
  return out;
}

std::vector<double> parse_values(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError(flag + ": cannot parse '" + item + "' as a number");
    }
  }
  return out;
}

int run_cmd(const CommonFlags& f) {
  const auto config = resolve(f);
  const auto records = run_experiment(config);
  int status = 0;
  for (const auto& r : records) {
    std::cout << "seed " << r.seed << ": final_greedy=" << format_double(r.final_greedy)
              << " best_so_far=" << format_double(r.best_so_far) << " iterations=" << r.curve.size()
              << " seconds=" << format_double(r.wall_seconds);
    if (r.error) {
      std::cout << " error=\"" << *r.error << "\"";
      status = 1;
    }
    std::cout << "\n";
  }
  if (status != 0) std::cerr << "error[environment]: one or more runs stopped early; partial results kept\n";
  return status;
}

int compare_cmd(const CommonFlags& f, const std::string& variants, const std::string& metric) {
  const auto base = resolve(f);
  std::vector<ExperimentConfig> configs;
  // Each entry is NAME or NAME@SCALE; SCALE sets that variant's reward scale 1/alpha.
  for (const auto& item : split_list(variants)) {
    ExperimentConfig c = base;
    const auto at = item.find('@');
    c.variant = item.substr(0, at);
    if (at != std::string::npos) {
      const auto scale = parse_values(item.substr(at + 1), "--variants");
      if (!(scale.front() > 0)) throw ConfigError("--variants: reward scale for " + c.variant + " must be positive");
      c.agent.alpha = 1.0 / scale.front();
    }
    configs.push_back(c);
  }
  const auto report = compare_variants(configs, parse_metric(metric), base.out_dir);
  std::cout << report.table_text();
  return 0;
}

int sweep_cmd(const CommonFlags& f, const std::string& parameter, const std::string& values,
              const std::string& metric) {
  const auto base = resolve(f);
  const auto report = sweep(base, parameter, parse_values(values, "--values"), parse_metric(metric));
  std::cout << report.csv;
  return 0;
}

int verify_cmd(const std::string& only) {
  std::vector<int> ids;
  if (!only.empty()) {
    for (const auto& item : split_list(only)) {
      try {
        ids.push_back(std::stoi(item));
      } catch (const std::logic_error&) {
        throw ConfigError("--only: cannot parse '" + item + "'");
      }
    }
  }
  const auto results = acceptance::run(ids, std::cout);
  for (const auto& r : results) {
    if (!r.passed) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box discrete sequence optimization with sparse Q-learning"};
  app.require_subcommand(1);

  CommonFlags run_flags, cmp_flags, sweep_flags;
  std::string variants = "pin,pin_no_fluency,rlprompt";
  std::string metric = "auc";
  std::string parameter, values, only;

  auto* run = app.add_subcommand("run", "Train one variant for every seed and write curves");
  add_common(run, run_flags);
  auto* cmp = app.add_subcommand("compare", "Train several variants and summarize a metric");
  add_common(cmp, cmp_flags);
  cmp->add_option("--variants", variants, "Comma-separated variants, each NAME or NAME@REWARD_SCALE")->capture_default_str();
  cmp->add_option("--metric", metric, "final_greedy, best_so_far or auc")->capture_default_str();
  auto* sw = app.add_subcommand("sweep", "Grid sweep over prompt_length, top_k or reward_scale");
  add_common(sw, sweep_flags);
  sw->add_option("--param", parameter, "Parameter to sweep")->required();
  sw->add_option("--values", values, "Comma-separated values")->required();
  sw->add_option("--metric", metric, "final_greedy, best_so_far or auc")->capture_default_str();
  auto* verify = app.add_subcommand("verify", "Run the acceptance checks and print one line per criterion");
  verify->add_option("--only", only, "Comma-separated criterion numbers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*run) return run_cmd(run_flags);
    if (*cmp) return compare_cmd(cmp_flags, variants, metric);
    if (*sw) return sweep_cmd(sweep_flags, parameter, values, metric);
    if (*verify) return verify_cmd(only);
  } catch (const seqopt::Error& e) {
    std::cerr << "error[" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
