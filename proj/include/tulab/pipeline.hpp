#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tulab/eval.hpp"
#include "tulab/mia.hpp"
#include "tulab/unlearn.hpp"

namespace tulab {

inline constexpr int kConfigSchemaVersion = 1;

struct UniverseParams {
  int n_tools = 8;
  int n_general_tasks = 60;
  int demos_per_tool = 50;
  int test_demos_per_tool = 10;
  int probe_count = 20;
  int shadow_samples_per_tool = 20;
  DiversityConfig diversity;
};

struct SplitParams {
  double forget_fraction = 0.25;
  std::optional<std::vector<int>> forget_tools;  // explicit ids override the fraction
};

struct MethodParams {
  UnlearnMethod name = UnlearnMethod::tooldelete_sft;
  double alpha = 1.0;
  double beta = 0.1;
  double retain_ratio = 1.0;
  bool use_pseudo_samples = false;
};

struct PhaseHyper {
  int steps = 0;
  int batch_size = 16;
  double learning_rate = 3e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::optional<double> grad_clip = 1.0;
};

struct MiaParams {
  bool enabled = true;
  std::vector<int> sizes = {1, 5};
  int shadows_per_size = 8;
};

struct Seeds {
  uint64_t universe = 0;
  uint64_t model = 0;
  uint64_t split = 0;
  uint64_t train_base = 0;
  uint64_t train_tool = 0;
  uint64_t unlearn = 0;
  uint64_t mia = 0;
};

struct SweepParams {
  std::vector<UnlearnMethod> methods;
  std::vector<uint64_t> seeds;
  std::vector<double> alphas;
};

struct ExperimentConfig {
  UniverseParams universe;
  ModelConfig model;  // vocab_size filled from the generated universe
  SplitParams split;
  MethodParams method;
  PhaseHyper train_base;
  PhaseHyper train_tool;
  double general_replay_fraction = 0.25;  // share of general tasks mixed into tool training
  PhaseHyper unlearn;
  PhaseHyper shadow;
  MiaParams mia;
  PropertyTolerances tolerances;
  std::optional<std::vector<std::vector<int>>> sequential_batches;
  Seeds seeds;
  std::optional<SweepParams> sweep;
};

// Throws InvalidArgument naming the offending field.
ExperimentConfig parse_experiment_config(const std::string& json_text);
std::string experiment_config_to_json(const ExperimentConfig& config);

TrainHyper to_hyper(const PhaseHyper& p, uint64_t seed);

struct RunArtifacts {
  std::filesystem::path dir;
  EvalReport eval_report;
  PropertyChecks checks;
  std::optional<MiaReport> mia_report;
};

// World materialized once per run and shared by all phases.
struct World {
  ToolUniverse universe;
  CorpusSplit split;
  std::map<int, std::vector<Demonstration>> probes;      // g-probe sets per tool
  std::map<int, ShadowSet> shadow_sets;                  // MIA shadow samples per tool
  std::vector<Example> general_train;
  std::vector<Example> demo_train;
};

World build_world(const ExperimentConfig& config);
Tokenizer make_tokenizer(const ToolUniverse& universe);

// Full pipeline: gen, train base, train tool, unlearn, eval, mia, report.
RunArtifacts run_pipeline(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                          bool force = false, int n_threads = 1);

// Phase entry points backing the CLI subcommands; each reads what it needs
// from the run directory and writes its artifacts back.
void phase_gen_data(const ExperimentConfig& config, const std::filesystem::path& dir, bool force);
void phase_train_base(const ExperimentConfig& config, const std::filesystem::path& dir);
void phase_train_tool(const ExperimentConfig& config, const std::filesystem::path& dir);
void phase_unlearn(const ExperimentConfig& config, const std::filesystem::path& dir);
void phase_sequential(const ExperimentConfig& config, const std::filesystem::path& dir);
// Returns false when a property check failed (exit code 4 in the CLI).
bool phase_eval(const ExperimentConfig& config, const std::filesystem::path& dir, bool check);
void phase_mia(const ExperimentConfig& config, const std::filesystem::path& dir, int n_threads);
void phase_report(const std::filesystem::path& dir);

// Aggregates per-run reports into a flat table, one row per run plus a
// mean +/- std footer per method.
std::string aggregate_report(const std::vector<std::filesystem::path>& run_dirs);

// methods x seeds x alphas fan-out; each cell is an independent pipeline.
std::vector<std::filesystem::path> run_sweep(const ExperimentConfig& config,
                                             const std::filesystem::path& out_dir, bool force,
                                             int n_threads);

}  // namespace tulab
