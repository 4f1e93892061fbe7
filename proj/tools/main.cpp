#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tulab/io.hpp"
#include "tulab/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using namespace tulab;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitCheckFailed = 4;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  bool force = false;
  uint64_t seed_override = 0;
  bool has_seed_override = false;
  int threads = 1;
};

ExperimentConfig load_config(const CommonArgs& args) {
  ExperimentConfig config = parse_experiment_config(read_text_file(args.config_path));
  if (args.has_seed_override) {
    const uint64_t s = args.seed_override;
    config.seeds.universe = derive_seed(s, "override.universe");
    config.seeds.model = derive_seed(s, "override.model");
    config.seeds.split = derive_seed(s, "override.split");
    config.seeds.train_base = derive_seed(s, "override.train_base");
    config.seeds.train_tool = derive_seed(s, "override.train_tool");
    config.seeds.unlearn = derive_seed(s, "override.unlearn");
    config.seeds.mia = derive_seed(s, "override.mia");
  }
  return config;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_out = true) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  auto* out = cmd->add_option("--out", args.out_dir, "run directory");
  if (needs_out) out->required();
  cmd->add_flag("--force", args.force, "overwrite an existing run directory");
  cmd->add_option("--seed-override", args.seed_override, "derive all phase seeds from this value")
      ->each([&args](const std::string&) { args.has_seed_override = true; });
  cmd->add_option("--threads", args.threads, "worker threads for parallel phases");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tulab: tool unlearning laboratory for tiny tool-augmented sequence models"};
  app.require_subcommand(1);

  CommonArgs args;
  bool eval_check = false;
  std::vector<std::string> report_runs;

  auto* cmd_run = app.add_subcommand("run", "full pipeline: gen, train, unlearn, eval, mia, report");
  add_common(cmd_run, args);
  auto* cmd_gen = app.add_subcommand("gen-data", "generate universe and corpora");
  add_common(cmd_gen, args);
  auto* cmd_base = app.add_subcommand("train-base", "train f_0 on general tasks from random init");
  add_common(cmd_base, args);
  auto* cmd_tool = app.add_subcommand("train-tool", "train f on tool demonstrations from f_0");
  add_common(cmd_tool, args);
  auto* cmd_unlearn = app.add_subcommand("unlearn", "apply the configured unlearning method");
  add_common(cmd_unlearn, args);
  auto* cmd_seq = app.add_subcommand("sequential", "unlearn in sequential batches");
  add_common(cmd_seq, args);
  auto* cmd_eval = app.add_subcommand("eval", "evaluate the unlearned model");
  add_common(cmd_eval, args);
  cmd_eval->add_flag("--check", eval_check, "exit 4 unless the property checks pass");
  auto* cmd_mia = app.add_subcommand("mia", "train shadow models and run the likelihood-ratio attack");
  add_common(cmd_mia, args);
  auto* cmd_sweep = app.add_subcommand("sweep", "fan out methods x seeds x alphas");
  add_common(cmd_sweep, args);
  auto* cmd_report = app.add_subcommand("report", "aggregate run directories into a table");
  cmd_report->add_option("--runs", report_runs, "run directories")->required()->expected(-1);
  cmd_report->add_option("--out", args.out_dir, "write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (cmd_report->parsed()) {
      std::vector<fs::path> dirs(report_runs.begin(), report_runs.end());
      const std::string table = aggregate_report(dirs);
      if (args.out_dir.empty()) {
        std::cout << table;
      } else {
        write_text_file(args.out_dir, table);
      }
      return kExitOk;
    }

    ExperimentConfig config = load_config(args);
    const fs::path out(args.out_dir);

    if (cmd_run->parsed()) {
      RunArtifacts artifacts = run_pipeline(config, out, args.force, args.threads);
      std::cout << "run complete: " << artifacts.dir.string() << "\n"
                << "  acc_test=" << artifacts.eval_report.acc_test
                << " acc_retain=" << artifacts.eval_report.acc_retain
                << " acc_forget=" << artifacts.eval_report.acc_forget
                << " general=" << artifacts.eval_report.general_score << "\n";
      if (artifacts.mia_report) {
        std::cout << "  tpr_at_fpr_001=" << artifacts.mia_report->tpr_at_fpr_001
                  << " auc=" << artifacts.mia_report->auc << "\n";
      }
    } else if (cmd_gen->parsed()) {
      phase_gen_data(config, out, args.force);
      std::cout << "corpora written to " << out.string() << "\n";
    } else if (cmd_base->parsed()) {
      phase_train_base(config, out);
      std::cout << "f_R and f_0 written to " << (out / "ckpt").string() << "\n";
    } else if (cmd_tool->parsed()) {
      phase_train_tool(config, out);
      std::cout << "f written to " << (out / "ckpt").string() << "\n";
    } else if (cmd_unlearn->parsed()) {
      phase_unlearn(config, out);
      std::cout << "f_prime written to " << (out / "ckpt").string() << "\n";
    } else if (cmd_seq->parsed()) {
      phase_sequential(config, out);
      std::cout << "sequential checkpoints written to " << (out / "ckpt").string() << "\n";
    } else if (cmd_eval->parsed()) {
      const bool ok = phase_eval(config, out, eval_check);
      std::cout << "eval report written to " << (out / "eval_report.json").string() << "\n";
      if (!ok) {
        std::cerr << "property checks failed (see property_checks.json)\n";
        return kExitCheckFailed;
      }
    } else if (cmd_mia->parsed()) {
      phase_mia(config, out, args.threads);
      std::cout << "mia report written to " << (out / "mia_report.json").string() << "\n";
    } else if (cmd_sweep->parsed()) {
      auto dirs = run_sweep(config, out, args.force, args.threads);
      std::cout << "sweep complete: " << dirs.size() << " runs, table at "
                << (out / "table.tsv").string() << "\n";
    }
    return kExitOk;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
