#pragma once

#include <map>
#include <set>
#include <vector>

#include "tulab/train.hpp"
#include "tulab/worldgen.hpp"

namespace tulab {

inline constexpr double kSigmaFloor = 1e-6;

struct GaussianFit {
  double mu = 0.0;
  double sigma = kSigmaFloor;
  int n = 0;
};

// mu = sample mean, sigma = max(unbiased sample std, sigma_floor).
GaussianFit fit_loss_gaussian(const std::vector<double>& losses,
                              double sigma_floor = kSigmaFloor);

double gaussian_log_density(double x, const GaussianFit& fit);

struct ShadowModel {
  Checkpoint ckpt;
  std::set<int> out_tools;  // tools withheld from this shadow's training
  int forget_set_size = 0;
  int index = 0;
};

struct ShadowCollection {
  std::vector<ShadowModel> shadows;
  int n_tools = 0;

  std::vector<int> shadows_with_tool(int tool_id) const;
  std::vector<int> shadows_without_tool(int tool_id) const;
};

// Trains one model per (size, index) with a random size-subset of tools held
// out. When n_shadows_per_size >= n_tools the subsets are re-drawn until every
// tool is IN at least one shadow and OUT at least one shadow of that size.
ShadowCollection train_shadow_models(const ToolUniverse& universe, const Tokenizer& tok,
                                     const std::vector<Demonstration>& all_demos,
                                     const Checkpoint& start,
                                     const std::vector<int>& forget_set_sizes,
                                     int n_shadows_per_size, const TrainHyper& hyper,
                                     uint64_t seed, int n_threads = 1);

std::vector<double> harvest_losses(const Checkpoint& model, const Tokenizer& tok,
                                   const ShadowSet& shadow_set);

// losses[shadow_index][tool_id]: per-sample losses of that shadow on the
// tool's shadow set.
struct ShadowLossTable {
  std::vector<std::map<int, std::vector<double>>> losses;
};

ShadowLossTable harvest_shadow_losses(const ShadowCollection& collection, const Tokenizer& tok,
                                      const std::map<int, ShadowSet>& shadow_sets,
                                      int n_threads = 1);

struct LiraFits {
  std::map<int, GaussianFit> fit_in;   // tool trained into the model
  std::map<int, GaussianFit> fit_out;  // tool withheld
};

LiraFits build_lira_fits(const ShadowCollection& collection, const ShadowLossTable& table,
                         double sigma_floor = kSigmaFloor);

struct MiaStatistic {
  double log_lambda = 0.0;            // global statistic, computed in log space
  std::map<int, double> per_tool;     // per-tool IN-vs-OUT log-likelihood ratio
  GaussianFit fit_unlearned;          // losses of forget-tool shadow sets under f'
  GaussianFit fit_retain;             // losses of retain-tool shadow sets under f
};

MiaStatistic lira_tool_statistic(const Checkpoint& f_prime, const Checkpoint& f,
                                 const Tokenizer& tok,
                                 const std::map<int, ShadowSet>& shadow_sets_forget,
                                 const std::map<int, ShadowSet>& shadow_sets_retain,
                                 const LiraFits& fits);

// Per-sample log-likelihood-ratio scores; label 1 for members.
std::vector<std::pair<double, int>> sample_level_lira(
    const Checkpoint& model, const Tokenizer& tok,
    const std::vector<Demonstration>& member_pairs,
    const std::vector<Demonstration>& nonmember_pairs, const GaussianFit& fit_in,
    const GaussianFit& fit_out);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

// Threshold sweep over the distinct scores with ties grouped; the curve runs
// from (0,0) to (1,1). AUC equals the pairwise win-or-half-tie probability.
RocResult roc_curve(const std::vector<std::pair<double, int>>& scores_with_labels);

// Step lookup: TPR at the largest achievable FPR <= target, no interpolation.
double tpr_at_fpr(const RocResult& roc, double fpr_target = 0.01);

struct MiaReport {
  std::map<int, double> per_tool_log_lambda;
  double log_lambda = 0.0;
  std::vector<std::pair<double, int>> scores;
  RocResult roc;
  double tpr_at_fpr_001 = 0.0;
  double auc = 0.0;
};

// Full attack on an unlearned model: forget tools scored on f_prime are the
// member decisions; tools scored on shadows that never trained them are the
// non-member decisions.
MiaReport evaluate_attack(const Checkpoint& f_prime, const Checkpoint& f, const Tokenizer& tok,
                          const CorpusSplit& split,
                          const std::map<int, ShadowSet>& shadow_sets,
                          const ShadowCollection& collection, const ShadowLossTable& table,
                          const LiraFits& fits);

std::string mia_report_to_json(const MiaReport& report);
MiaReport mia_report_from_json(const std::string& text);

// Two-column numeric text (fpr tpr per line) for external plotting.
std::string roc_to_tsv(const RocResult& roc);

}  // namespace tulab
