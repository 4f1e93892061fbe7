#pragma once

#include <set>
#include <vector>

#include "tulab/train.hpp"
#include "tulab/worldgen.hpp"

namespace tulab {

enum class UnlearnMethod { tooldelete_sft, tooldelete_dpo, retrain, grad_ascent, rand_label };

std::string to_string(UnlearnMethod m);
UnlearnMethod unlearn_method_from_string(const std::string& s);

struct UnlearnRequest {
  UnlearnMethod method = UnlearnMethod::tooldelete_sft;
  double alpha = 1.0;        // task-arithmetic magnitude, tooldelete methods only
  double beta = 0.1;         // DPO temperature
  double retain_ratio = 1.0; // |retain subset| = ceil(retain_ratio * |D_f|)
  bool use_pseudo_samples = false;
  TrainHyper hyper;

  void validate() const;
};

struct ToolFreeEntry {
  std::vector<std::string> query;
  std::vector<std::string> original;   // Y
  std::vector<std::string> tool_free;  // Y' = f_0(Q), recorded verbatim even if equal
};

struct ToolFreeCorpus {
  std::vector<ToolFreeEntry> entries;
};

ToolFreeCorpus tool_free_responses(const Checkpoint& f0, const Tokenizer& tok,
                                   const std::vector<Demonstration>& demos, int max_len = 24);

// Deterministic stratified sample of size min(|retain|, ceil(ratio * |forget|)),
// spreading picks across as many distinct retain tools as the size allows.
std::vector<Demonstration> retain_subset(const std::vector<Demonstration>& retain_demos,
                                         const std::vector<Demonstration>& forget_demos,
                                         double retain_ratio, uint64_t seed);

Checkpoint unlearn_sft(const Checkpoint& f, const Checkpoint& f0, const Tokenizer& tok,
                       const CorpusSplit& split, const TrainHyper& hyper, double retain_ratio,
                       TrainStats* stats = nullptr);

Checkpoint unlearn_dpo(const Checkpoint& f, const Checkpoint& f0, const Tokenizer& tok,
                       const CorpusSplit& split, const TrainHyper& hyper, double retain_ratio,
                       double beta, TrainStats* stats = nullptr);

// params(out) = params(fp) + alpha * (params(f0) - params(fR)), elementwise.
Checkpoint apply_task_arithmetic(const Checkpoint& fp, const Checkpoint& f0,
                                 const Checkpoint& fR, double alpha);

Checkpoint retrain(const Checkpoint& start, const Tokenizer& tok,
                   const std::vector<Demonstration>& retain_demos, const TrainHyper& hyper);

Checkpoint grad_ascent(const Checkpoint& f, const Tokenizer& tok,
                       const std::vector<Demonstration>& forget_demos,
                       const std::vector<Demonstration>& retain_probe, const TrainHyper& hyper,
                       double guard_factor = 1.5);

Checkpoint rand_label(const Checkpoint& f, const Tokenizer& tok,
                      const std::vector<Demonstration>& forget_demos,
                      const std::vector<Demonstration>& retain_demos, const TrainHyper& hyper,
                      uint64_t seed);

// Replaces each response with uniformly random vocab words of the same length.
std::vector<Demonstration> corrupt_responses(const std::vector<Demonstration>& demos,
                                             const Tokenizer& tok, uint64_t seed);

// Dispatches on request.method; tooldelete variants get task arithmetic at
// request.alpha afterwards, baselines run as-is.
Checkpoint run_unlearn(const UnlearnRequest& request, const ToolUniverse& universe,
                       const Tokenizer& tok, const CorpusSplit& split, const Checkpoint& f,
                       const Checkpoint& f0, const Checkpoint& fR);

// Applies the method batch by batch, chaining each result as the next start;
// returns the checkpoint after every batch.
std::vector<Checkpoint> sequential_unlearn(const UnlearnRequest& request,
                                           const ToolUniverse& universe, const Tokenizer& tok,
                                           const CorpusSplit& full_split,
                                           const std::vector<std::set<int>>& batches,
                                           const Checkpoint& f, const Checkpoint& f0,
                                           const Checkpoint& fR);

}  // namespace tulab
