#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "tulab/model.hpp"

namespace tulab {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainHyper {
  int steps = 0;
  int batch_size = 16;
  double learning_rate = 3e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::optional<double> grad_clip = 1.0;
  uint64_t seed = 0;

  void validate() const;
};

// Stateful update rule; one instance per training run.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, size_t n_params);

  // direction_sign +1 descends, -1 ascends.
  void step(std::span<double> params, std::span<const double> grad, double direction_sign = 1.0);

 private:
  OptimizerKind kind_;
  double lr_;
  long long t_ = 0;
  std::vector<double> m_, v_;
};

// A differentiable scalar objective over a parameter vector.
struct DiffFn {
  std::function<double(std::span<const double>)> value;
  std::function<double(std::span<const double>, std::span<double>)> value_and_grad;
};

DiffFn make_lm_loss_fn(const ModelConfig& config, std::vector<Example> dataset);
DiffFn make_dpo_loss_fn(const ModelConfig& config, std::vector<double> reference_params,
                        std::vector<PrefPair> pairs, double beta);

struct TrainStats {
  std::vector<double> loss_trace;
  double probe_loss_start = 0.0;
  double probe_loss_end = 0.0;
};

Checkpoint train_lm(const Checkpoint& start, const std::vector<Example>& dataset,
                    const TrainHyper& hyper, TrainStats* stats = nullptr);

enum class GradDirection { descent, ascent };

Checkpoint grad_step(const Checkpoint& ckpt, const DiffFn& loss_fn, GradDirection direction,
                     const TrainHyper& hyper);

// Compares the analytic gradient against central differences on n_coords
// sampled coordinates; returns the max relative error.
double finite_difference_grad_check(const Checkpoint& ckpt, const DiffFn& loss_fn, int n_coords,
                                    double eps, uint64_t seed);

// DPO fine-tuning against a frozen reference (one pass used by unlearn_dpo).
Checkpoint train_dpo(const Checkpoint& start, const Checkpoint& reference,
                     const std::vector<PrefPair>& pairs, double beta, const TrainHyper& hyper,
                     TrainStats* stats = nullptr);

}  // namespace tulab
