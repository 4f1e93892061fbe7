#include "tulab/train.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace tulab {
namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void clip_global_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
}

// Epoch-shuffled batch iterator; deterministic for a fixed seed.
class BatchSampler {
 public:
  BatchSampler(size_t n, uint64_t seed) : order_(n), rng_(make_rng(seed)) {
    std::iota(order_.begin(), order_.end(), size_t{0});
    reshuffle();
  }

  size_t next() {
    if (cursor_ >= order_.size()) reshuffle();
    return order_[cursor_++];
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }
  std::vector<size_t> order_;
  Rng rng_;
  size_t cursor_ = 0;
};

Provenance next_provenance(Provenance start) {
  switch (start) {
    case Provenance::f_R:
      return Provenance::f_0;
    case Provenance::f_0:
      return Provenance::f;
    default:
      return start;
  }
}

}  // namespace

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam" || s == "adaptive-moment") return OptimizerKind::adam;
  throw InvalidArgument("unknown optimizer: " + s);
}

void TrainHyper::validate() const {
  if (steps < 0) throw InvalidArgument("steps must be >= 0");
  if (batch_size <= 0) throw InvalidArgument("batch_size must be > 0");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  if (grad_clip && !(*grad_clip > 0.0)) throw InvalidArgument("grad_clip must be > 0");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, size_t n_params)
    : kind_(kind), lr_(learning_rate) {
  if (kind_ == OptimizerKind::adam) {
    m_.assign(n_params, 0.0);
    v_.assign(n_params, 0.0);
  }
}

void Optimizer::step(std::span<double> params, std::span<const double> grad,
                     double direction_sign) {
  if (kind_ == OptimizerKind::sgd) {
    for (size_t i = 0; i < params.size(); ++i) params[i] -= direction_sign * lr_ * grad[i];
    return;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = direction_sign * grad[i];
    m_[i] = kAdamBeta1 * m_[i] + (1.0 - kAdamBeta1) * g;
    v_[i] = kAdamBeta2 * v_[i] + (1.0 - kAdamBeta2) * g * g;
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= lr_ * mhat / (std::sqrt(vhat) + kAdamEps);
  }
}

DiffFn make_lm_loss_fn(const ModelConfig& config, std::vector<Example> dataset) {
  auto data = std::make_shared<std::vector<Example>>(std::move(dataset));
  DiffFn fn;
  fn.value = [config, data](std::span<const double> params) {
    return lm_loss(config, params, *data);
  };
  fn.value_and_grad = [config, data](std::span<const double> params, std::span<double> grad) {
    return lm_loss_and_grad(config, params, *data, grad);
  };
  return fn;
}

DiffFn make_dpo_loss_fn(const ModelConfig& config, std::vector<double> reference_params,
                        std::vector<PrefPair> pairs, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("beta must be > 0");
  auto ref = std::make_shared<std::vector<double>>(std::move(reference_params));
  auto data = std::make_shared<std::vector<PrefPair>>(std::move(pairs));
  // Reference log probabilities are constants of the objective.
  auto ref_lp = std::make_shared<std::vector<std::pair<double, double>>>();
  for (const auto& pr : *data) {
    ref_lp->emplace_back(sequence_logprob(config, *ref, pr.prompt, pr.win),
                         sequence_logprob(config, *ref, pr.prompt, pr.lose));
  }

  DiffFn fn;
  fn.value = [config, data, ref_lp, beta](std::span<const double> params) {
    double total = 0.0;
    for (size_t i = 0; i < data->size(); ++i) {
      const auto& pr = (*data)[i];
      const double pw = sequence_logprob(config, params, pr.prompt, pr.win);
      const double pl = sequence_logprob(config, params, pr.prompt, pr.lose);
      const double z = beta * ((pw - (*ref_lp)[i].first) - (pl - (*ref_lp)[i].second));
      total += softplus(-z);
    }
    return total / static_cast<double>(data->size());
  };
  fn.value_and_grad = [config, data, ref_lp, beta](std::span<const double> params,
                                                   std::span<double> grad) {
    const double scale = 1.0 / static_cast<double>(data->size());
    double total = 0.0;
    for (size_t i = 0; i < data->size(); ++i) {
      const auto& pr = (*data)[i];
      const double pw = sequence_logprob(config, params, pr.prompt, pr.win);
      const double pl = sequence_logprob(config, params, pr.prompt, pr.lose);
      const double z = beta * ((pw - (*ref_lp)[i].first) - (pl - (*ref_lp)[i].second));
      total += softplus(-z);
      // dL/d lp_win = -beta * sigmoid(-z), dL/d lp_lose = +beta * sigmoid(-z)
      const double w = beta * sigmoid(-z) * scale;
      sequence_logprob_grad(config, params, pr.prompt, pr.win, -w, grad);
      sequence_logprob_grad(config, params, pr.prompt, pr.lose, w, grad);
    }
    return total * scale;
  };
  return fn;
}

Checkpoint train_lm(const Checkpoint& start, const std::vector<Example>& dataset,
                    const TrainHyper& hyper, TrainStats* stats) {
  hyper.validate();
  if (dataset.empty()) throw InvalidArgument("train_lm dataset must be nonempty");

  Checkpoint out = start;
  out.provenance = next_provenance(start.provenance);
  out.lineage.push_back({"train_lm", "steps=" + std::to_string(hyper.steps) +
                                        " batch=" + std::to_string(hyper.batch_size) +
                                        " lr=" + std::to_string(hyper.learning_rate) +
                                        " opt=" + to_string(hyper.optimizer) +
                                        " seed=" + std::to_string(hyper.seed)});
  if (hyper.steps == 0) return out;

  const auto& cfg = out.config;
  std::vector<Example> probe(dataset.begin(),
                             dataset.begin() + std::min<size_t>(dataset.size(), 32));
  if (stats) stats->probe_loss_start = lm_loss(cfg, out.params, probe);

  Optimizer opt(hyper.optimizer, hyper.learning_rate, out.params.size());
  BatchSampler sampler(dataset.size(), derive_seed(hyper.seed, "train_lm.batches"));
  std::vector<double> grad(out.params.size());
  std::vector<Example> batch;
  for (int step = 0; step < hyper.steps; ++step) {
    batch.clear();
    for (int b = 0; b < hyper.batch_size; ++b) batch.push_back(dataset[sampler.next()]);
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = lm_loss_and_grad(cfg, out.params, batch, grad);
    if (!std::isfinite(loss)) {
      throw NumericalFailure("non-finite loss at step " + std::to_string(step));
    }
    if (hyper.grad_clip) clip_global_norm(grad, *hyper.grad_clip);
    opt.step(out.params, grad);
    if (stats) stats->loss_trace.push_back(loss);
  }
  if (stats) stats->probe_loss_end = lm_loss(cfg, out.params, probe);
  return out;
}

Checkpoint grad_step(const Checkpoint& ckpt, const DiffFn& loss_fn, GradDirection direction,
                     const TrainHyper& hyper) {
  hyper.validate();
  Checkpoint out = ckpt;
  std::vector<double> grad(out.params.size(), 0.0);
  const double loss = loss_fn.value_and_grad(out.params, grad);
  if (!std::isfinite(loss)) throw NumericalFailure("non-finite loss in grad_step");
  for (double g : grad) {
    if (!std::isfinite(g)) throw NumericalFailure("non-finite gradient in grad_step");
  }
  if (hyper.grad_clip) clip_global_norm(grad, *hyper.grad_clip);
  Optimizer opt(hyper.optimizer, hyper.learning_rate, out.params.size());
  opt.step(out.params, grad, direction == GradDirection::descent ? 1.0 : -1.0);
  return out;
}

double finite_difference_grad_check(const Checkpoint& ckpt, const DiffFn& loss_fn, int n_coords,
                                    double eps, uint64_t seed) {
  if (!(eps > 0.0)) throw InvalidArgument("eps must be > 0");
  std::vector<double> grad(ckpt.params.size(), 0.0);
  loss_fn.value_and_grad(ckpt.params, grad);

  std::vector<double> theta = ckpt.params;
  Rng rng(derive_seed(seed, "fd_check"));
  std::uniform_int_distribution<size_t> coord(0, theta.size() - 1);

  double max_rel = 0.0;
  for (int i = 0; i < n_coords; ++i) {
    const size_t c = coord(rng);
    const double orig = theta[c];
    theta[c] = orig + eps;
    const double hi = loss_fn.value(theta);
    theta[c] = orig - eps;
    const double lo = loss_fn.value(theta);
    theta[c] = orig;
    const double numeric = (hi - lo) / (2.0 * eps);
    const double analytic = grad[c];
    if (analytic == 0.0 && numeric == 0.0) continue;
    // Relative to the larger magnitude, floored so vanishing gradients are
    // judged on absolute agreement.
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-2});
    max_rel = std::max(max_rel, std::fabs(analytic - numeric) / denom);
  }
  return max_rel;
}

Checkpoint train_dpo(const Checkpoint& start, const Checkpoint& reference,
                     const std::vector<PrefPair>& pairs, double beta, const TrainHyper& hyper,
                     TrainStats* stats) {
  hyper.validate();
  if (pairs.empty()) throw InvalidArgument("train_dpo needs at least one preference pair");
  if (!(start.config == reference.config)) {
    throw InvalidArgument("policy and reference configs differ");
  }
  if (!(beta > 0.0)) throw InvalidArgument("beta must be > 0");

  Checkpoint out = start;
  out.lineage.push_back({"train_dpo", "steps=" + std::to_string(hyper.steps) +
                                         " beta=" + std::to_string(beta) +
                                         " lr=" + std::to_string(hyper.learning_rate)});
  if (hyper.steps == 0) return out;

  const auto& cfg = out.config;
  // Reference log probabilities never change; compute once.
  std::vector<std::pair<double, double>> ref_lp;
  ref_lp.reserve(pairs.size());
  for (const auto& pr : pairs) {
    ref_lp.emplace_back(sequence_logprob(cfg, reference.params, pr.prompt, pr.win),
                        sequence_logprob(cfg, reference.params, pr.prompt, pr.lose));
  }

  Optimizer opt(hyper.optimizer, hyper.learning_rate, out.params.size());
  BatchSampler sampler(pairs.size(), derive_seed(hyper.seed, "train_dpo.batches"));
  std::vector<double> grad(out.params.size());
  for (int step = 0; step < hyper.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const int bs = hyper.batch_size;
    double loss = 0.0;
    for (int b = 0; b < bs; ++b) {
      const size_t i = sampler.next();
      const auto& pr = pairs[i];
      const double pw = sequence_logprob(cfg, out.params, pr.prompt, pr.win);
      const double pl = sequence_logprob(cfg, out.params, pr.prompt, pr.lose);
      const double z = beta * ((pw - ref_lp[i].first) - (pl - ref_lp[i].second));
      loss += softplus(-z);
      const double w = beta * sigmoid(-z) / static_cast<double>(bs);
      sequence_logprob_grad(cfg, out.params, pr.prompt, pr.win, -w, grad);
      sequence_logprob_grad(cfg, out.params, pr.prompt, pr.lose, w, grad);
    }
    loss /= static_cast<double>(bs);
    if (!std::isfinite(loss)) {
      throw NumericalFailure("non-finite DPO loss at step " + std::to_string(step));
    }
    if (hyper.grad_clip) clip_global_norm(grad, *hyper.grad_clip);
    opt.step(out.params, grad);
    if (stats) stats->loss_trace.push_back(loss);
  }
  return out;
}

}  // namespace tulab
