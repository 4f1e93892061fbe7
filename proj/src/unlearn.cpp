#include "tulab/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace tulab {
namespace {

constexpr int kResponseMaxLen = 24;

void check_start_provenance(const Checkpoint& ckpt) {
  if (ckpt.provenance != Provenance::f && ckpt.provenance != Provenance::f_prime) {
    throw InvalidArgument("unlearning must start from a tool-augmented checkpoint, got " +
                          to_string(ckpt.provenance));
  }
}

void check_f0_provenance(const Checkpoint& ckpt) {
  if (ckpt.provenance != Provenance::f_0) {
    throw InvalidArgument("expected a checkpoint with provenance f_0, got " +
                          to_string(ckpt.provenance));
  }
}

Example to_example(const Tokenizer& tok, const std::vector<std::string>& query,
                   const std::vector<std::string>& response) {
  return Example{tok.encode(query), tok.encode(response)};
}

std::vector<Example> encode_demos(const Tokenizer& tok, const std::vector<Demonstration>& demos) {
  std::vector<Example> out;
  out.reserve(demos.size());
  for (const auto& d : demos) out.push_back(to_example(tok, d.query, d.response));
  return out;
}

// D_f side of the ToolDelete corpora: forget queries with f_0's responses.
std::vector<Example> tool_free_examples(const Checkpoint& f0, const Tokenizer& tok,
                                        const std::vector<Demonstration>& forget_demos) {
  ToolFreeCorpus corpus = tool_free_responses(f0, tok, forget_demos);
  std::vector<Example> out;
  out.reserve(corpus.entries.size());
  for (const auto& e : corpus.entries) out.push_back(to_example(tok, e.query, e.tool_free));
  return out;
}

}  // namespace

std::string to_string(UnlearnMethod m) {
  switch (m) {
    case UnlearnMethod::tooldelete_sft:
      return "tooldelete_sft";
    case UnlearnMethod::tooldelete_dpo:
      return "tooldelete_dpo";
    case UnlearnMethod::retrain:
      return "retrain";
    case UnlearnMethod::grad_ascent:
      return "grad_ascent";
    case UnlearnMethod::rand_label:
      return "rand_label";
  }
  throw InvalidArgument("unknown unlearn method");
}

UnlearnMethod unlearn_method_from_string(const std::string& s) {
  if (s == "tooldelete_sft") return UnlearnMethod::tooldelete_sft;
  if (s == "tooldelete_dpo") return UnlearnMethod::tooldelete_dpo;
  if (s == "retrain") return UnlearnMethod::retrain;
  if (s == "grad_ascent") return UnlearnMethod::grad_ascent;
  if (s == "rand_label") return UnlearnMethod::rand_label;
  throw InvalidArgument("unknown unlearn method: " + s);
}

void UnlearnRequest::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw InvalidArgument("alpha must be finite and >= 0");
  }
  if (!(retain_ratio > 0.0)) throw InvalidArgument("retain_ratio must be > 0");
  if (!(beta > 0.0)) throw InvalidArgument("beta must be > 0");
  hyper.validate();
}

ToolFreeCorpus tool_free_responses(const Checkpoint& f0, const Tokenizer& tok,
                                   const std::vector<Demonstration>& demos, int max_len) {
  check_f0_provenance(f0);
  ToolFreeCorpus corpus;
  corpus.entries.reserve(demos.size());
  DecodeOptions opts;
  opts.max_len = max_len;
  for (const auto& d : demos) {
    ToolFreeEntry e;
    e.query = d.query;
    e.original = d.response;
    e.tool_free = tok.decode(generate(f0, make_prompt(tok, d.query), opts));
    corpus.entries.push_back(std::move(e));
  }
  return corpus;
}

std::vector<Demonstration> retain_subset(const std::vector<Demonstration>& retain_demos,
                                         const std::vector<Demonstration>& forget_demos,
                                         double retain_ratio, uint64_t seed) {
  if (!(retain_ratio > 0.0)) throw InvalidArgument("retain_ratio must be > 0");
  const size_t size = std::min(
      retain_demos.size(),
      static_cast<size_t>(std::ceil(retain_ratio * static_cast<double>(forget_demos.size()))));
  if (size == 0) return {};

  std::map<int, std::vector<Demonstration>> by_tool;
  for (const auto& d : retain_demos) by_tool[d.tool_id].push_back(d);

  Rng rng(derive_seed(seed, "retain_subset"));
  std::vector<int> tool_order;
  for (auto& [tool_id, group] : by_tool) {
    std::shuffle(group.begin(), group.end(), rng);
    tool_order.push_back(tool_id);
  }
  std::shuffle(tool_order.begin(), tool_order.end(), rng);

  // Round-robin across tools so every tool is covered before any repeats.
  std::vector<Demonstration> out;
  out.reserve(size);
  for (size_t round = 0; out.size() < size; ++round) {
    bool picked = false;
    for (int tool_id : tool_order) {
      const auto& group = by_tool[tool_id];
      if (round < group.size()) {
        out.push_back(group[round]);
        picked = true;
        if (out.size() == size) break;
      }
    }
    if (!picked) break;
  }
  return out;
}

Checkpoint unlearn_sft(const Checkpoint& f, const Checkpoint& f0, const Tokenizer& tok,
                       const CorpusSplit& split, const TrainHyper& hyper, double retain_ratio,
                       TrainStats* stats) {
  check_start_provenance(f);
  if (split.forget_demos.empty()) throw InvalidArgument("forget set is empty");

  std::vector<Example> dataset = tool_free_examples(f0, tok, split.forget_demos);
  auto retain = retain_subset(split.retain_demos, split.forget_demos, retain_ratio, hyper.seed);
  auto retain_examples = encode_demos(tok, retain);
  dataset.insert(dataset.end(), retain_examples.begin(), retain_examples.end());

  Checkpoint out = train_lm(f, dataset, hyper, stats);
  out.provenance = Provenance::f_prime;
  out.lineage.push_back({"unlearn_sft", "retain_ratio=" + std::to_string(retain_ratio) +
                                            " forget=" + std::to_string(split.forget_demos.size()) +
                                            " retain=" + std::to_string(retain.size())});
  return out;
}

Checkpoint unlearn_dpo(const Checkpoint& f, const Checkpoint& f0, const Tokenizer& tok,
                       const CorpusSplit& split, const TrainHyper& hyper, double retain_ratio,
                       double beta, TrainStats* stats) {
  check_start_provenance(f);
  if (split.forget_demos.empty()) throw InvalidArgument("forget set is empty");

  // Forget tools: prefer the tool-free response over the original.
  // Retain tools: prefer the original over the tool-free response.
  std::vector<PrefPair> pairs;
  ToolFreeCorpus forget_fc = tool_free_responses(f0, tok, split.forget_demos, kResponseMaxLen);
  for (const auto& e : forget_fc.entries) {
    pairs.push_back(PrefPair{tok.encode(e.query), tok.encode(e.tool_free), tok.encode(e.original)});
  }
  auto retain = retain_subset(split.retain_demos, split.forget_demos, retain_ratio, hyper.seed);
  ToolFreeCorpus retain_fc = tool_free_responses(f0, tok, retain, kResponseMaxLen);
  for (const auto& e : retain_fc.entries) {
    pairs.push_back(PrefPair{tok.encode(e.query), tok.encode(e.original), tok.encode(e.tool_free)});
  }

  Checkpoint out = train_dpo(f, /*reference=*/f, pairs, beta, hyper, stats);
  out.provenance = Provenance::f_prime;
  out.lineage.push_back({"unlearn_dpo", "retain_ratio=" + std::to_string(retain_ratio) +
                                            " beta=" + std::to_string(beta) +
                                            " pairs=" + std::to_string(pairs.size())});
  return out;
}

Checkpoint apply_task_arithmetic(const Checkpoint& fp, const Checkpoint& f0,
                                 const Checkpoint& fR, double alpha) {
  if (!(fp.config == f0.config) || !(fp.config == fR.config)) {
    throw InvalidArgument("task arithmetic requires identical model configs");
  }
  if (!std::isfinite(alpha)) throw InvalidArgument("alpha must be finite");
  Checkpoint out = fp;
  for (size_t i = 0; i < out.params.size(); ++i) {
    out.params[i] = fp.params[i] + alpha * (f0.params[i] - fR.params[i]);
  }
  out.lineage.push_back({"task_arithmetic", "alpha=" + std::to_string(alpha)});
  return out;
}

Checkpoint retrain(const Checkpoint& start, const Tokenizer& tok,
                   const std::vector<Demonstration>& retain_demos, const TrainHyper& hyper) {
  if (retain_demos.empty()) throw InvalidArgument("retain set is empty");
  Checkpoint out = train_lm(start, encode_demos(tok, retain_demos), hyper);
  out.provenance = Provenance::f_prime;
  out.lineage.push_back({"retrain", "demos=" + std::to_string(retain_demos.size())});
  return out;
}

Checkpoint grad_ascent(const Checkpoint& f, const Tokenizer& tok,
                       const std::vector<Demonstration>& forget_demos,
                       const std::vector<Demonstration>& retain_probe, const TrainHyper& hyper,
                       double guard_factor) {
  check_start_provenance(f);
  if (forget_demos.empty()) throw InvalidArgument("forget set is empty");
  hyper.validate();

  auto dataset = encode_demos(tok, forget_demos);
  std::vector<Example> probe = encode_demos(tok, retain_probe);
  if (probe.size() > 32) probe.resize(32);

  Checkpoint out = f;
  out.provenance = Provenance::f_prime;

  const auto& cfg = out.config;
  const double probe_start = probe.empty() ? 0.0 : lm_loss(cfg, out.params, probe);

  Optimizer opt(hyper.optimizer, hyper.learning_rate, out.params.size());
  Rng rng(derive_seed(hyper.seed, "grad_ascent"));
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  size_t cursor = 0;

  std::vector<double> grad(out.params.size());
  std::vector<Example> batch;
  int steps_run = 0;
  for (int step = 0; step < hyper.steps; ++step) {
    batch.clear();
    for (int b = 0; b < hyper.batch_size; ++b) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(dataset[order[cursor++]]);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = lm_loss_and_grad(cfg, out.params, batch, grad);
    if (!std::isfinite(loss)) {
      throw NumericalFailure("non-finite loss during gradient ascent at step " +
                             std::to_string(step));
    }
    if (hyper.grad_clip) {
      double sq = 0.0;
      for (double g : grad) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm > *hyper.grad_clip && norm > 0.0) {
        for (double& g : grad) g *= *hyper.grad_clip / norm;
      }
    }
    opt.step(out.params, grad, -1.0);
    ++steps_run;
    // Guard: stop once retain knowledge degrades past the configured factor.
    if (!probe.empty() && step % 5 == 4) {
      const double probe_now = lm_loss(cfg, out.params, probe);
      if (probe_now > guard_factor * probe_start) break;
    }
  }
  out.lineage.push_back({"grad_ascent", "steps=" + std::to_string(steps_run) +
                                            " guard=" + std::to_string(guard_factor)});
  return out;
}

std::vector<Demonstration> corrupt_responses(const std::vector<Demonstration>& demos,
                                             const Tokenizer& tok, uint64_t seed) {
  Rng rng(derive_seed(seed, "rand_label"));
  // Specials are excluded: corrupted responses stay ordinary vocab words.
  std::uniform_int_distribution<int> word(4, tok.vocab_size() - 1);
  std::vector<Demonstration> out = demos;
  for (auto& d : out) {
    for (auto& t : d.response) t = tok.word(word(rng));
  }
  return out;
}

Checkpoint rand_label(const Checkpoint& f, const Tokenizer& tok,
                      const std::vector<Demonstration>& forget_demos,
                      const std::vector<Demonstration>& retain_demos, const TrainHyper& hyper,
                      uint64_t seed) {
  check_start_provenance(f);
  if (forget_demos.empty() || retain_demos.empty()) {
    throw InvalidArgument("rand_label needs nonempty forget and retain sets");
  }
  auto corrupted = corrupt_responses(forget_demos, tok, seed);
  std::vector<Example> dataset = encode_demos(tok, retain_demos);
  auto extra = encode_demos(tok, corrupted);
  dataset.insert(dataset.end(), extra.begin(), extra.end());

  Checkpoint out = train_lm(f, dataset, hyper);
  out.provenance = Provenance::f_prime;
  out.lineage.push_back({"rand_label", "corrupted=" + std::to_string(corrupted.size())});
  return out;
}

Checkpoint run_unlearn(const UnlearnRequest& request, const ToolUniverse& universe,
                       const Tokenizer& tok, const CorpusSplit& split, const Checkpoint& f,
                       const Checkpoint& f0, const Checkpoint& fR) {
  request.validate();

  CorpusSplit effective = split;
  if (request.use_pseudo_samples &&
      (request.method == UnlearnMethod::tooldelete_sft ||
       request.method == UnlearnMethod::tooldelete_dpo)) {
    // No-training-data mode: substitute generated pseudo-samples for D_f.
    std::map<int, int> per_tool;
    for (const auto& d : split.forget_demos) per_tool[d.tool_id]++;
    effective.forget_demos.clear();
    for (const auto& [tool_id, count] : per_tool) {
      auto pseudo = pseudo_samples_for_tool(
          universe, tool_id, count,
          derive_seed(request.hyper.seed, "pseudo", static_cast<uint64_t>(tool_id)));
      effective.forget_demos.insert(effective.forget_demos.end(), pseudo.begin(), pseudo.end());
    }
  }

  switch (request.method) {
    case UnlearnMethod::tooldelete_sft: {
      Checkpoint fp = unlearn_sft(f, f0, tok, effective, request.hyper, request.retain_ratio);
      return request.alpha != 0.0 ? apply_task_arithmetic(fp, f0, fR, request.alpha) : fp;
    }
    case UnlearnMethod::tooldelete_dpo: {
      Checkpoint fp = unlearn_dpo(f, f0, tok, effective, request.hyper, request.retain_ratio,
                                  request.beta);
      return request.alpha != 0.0 ? apply_task_arithmetic(fp, f0, fR, request.alpha) : fp;
    }
    case UnlearnMethod::retrain:
      return retrain(f0, tok, split.retain_demos, request.hyper);
    case UnlearnMethod::grad_ascent: {
      auto probe = retain_subset(split.retain_demos, split.forget_demos, 1.0,
                                 request.hyper.seed);
      return grad_ascent(f, tok, split.forget_demos, probe, request.hyper);
    }
    case UnlearnMethod::rand_label:
      return rand_label(f, tok, split.forget_demos, split.retain_demos, request.hyper,
                        request.hyper.seed);
  }
  throw InvalidArgument("unknown unlearn method");
}

std::vector<Checkpoint> sequential_unlearn(const UnlearnRequest& request,
                                           const ToolUniverse& universe, const Tokenizer& tok,
                                           const CorpusSplit& full_split,
                                           const std::vector<std::set<int>>& batches,
                                           const Checkpoint& f, const Checkpoint& f0,
                                           const Checkpoint& fR) {
  std::set<int> seen;
  for (const auto& batch : batches) {
    if (batch.empty()) throw InvalidArgument("sequential batch must be nonempty");
    for (int t : batch) {
      if (!seen.insert(t).second) {
        throw InvalidArgument("sequential batches overlap on tool " + std::to_string(t));
      }
      if (!full_split.forget_tools.count(t)) {
        throw InvalidArgument("tool " + std::to_string(t) +
                              " is not in the forget set of the split");
      }
    }
  }

  std::map<int, std::vector<Demonstration>> forget_by_tool;
  for (const auto& d : full_split.forget_demos) forget_by_tool[d.tool_id].push_back(d);

  std::vector<Checkpoint> results;
  Checkpoint current = f;
  std::set<int> processed;
  for (const auto& batch : batches) {
    CorpusSplit sub;
    sub.forget_tools = batch;
    // Tools from later batches have no deletion request yet; they stay
    // on the retain side of this round.
    sub.retain_tools = full_split.retain_tools;
    sub.retain_demos = full_split.retain_demos;
    for (const auto& [tool_id, demos] : forget_by_tool) {
      if (batch.count(tool_id)) {
        sub.forget_demos.insert(sub.forget_demos.end(), demos.begin(), demos.end());
      } else if (!processed.count(tool_id)) {
        sub.retain_tools.insert(tool_id);
        sub.retain_demos.insert(sub.retain_demos.end(), demos.begin(), demos.end());
      }
    }
    sub.test_demos = full_split.test_demos;

    current = run_unlearn(request, universe, tok, sub, current, f0, fR);
    processed.insert(batch.begin(), batch.end());
    results.push_back(current);
  }
  return results;
}

}  // namespace tulab
