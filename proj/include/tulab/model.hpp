#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tulab/common.hpp"

namespace tulab {

struct ModelConfig {
  int vocab_size = 0;
  int context_len = 64;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  int mlp_hidden() const { return 4 * d_model; }
  long long param_count() const;
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class Provenance { f_R, f_0, f, f_prime };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct LineageEntry {
  std::string op;
  std::string params;
};

// Immutable once produced; training and unlearning return fresh checkpoints.
struct Checkpoint {
  ModelConfig config;
  Provenance provenance = Provenance::f_R;
  std::vector<LineageEntry> lineage;
  std::vector<double> params;
};

Checkpoint init_random(const ModelConfig& config);

std::vector<double> params_as_vector(const Checkpoint& ckpt);
Checkpoint vector_to_params(const ModelConfig& config, std::vector<double> params,
                            Provenance provenance = Provenance::f_R);

void validate_checkpoint(const Checkpoint& ckpt);

// Word-level tokenizer over a closed vocabulary. Ids 0..3 are specials.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;

  explicit Tokenizer(const std::vector<std::string>& words);

  int vocab_size() const { return static_cast<int>(id_to_word_.size()); }
  int id(const std::string& word) const;
  const std::string& word(int id) const;
  std::vector<int> encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> id_to_word_;
  std::vector<std::pair<std::string, int>> sorted_words_;  // binary-search index
};

struct Example {
  std::vector<int> prompt;
  std::vector<int> target;
};

struct PrefPair {
  std::vector<int> prompt;
  std::vector<int> win;
  std::vector<int> lose;
};

// Mean per-target-token negative log likelihood of target given prompt.
double sequence_loss(const Checkpoint& ckpt, const std::vector<int>& prompt,
                     const std::vector<int>& target);

// Sum of target-token log probabilities (the DPO building block).
double sequence_logprob(const ModelConfig& config, std::span<const double> params,
                        const std::vector<int>& prompt, const std::vector<int>& target);

// Same, and accumulates weight * d(logprob)/d(params) into grad.
double sequence_logprob_grad(const ModelConfig& config, std::span<const double> params,
                             const std::vector<int>& prompt, const std::vector<int>& target,
                             double weight, std::span<double> grad);

// Token-weighted mean NLL over a batch; optionally accumulates the gradient.
double lm_loss(const ModelConfig& config, std::span<const double> params,
               std::span<const Example> batch);
double lm_loss_and_grad(const ModelConfig& config, std::span<const double> params,
                        std::span<const Example> batch, std::span<double> grad);

double dpo_loss(const Checkpoint& policy, const Checkpoint& reference,
                const std::vector<int>& prompt, const std::vector<int>& y_win,
                const std::vector<int>& y_lose, double beta);

struct DecodeOptions {
  bool greedy = true;
  double temperature = 1.0;
  uint64_t seed = 0;
  int max_len = 32;
};

// Emits up to max_len tokens after the prompt; stops at EOS (not returned).
std::vector<int> generate(const Checkpoint& ckpt, const std::vector<int>& prompt,
                          const DecodeOptions& opts);

// [BOS] prompt [SEP] — the canonical conditioning prefix for generation.
std::vector<int> make_prompt(const Tokenizer& tok, const std::vector<std::string>& query);

// Logits for the next token after consuming prefix; runs the incremental
// decode path, so it doubles as an independent check on the training forward.
std::vector<double> next_token_logits(const Checkpoint& ckpt, const std::vector<int>& prefix);

}  // namespace tulab
