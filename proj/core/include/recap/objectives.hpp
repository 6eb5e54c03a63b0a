#pragma once

#include <unordered_map>
#include <vector>

#include "recap/checkpoint.hpp"
#include "recap/decoder.hpp"
#include "recap/metrics.hpp"
#include "recap/rng.hpp"
#include "recap/tape.hpp"

namespace recap {

// ---------------------------------------------------------------------------
// supervised objective

struct XeLoss {
  ag::Var loss;            // -sum_t log P_t(target_t) over non-PAD positions
  int counted_steps = 0;   // positions that entered the sum
  bool floor_hit = false;  // some target probability fell to the 1e-12 clamp
};

// Cross-entropy of per-step distributions against target tokens. PAD targets
// are skipped; logs are clamped at a 1e-12 floor, so a zero-probability
// target yields a large finite loss and sets floor_hit.
XeLoss cross_entropy_loss(ag::Tape& t, const std::vector<ag::Var>& step_probs,
                          const std::vector<int>& targets);

// ---------------------------------------------------------------------------
// reward helpers

// Drops PAD/BOS/EOS before metric scoring; UNK stays, it is a real token.
TokenSeq strip_special(const TokenSeq& tokens);

// Per-image caption quality: tf-idf n-gram similarity against the image's
// references under frozen training-split document frequencies.
double caption_reward(const TokenSeq& tokens, const RefSet& refs, const NgramStats& stats);

// Reward attributable to the recalled-word channel: full-model sample score
// minus switch-off sample score. May be negative.
double recalled_word_reward(double r_sample, double r_sample_off);

struct RewardBundle {
  double r_s = 0.0;      // sampled caption, full model
  double r_g = 0.0;      // greedy caption, full model
  double r_s_off = 0.0;  // sampled caption with the switch pinned to zero
  double r_g_off = 0.0;  // greedy caption with the switch pinned to zero
  double wr = 0.0;       // r_s - r_s_off, the recalled-word reward
};

// ---------------------------------------------------------------------------
// policy-gradient objective

// Score-function surrogate: -advantage * sum_t log p(w_t). Backward through
// it yields advantage * grad log-likelihood of the drawn tokens; the
// advantage is a plain number, so no gradient flows through the rewards.
ag::Var scst_term(ag::Tape& t, const std::vector<ag::Var>& step_logprobs, double advantage);

struct RlStep {
  ag::Var loss;
  RewardBundle rewards;
  TokenSeq sampled_full;  // w drawn from the mixed distribution
  TokenSeq sampled_off;   // w drawn with the switch pinned to zero
};

// One image's contribution to the mixed policy-gradient loss:
//   -lambda * (r_s_off - r_g_off) * sum log p^v(sampled_off)
//   -(1-lambda) * wr * sum log p(sampled_full)
// The switch-off greedy caption baselines the first term; the second term
// uses no baseline. Each sample draws from its own rng stream.
RlStep combined_rl_step(ag::Tape& t, DecoderParams& p, const ImageRecord& image,
                        const RecalledWordSet& recalled, const RefSet& refs,
                        const NgramStats& stats, double lambda, int max_len, Rng& rng_full,
                        Rng& rng_off);

// ---------------------------------------------------------------------------
// optimizer

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;     // global-norm gradient clip; <= 0 disables
  double decay_factor = 0.8;  // multiplies lr every decay_every epochs
  int decay_every = 3;
};

// Learning rate after the configured per-epoch decay (epoch counts from 0).
double scheduled_lr(const AdamConfig& cfg, int epoch);

// Adaptive-moment optimizer with bias correction. Steps are skipped wholesale
// when any gradient entry is non-finite. Moment buffers key off parameter
// identity, and updates walk the caller's parameter list in order, so runs
// are bit-reproducible.
class Adam {
 public:
  explicit Adam(const AdamConfig& cfg) : cfg_(cfg) {}

  // Applies one update at the given learning rate. Returns false (and counts
  // the skip) when the gradients contain a non-finite value.
  bool step(const NamedTensors& params, const ag::GradMap& grads, double lr);

  int skipped() const { return skipped_; }
  int64_t steps_taken() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  int64_t steps_ = 0;
  int skipped_ = 0;
  std::unordered_map<const ag::Tensor*, std::vector<double>> m_, v_;
};

}  // namespace recap
