#include "recap/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "recap/errors.hpp"
#include "recap/vocab.hpp"

namespace recap {

using namespace ag;

XeLoss cross_entropy_loss(Tape& t, const std::vector<Var>& step_probs,
                          const std::vector<int>& targets) {
  if (step_probs.empty() || step_probs.size() != targets.size()) {
    throw UsageError("cross_entropy_loss: need one distribution per target token");
  }
  XeLoss out;
  Var total = t.constant(0.0);
  for (size_t i = 0; i < targets.size(); ++i) {
    int w = targets[i];
    if (w == Vocabulary::pad_id) continue;
    const Tensor& pv = step_probs[i].value();
    if (pv.rank() != 1 || w < 0 || w >= pv.dim(0)) {
      throw UsageError("cross_entropy_loss: target " + std::to_string(w) +
                       " outside the distribution");
    }
    if (pv[w] <= 1e-12) out.floor_hit = true;
    total = add(total, at(log_clamped(step_probs[i]), w));
    ++out.counted_steps;
  }
  if (out.counted_steps == 0) {
    throw UsageError("cross_entropy_loss: every target was padding");
  }
  out.loss = scale(total, -1.0);
  return out;
}

TokenSeq strip_special(const TokenSeq& tokens) {
  TokenSeq out;
  out.reserve(tokens.size());
  for (int w : tokens) {
    if (w == Vocabulary::pad_id || w == Vocabulary::bos_id || w == Vocabulary::eos_id) continue;
    out.push_back(w);
  }
  return out;
}

double caption_reward(const TokenSeq& tokens, const RefSet& refs, const NgramStats& stats) {
  TokenSeq hyp = strip_special(tokens);
  RefSet clean;
  clean.reserve(refs.size());
  for (const TokenSeq& r : refs) clean.push_back(strip_special(r));
  if (hyp.empty()) return 0.0;  // nothing scorable was produced
  return cider_d(hyp, clean, stats);
}

double recalled_word_reward(double r_sample, double r_sample_off) {
  return r_sample - r_sample_off;
}

Var scst_term(Tape& t, const std::vector<Var>& step_logprobs, double advantage) {
  if (step_logprobs.empty()) {
    throw UsageError("scst_term: no log-probabilities to weight");
  }
  Var total = step_logprobs[0];
  for (size_t i = 1; i < step_logprobs.size(); ++i) {
    total = add(total, step_logprobs[i]);
  }
  return scale(total, -advantage);
}

RlStep combined_rl_step(Tape& t, DecoderParams& p, const ImageRecord& image,
                        const RecalledWordSet& recalled, const RefSet& refs,
                        const NgramStats& stats, double lambda, int max_len, Rng& rng_full,
                        Rng& rng_off) {
  if (lambda < 0.0 || lambda > 1.0) {
    throw ConfigError("combined_rl_step: lambda must lie in [0,1], got " +
                      std::to_string(lambda));
  }

  SampleResult sample_off = sample_caption(t, p, image, recalled, max_len, true, rng_off);
  SampleResult sample_full = sample_caption(t, p, image, recalled, max_len, false, rng_full);
  DecodeResult greedy_full = generate_greedy(p, image, recalled, max_len, false);
  DecodeResult greedy_off = generate_greedy(p, image, recalled, max_len, true);

  RlStep out;
  out.sampled_full = sample_full.tokens;
  out.sampled_off = sample_off.tokens;
  out.rewards.r_s = caption_reward(sample_full.tokens, refs, stats);
  out.rewards.r_g = caption_reward(greedy_full.tokens, refs, stats);
  out.rewards.r_s_off = caption_reward(sample_off.tokens, refs, stats);
  out.rewards.r_g_off = caption_reward(greedy_off.tokens, refs, stats);
  out.rewards.wr = recalled_word_reward(out.rewards.r_s, out.rewards.r_s_off);

  // -lambda (r_s_off - r_g_off) sum log p^v(w_off)  -  (1-lambda) wr sum log p(w_full)
  Var guide_term = scst_term(t, sample_off.step_logprobs,
                             lambda * (out.rewards.r_s_off - out.rewards.r_g_off));
  Var recall_term = scst_term(t, sample_full.step_logprobs, (1.0 - lambda) * out.rewards.wr);
  out.loss = add(guide_term, recall_term);
  return out;
}

double scheduled_lr(const AdamConfig& cfg, int epoch) {
  if (epoch < 0) throw UsageError("scheduled_lr: negative epoch");
  if (cfg.decay_every < 1) return cfg.lr;
  return cfg.lr * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

bool Adam::step(const NamedTensors& params, const GradMap& grads, double lr) {
  // gather the gradient for each parameter; a missing entry means zero
  std::vector<const std::vector<double>*> gs(params.size(), nullptr);
  double sq_norm = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    auto it = grads.find(params[i].second);
    if (it == grads.end()) continue;
    gs[i] = &it->second;
    for (double g : it->second) {
      if (!std::isfinite(g)) {
        ++skipped_;
        return false;
      }
      sq_norm += g * g;
    }
  }
  double clip_scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double norm = std::sqrt(sq_norm);
    if (norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;
  }

  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor* w = params[i].second;
    auto& m = m_[w];
    auto& v = v_[w];
    if (m.empty()) m.assign(static_cast<size_t>(w->numel()), 0.0);
    if (v.empty()) v.assign(static_cast<size_t>(w->numel()), 0.0);
    for (int64_t j = 0; j < w->numel(); ++j) {
      double g = gs[i] ? (*gs[i])[static_cast<size_t>(j)] * clip_scale : 0.0;
      auto ju = static_cast<size_t>(j);
      m[ju] = cfg_.beta1 * m[ju] + (1.0 - cfg_.beta1) * g;
      v[ju] = cfg_.beta2 * v[ju] + (1.0 - cfg_.beta2) * g * g;
      double m_hat = m[ju] / bc1;
      double v_hat = v[ju] / bc2;
      (*w)[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
  return true;
}

}  // namespace recap
