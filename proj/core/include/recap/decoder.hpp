#pragma once

#include <string>
#include <vector>

#include "recap/checkpoint.hpp"
#include "recap/data.hpp"
#include "recap/nn.hpp"
#include "recap/retrieval.hpp"
#include "recap/rng.hpp"
#include "recap/tape.hpp"
#include "recap/vocab.hpp"

namespace recap {

struct DecoderDims {
  int vocab = 0;        // V, set from the vocabulary
  int embed_dim = 64;   // E, word embedding size
  int hidden_dim = 64;  // H, both recurrent layers
  int attn_dim = 64;    // A, both attention MLPs
  int feat_dim = 16;    // D, region/global feature size
};

// Two-layer attention decoder with a recalled-word side channel. Layer one
// consumes [prev word embedding, global feature, layer-two hidden]; its
// hidden state drives attention over region features; layer two consumes
// [attended feature, layer-one hidden]. The second hidden state then scores
// the recalled words, and a learned scalar switch mixes the full-vocabulary
// distribution with a copy distribution over those words.
struct DecoderParams {
  DecoderDims dims;

  ag::Tensor embedding;     // [V, E] — also supplies recalled-word vectors x_i
  ag::LstmCell lstm1;   // input E + D + H
  ag::LstmCell lstm2;   // input D + H
  ag::Tensor w_v1, w_h1;    // visual attention [A, D], [A, H]
  ag::Tensor w_v;           // visual attention read vector [A]
  ag::Tensor w_r, w_h2, w_v2;  // recalled attention [A, E], [A, H], [A, D]
  ag::Tensor w_x;           // recalled attention read vector [A]
  ag::Tensor w_l;           // guide logits [V, E + H]
  ag::Tensor w_sh, w_sc, w_sx;  // switch rows [H], [E], [E]
  ag::Tensor b_s;           // switch bias, scalar

  DecoderParams(const DecoderDims& dims, Rng& rng);

  NamedTensors named_tensors();
};

struct DecoderState {
  ag::LstmState s1;
  ag::LstmState s2;
  int prev_word = Vocabulary::bos_id;
};

DecoderState decoder_init_state(ag::Tape& t, DecoderParams& p);

// Everything one decoding step produces; tensors stay on the tape so training
// can differentiate through them.
struct StepOutput {
  ag::Var p_vocab;   // P^v: full-vocabulary guide distribution [V]
  ag::Var p_copy;    // P^r: copy distribution [V]; zeros when no recalled words
  ag::Var s;         // switch scalar in [0,1]; exactly 0 when no recalled words
  ag::Var p_mixed;   // P = (1-s) P^v + s P^r [V]
  ag::Var alpha_v;   // region attention weights [k]
  ag::Var alpha_r;   // recalled-word attention weights [m]; empty Var when m=0
  ag::Var ctx;       // recalled context vector [E]; zeros when m=0
  ag::Var h2;        // layer-two hidden [H]
  DecoderState next;  // prev_word is NOT advanced; caller sets the chosen token
};

struct BaseStep {
  ag::Var h2;
  ag::Var alpha_v;
  ag::Var att;
  DecoderState next;
};

// Layer-one step, visual attention, layer-two step.
BaseStep base_decode_step(ag::Tape& t, DecoderParams& p, const DecoderState& state, ag::Var regions,
                          ag::Var global);

struct RecallAttention {
  ag::Var alpha_r;  // [m]
  ag::Var ctx;      // [E]
};

// Scores each recalled word's embedding against the current layer-two hidden
// and the global feature. Requires at least one recalled word.
RecallAttention recalled_attention(ag::Tape& t, DecoderParams& p, ag::Var h2, ag::Var global,
                                   const std::vector<int>& recalled_ids);

// softmax over vocabulary logits from [ctx, h2]; PAD and BOS carry zero
// probability (masked before the softmax).
ag::Var guide_distribution(ag::Tape& t, DecoderParams& p, ag::Var ctx, ag::Var h2);

// Expands recalled-word attention weights to vocabulary size: ids keep their
// weight, every other word gets zero.
ag::Var copy_distribution(ag::Tape& t, int vocab_size, ag::Var alpha_r,
                          const std::vector<int>& recalled_ids);

struct SwitchMix {
  ag::Var s;
  ag::Var p_mixed;
};

// s = sigmoid(w_sh.h2 + w_sc.ctx + w_sx.x_prev + b); P = (1-s)P^v + sP^r.
// With no recalled words (m = 0) the switch is pinned to exactly 0 and
// P = P^v, since an empty copy distribution could not normalize.
SwitchMix switch_and_mix(ag::Tape& t, DecoderParams& p, ag::Var h2, ag::Var ctx, ag::Var x_prev,
                         ag::Var p_vocab, ag::Var p_copy, int m);

// One full decoding step over an image's features.
StepOutput decode_step(ag::Tape& t, DecoderParams& p, const DecoderState& state, ag::Var regions,
                       ag::Var global, const RecalledWordSet& recalled,
                       bool force_switch_off = false);

// Stacks an image's region features into a [k, D] constant on the tape.
ag::Var regions_var(ag::Tape& t, const ImageRecord& image);
ag::Var global_var(ag::Tape& t, const ImageRecord& image);

// A decoded caption with everything the trace file wants.
struct DecodeResult {
  std::vector<int> tokens;                      // generated ids, EOS kept if reached
  double logprob = 0.0;                         // sum of log P over generated tokens
  std::vector<double> switch_trace;             // s per step
  std::vector<std::vector<double>> copy_trace;  // alpha_r per step ([] when m=0)
};

// Deterministic argmax decoding; ties take the lowest token id. Stops after
// EOS or max_len tokens. With force_switch_off the argmax runs over P^v.
DecodeResult generate_greedy(DecoderParams& p, const ImageRecord& image,
                             const RecalledWordSet& recalled, int max_len,
                             bool force_switch_off = false);

// One multinomial sample per step from P (or P^v when forced). Log-probs of
// the drawn tokens stay on the caller's tape for gradient use.
struct SampleResult {
  std::vector<int> tokens;
  std::vector<ag::Var> step_logprobs;  // log P(w_t), one per generated token
  std::vector<double> switch_trace;
};
SampleResult sample_caption(ag::Tape& t, DecoderParams& p, const ImageRecord& image,
                            const RecalledWordSet& recalled, int max_len, bool force_switch_off,
                            Rng& rng);

// Length-complete beam search over summed log P. Finished hypotheses compete
// by total log-probability with no length normalization; ties prefer the
// lexicographically smaller token sequence. beam_size 1 reproduces greedy.
DecodeResult generate_beam(DecoderParams& p, const ImageRecord& image,
                           const RecalledWordSet& recalled, int beam_size, int max_len);

// One line per image: {"image_id", "caption", "logprob", "switch_trace",
// "copy_trace"} with the caption rendered as word strings.
struct DecodeOutput {
  std::string image_id;
  DecodeResult result;
};
void save_decode_outputs(const std::vector<DecodeOutput>& outputs, const Vocabulary& vocab,
                         const std::string& path);

}  // namespace recap
