#include "recap/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "recap/errors.hpp"

namespace recap {

using namespace ag;

DecoderParams::DecoderParams(const DecoderDims& d, Rng& rng) : dims(d) {
  if (d.vocab <= Vocabulary::reserved_count) {
    throw ConfigError("decoder: vocabulary of " + std::to_string(d.vocab) +
                      " leaves no content words");
  }
  if (d.embed_dim < 1 || d.hidden_dim < 1 || d.attn_dim < 1 || d.feat_dim < 1) {
    throw ConfigError("decoder: non-positive dimension");
  }
  const int E = d.embed_dim, H = d.hidden_dim, A = d.attn_dim, D = d.feat_dim, V = d.vocab;
  embedding = init_weight(V, E, rng);
  lstm1 = LstmCell(E + D + H, H, rng);
  lstm2 = LstmCell(D + H, H, rng);
  w_v1 = init_weight(A, D, rng);
  w_h1 = init_weight(A, H, rng);
  w_v = Tensor::uniform({A}, rng, 1.0 / std::sqrt(static_cast<double>(A)), true);
  w_r = init_weight(A, E, rng);
  w_h2 = init_weight(A, H, rng);
  w_v2 = init_weight(A, D, rng);
  w_x = Tensor::uniform({A}, rng, 1.0 / std::sqrt(static_cast<double>(A)), true);
  w_l = init_weight(V, E + H, rng);
  w_sh = Tensor::uniform({H}, rng, 1.0 / std::sqrt(static_cast<double>(H)), true);
  w_sc = Tensor::uniform({E}, rng, 1.0 / std::sqrt(static_cast<double>(E)), true);
  w_sx = Tensor::uniform({E}, rng, 1.0 / std::sqrt(static_cast<double>(E)), true);
  b_s = Tensor::scalar(0.0);
  b_s.requires_grad = true;
}

NamedTensors DecoderParams::named_tensors() {
  return {
      {"embedding", &embedding},
      {"lstm1_w", &lstm1.w},
      {"lstm1_b", &lstm1.b},
      {"lstm2_w", &lstm2.w},
      {"lstm2_b", &lstm2.b},
      {"vis_region", &w_v1},
      {"vis_hidden", &w_h1},
      {"vis_read", &w_v},
      {"rec_word", &w_r},
      {"rec_hidden", &w_h2},
      {"rec_image", &w_v2},
      {"rec_read", &w_x},
      {"guide_logits", &w_l},
      {"switch_hidden", &w_sh},
      {"switch_ctx", &w_sc},
      {"switch_word", &w_sx},
      {"switch_bias", &b_s},
  };
}

DecoderState decoder_init_state(Tape& t, DecoderParams& p) {
  DecoderState st;
  st.s1 = lstm_zero_state(t, p.dims.hidden_dim);
  st.s2 = lstm_zero_state(t, p.dims.hidden_dim);
  st.prev_word = Vocabulary::bos_id;
  return st;
}

BaseStep base_decode_step(Tape& t, DecoderParams& p, const DecoderState& state, Var regions,
                          Var global) {
  const Tensor rv = regions.value();
  if (rv.rank() != 2 || rv.dim(1) != p.dims.feat_dim) {
    throw DimError("base_decode_step: regions must be [k, " + std::to_string(p.dims.feat_dim) +
                   "], got " + rv.shape_str());
  }
  if (global.value().rank() != 1 || global.value().dim(0) != p.dims.feat_dim) {
    throw DimError("base_decode_step: global feature must be [" +
                   std::to_string(p.dims.feat_dim) + "], got " + global.value().shape_str());
  }
  const int k = rv.dim(0);

  Var table = t.param(p.embedding);
  Var x_prev = row(table, state.prev_word);
  Var in1 = concat({x_prev, global, state.s2.h});
  LstmState ns1 = lstm_step(t, p.lstm1, in1, state.s1);

  Var proj_h = matmul(t.param(p.w_h1), ns1.h);  // [A], shared across regions
  Var wv1 = t.param(p.w_v1);
  Var read = t.param(p.w_v);
  std::vector<Var> scores;
  scores.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    scores.push_back(dot(read, tanh(add(matmul(wv1, row(regions, i)), proj_h))));
  }
  Var alpha = softmax(pack(scores));
  Var att = vscale(row(regions, 0), at(alpha, 0));
  for (int i = 1; i < k; ++i) {
    att = add(att, vscale(row(regions, i), at(alpha, i)));
  }

  Var in2 = concat({att, ns1.h});
  LstmState ns2 = lstm_step(t, p.lstm2, in2, state.s2);

  BaseStep out;
  out.h2 = ns2.h;
  out.alpha_v = alpha;
  out.att = att;
  out.next = DecoderState{ns1, ns2, state.prev_word};
  return out;
}

RecallAttention recalled_attention(Tape& t, DecoderParams& p, Var h2, Var global,
                                   const std::vector<int>& recalled_ids) {
  if (recalled_ids.empty()) {
    throw UsageError("recalled_attention: empty recalled-word set");
  }
  for (int id : recalled_ids) {
    if (id < Vocabulary::reserved_count || id >= p.dims.vocab) {
      throw UsageError("recalled_attention: id " + std::to_string(id) +
                       " is reserved or outside the vocabulary");
    }
  }
  const int m = static_cast<int>(recalled_ids.size());
  Var table = t.param(p.embedding);
  Var base = add(matmul(t.param(p.w_h2), h2), matmul(t.param(p.w_v2), global));  // [A]
  Var wr = t.param(p.w_r);
  Var read = t.param(p.w_x);

  std::vector<Var> embeds, scores;
  embeds.reserve(static_cast<size_t>(m));
  scores.reserve(static_cast<size_t>(m));
  for (int id : recalled_ids) {
    Var x = row(table, id);
    embeds.push_back(x);
    scores.push_back(dot(read, tanh(add(matmul(wr, x), base))));
  }
  RecallAttention out;
  out.alpha_r = softmax(pack(scores));
  out.ctx = vscale(embeds[0], at(out.alpha_r, 0));
  for (int i = 1; i < m; ++i) {
    out.ctx = add(out.ctx, vscale(embeds[static_cast<size_t>(i)], at(out.alpha_r, i)));
  }
  return out;
}

namespace {

// Additive mask that zeroes PAD and BOS after the softmax: their logits drop
// far enough below the rest that exp underflows to exactly 0.
Tensor logit_mask(int vocab) {
  Tensor mask = Tensor::zeros({vocab});
  mask[Vocabulary::pad_id] = -1e30;
  mask[Vocabulary::bos_id] = -1e30;
  return mask;
}

}  // namespace

Var guide_distribution(Tape& t, DecoderParams& p, Var ctx, Var h2) {
  Var logits = matmul(t.param(p.w_l), concat({ctx, h2}));
  Var masked = add(logits, t.constant(logit_mask(p.dims.vocab)));
  return softmax(masked);
}

Var copy_distribution(Tape& t, int vocab_size, Var alpha_r, const std::vector<int>& recalled_ids) {
  if (recalled_ids.empty()) throw UsageError("copy_distribution: empty recalled-word set");
  if (alpha_r.value().rank() != 1 ||
      alpha_r.value().dim(0) != static_cast<int>(recalled_ids.size())) {
    throw DimError("copy_distribution: weights do not match the recalled-word count");
  }
  return scatter(vocab_size, recalled_ids, alpha_r);
}

SwitchMix switch_and_mix(Tape& t, DecoderParams& p, Var h2, Var ctx, Var x_prev, Var p_vocab,
                         Var p_copy, int m) {
  SwitchMix out;
  if (m == 0) {
    out.s = t.constant(0.0);
    out.p_mixed = p_vocab;
    return out;
  }
  Var lin = add(add(dot(t.param(p.w_sh), h2), dot(t.param(p.w_sc), ctx)),
                add(dot(t.param(p.w_sx), x_prev), t.param(p.b_s)));
  out.s = sigmoid(lin);
  Var keep = sub(t.constant(1.0), out.s);
  out.p_mixed = add(vscale(p_vocab, keep), vscale(p_copy, out.s));
  return out;
}

StepOutput decode_step(Tape& t, DecoderParams& p, const DecoderState& state, Var regions,
                       Var global, const RecalledWordSet& recalled, bool force_switch_off) {
  const int m = recalled.m();
  BaseStep base = base_decode_step(t, p, state, regions, global);

  StepOutput out;
  out.h2 = base.h2;
  out.alpha_v = base.alpha_v;
  out.next = base.next;

  if (m > 0) {
    RecallAttention rec = recalled_attention(t, p, base.h2, global, recalled.word_ids);
    out.alpha_r = rec.alpha_r;
    out.ctx = rec.ctx;
    out.p_copy = copy_distribution(t, p.dims.vocab, rec.alpha_r, recalled.word_ids);
  } else {
    out.alpha_r = t.constant(0.0);  // placeholder, no recalled words to weight
    out.ctx = t.constant(Tensor::zeros({p.dims.embed_dim}));
    out.p_copy = t.constant(Tensor::zeros({p.dims.vocab}));
  }

  out.p_vocab = guide_distribution(t, p, out.ctx, out.h2);

  if (force_switch_off || m == 0) {
    out.s = t.constant(0.0);
    out.p_mixed = out.p_vocab;
  } else {
    Var x_prev = row(t.param(p.embedding), state.prev_word);
    SwitchMix mix = switch_and_mix(t, p, out.h2, out.ctx, x_prev, out.p_vocab, out.p_copy, m);
    out.s = mix.s;
    out.p_mixed = mix.p_mixed;
  }
  return out;
}

Var regions_var(Tape& t, const ImageRecord& image) {
  if (image.regions.empty()) throw UsageError("regions_var: image has no region features");
  const int k = static_cast<int>(image.regions.size());
  const int d = static_cast<int>(image.regions[0].size());
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(k) * static_cast<size_t>(d));
  for (const auto& r : image.regions) {
    if (static_cast<int>(r.size()) != d) {
      throw DimError("regions_var: ragged region features");
    }
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return t.constant(Tensor({k, d}, std::move(flat)));
}

Var global_var(Tape& t, const ImageRecord& image) {
  return t.constant(Tensor({static_cast<int>(image.global.size())}, image.global));
}

namespace {

int argmax_lowest_id(const Tensor& p) {
  int best = 0;
  for (int i = 1; i < p.dim(0); ++i) {
    if (p[i] > p[best]) best = i;  // strict: ties keep the lower id
  }
  return best;
}

std::vector<double> tensor_to_vec(const Tensor& t) {
  std::vector<double> out(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) out[static_cast<size_t>(i)] = t[i];
  return out;
}

}  // namespace

DecodeResult generate_greedy(DecoderParams& p, const ImageRecord& image,
                             const RecalledWordSet& recalled, int max_len, bool force_switch_off) {
  if (max_len < 1) throw UsageError("generate_greedy: max_len must be positive");
  Tape t;
  Var regions = regions_var(t, image);
  Var global = global_var(t, image);
  DecoderState st = decoder_init_state(t, p);

  DecodeResult out;
  for (int step = 0; step < max_len; ++step) {
    StepOutput so = decode_step(t, p, st, regions, global, recalled, force_switch_off);
    const Tensor pv = so.p_mixed.value();
    int tok = argmax_lowest_id(pv);
    out.tokens.push_back(tok);
    out.logprob += std::log(std::max(pv[tok], 1e-300));
    out.switch_trace.push_back(so.s.value().scalar_value());
    out.copy_trace.push_back(recalled.m() > 0 ? tensor_to_vec(so.alpha_r.value())
                                              : std::vector<double>{});
    st = so.next;
    st.prev_word = tok;
    if (tok == Vocabulary::eos_id) break;
  }
  return out;
}

SampleResult sample_caption(Tape& t, DecoderParams& p, const ImageRecord& image,
                            const RecalledWordSet& recalled, int max_len, bool force_switch_off,
                            Rng& rng) {
  if (max_len < 1) throw UsageError("sample_caption: max_len must be positive");
  Var regions = regions_var(t, image);
  Var global = global_var(t, image);
  DecoderState st = decoder_init_state(t, p);

  SampleResult out;
  for (int step = 0; step < max_len; ++step) {
    StepOutput so = decode_step(t, p, st, regions, global, recalled, force_switch_off);
    const Tensor pv = so.p_mixed.value();

    double u = rng.uniform();
    double cum = 0.0;
    int tok = -1, last_positive = -1;
    for (int i = 0; i < pv.dim(0); ++i) {
      if (pv[i] > 0.0) last_positive = i;
      cum += pv[i];
      if (u < cum) {
        tok = i;
        break;
      }
    }
    if (tok < 0) tok = last_positive;  // u landed in the rounding tail

    out.tokens.push_back(tok);
    out.step_logprobs.push_back(at(log_clamped(so.p_mixed), tok));
    out.switch_trace.push_back(so.s.value().scalar_value());
    st = so.next;
    st.prev_word = tok;
    if (tok == Vocabulary::eos_id) break;
  }
  return out;
}

namespace {

struct Hypothesis {
  std::vector<int> tokens;
  DecoderState state;
  double logprob = 0.0;
  std::vector<double> switch_trace;
  std::vector<std::vector<double>> copy_trace;
};

bool better_final(const Hypothesis& a, const Hypothesis& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return a.tokens < b.tokens;
}

}  // namespace

DecodeResult generate_beam(DecoderParams& p, const ImageRecord& image,
                           const RecalledWordSet& recalled, int beam_size, int max_len) {
  if (beam_size < 1) throw UsageError("generate_beam: beam size must be positive");
  if (max_len < 1) throw UsageError("generate_beam: max_len must be positive");

  Tape t;
  Var regions = regions_var(t, image);
  Var global = global_var(t, image);

  std::vector<Hypothesis> alive;
  alive.push_back(Hypothesis{{}, decoder_init_state(t, p), 0.0, {}, {}});
  std::vector<Hypothesis> finished;

  for (int step = 0; step < max_len && !alive.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    for (Hypothesis& hyp : alive) {
      StepOutput so = decode_step(t, p, hyp.state, regions, global, recalled, false);
      const Tensor pv = so.p_mixed.value();
      double s_val = so.s.value().scalar_value();
      std::vector<double> alpha = recalled.m() > 0 ? tensor_to_vec(so.alpha_r.value())
                                                   : std::vector<double>{};
      for (int w = 0; w < pv.dim(0); ++w) {
        if (pv[w] <= 0.0) continue;
        Hypothesis next = hyp;
        next.tokens.push_back(w);
        next.logprob += std::log(pv[w]);
        next.switch_trace.push_back(s_val);
        next.copy_trace.push_back(alpha);
        next.state = so.next;
        next.state.prev_word = w;
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Hypothesis& a, const Hypothesis& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      return a.tokens < b.tokens;
    });
    if (static_cast<int>(candidates.size()) > beam_size) {
      candidates.resize(static_cast<size_t>(beam_size));
    }
    alive.clear();
    for (Hypothesis& c : candidates) {
      if (c.tokens.back() == Vocabulary::eos_id) {
        finished.push_back(std::move(c));
      } else {
        alive.push_back(std::move(c));
      }
    }
  }
  // hypotheses that ran out of length are complete as-is
  for (Hypothesis& h : alive) finished.push_back(std::move(h));

  const Hypothesis* best = &finished.front();
  for (const Hypothesis& h : finished) {
    if (better_final(h, *best)) best = &h;
  }
  DecodeResult out;
  out.tokens = best->tokens;
  out.logprob = best->logprob;
  out.switch_trace = best->switch_trace;
  out.copy_trace = best->copy_trace;
  return out;
}

void save_decode_outputs(const std::vector<DecodeOutput>& outputs, const Vocabulary& vocab,
                         const std::string& path) {
  std::ofstream os(path);
  if (!os) throw UsageError("save_decode_outputs: cannot open " + path);
  for (const auto& o : outputs) {
    nlohmann::ordered_json j;
    j["image_id"] = o.image_id;
    std::vector<std::string> words;
    for (int tok : o.result.tokens) {
      if (tok == Vocabulary::pad_id || tok == Vocabulary::bos_id || tok == Vocabulary::eos_id) {
        continue;
      }
      words.push_back(vocab.token(tok));
    }
    j["caption"] = words;
    j["logprob"] = o.result.logprob;
    j["switch_trace"] = o.result.switch_trace;
    j["copy_trace"] = o.result.copy_trace;
    os << j.dump() << "\n";
  }
}

}  // namespace recap
