#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "recap/checkpoint.hpp"
#include "recap/data.hpp"
#include "recap/nn.hpp"
#include "recap/tape.hpp"

namespace recap {

struct RetrievalDims {
  int feat_dim = 16;    // D, region/global feature size
  int embed_dim = 32;   // E, word embedding size
  int hidden_dim = 64;  // H, shared embedding space; per-direction H/2 (even)
  int attn_dim = 64;    // A, attention hidden size
};

// Image/caption dual encoder: images project linearly, captions run through a
// bidirectional recurrent encoder pooled by image-conditioned attention.
struct RetrievalModel {
  RetrievalDims dims;
  double margin = 0.2;  // triplet hinge margin

  ag::Tensor w_image;   // [H, D]
  ag::Tensor embedding; // [V, E]
  ag::LstmCell fwd;     // forward direction, hidden H/2
  ag::LstmCell bwd;     // backward direction, hidden H/2
  ag::Tensor w_su;      // [A, H] word-state branch of the pooling attention
  ag::Tensor w_v;       // [A, D] image branch of the pooling attention
  ag::Tensor w_s;       // [A]    attention readout

  RetrievalModel() = default;
  RetrievalModel(const RetrievalDims& dims, int vocab_size, Rng& rng);

  int vocab_size() const { return embedding.rank() == 2 ? embedding.dim(0) : 0; }
  NamedTensors named_tensors();
};

// f(I): linear projection of the global feature into the shared space.
ag::Var embed_image(ag::Tape& t, RetrievalModel& m, ag::Var global);

// Per-position encoder states s_i = [forward_i ; backward_i], each [H].
std::vector<ag::Var> caption_states(ag::Tape& t, RetrievalModel& m, const std::vector<int>& tokens);

// g(C): attention-pooled caption vector. Weights come from
// softmax_i( w_s . tanh(W_su s_i + W_v global) ).
ag::Var attend_pool(ag::Tape& t, RetrievalModel& m, const std::vector<ag::Var>& states,
                    ag::Var global);

// encode + pool in one call.
ag::Var embed_caption(ag::Tape& t, RetrievalModel& m, const std::vector<int>& tokens, ag::Var global);

// Cosine similarity; NumericError if either vector has zero norm.
ag::Var cosine(ag::Var a, ag::Var b);

// Hard-negative hinge loss over a [B,B] score matrix whose diagonal holds the
// matched pairs: per row, the hardest caption negative and hardest image
// negative each contribute [margin + negative - positive]_+; summed over rows.
// UsageError if B < 2.
ag::Var triplet_loss(ag::Tape& t, ag::Var scores, double margin);

// [B,B] cosine matrix for a batch: rows are images, columns are the matched
// captions; entry (i,j) scores image i against caption j pooled under image
// i's global feature.
ag::Var batch_score_matrix(ag::Tape& t, RetrievalModel& m,
                           const std::vector<std::pair<const ImageRecord*, int>>& pairs);

// ---------------------------------------------------------------------------
// corpus retrieval

// Encoder states of every corpus entry, computed once per model snapshot.
struct CorpusIndex {
  std::vector<std::vector<std::vector<double>>> states;  // [entry][position][H]
};
CorpusIndex index_corpus(RetrievalModel& m, const Corpus& corpus);

struct ScoredCaption {
  int corpus_index = -1;
  double score = 0.0;
};
struct TopK {
  std::vector<ScoredCaption> entries;  // scores non-increasing, ties by index
  bool truncated = false;              // fewer than K eligible entries existed
};

TopK retrieve_top_k(RetrievalModel& m, const CorpusIndex& index, const Corpus& corpus,
                    const std::vector<double>& global, const std::string& image_id, int k,
                    bool exclude_own);

// Fraction of images whose top-k candidates include one of their own
// captions; every caption of the split is a separate candidate.
double recall_at_k(RetrievalModel& m, const Dataset& ds, Split split, int k);

// ---------------------------------------------------------------------------
// recalled words

// Distinct non-reserved word ids in first-occurrence order, plus the corpus
// indices of the captions they were harvested from.
struct RecalledWordSet {
  std::vector<int> word_ids;
  std::vector<int> source_captions;
  int m() const { return static_cast<int>(word_ids.size()); }
};

RecalledWordSet build_recalled_words(const std::vector<std::vector<int>>& captions,
                                     const std::set<int>* stopwords = nullptr);

// One entry per image, in dataset order.
using RecallCache = std::vector<std::pair<std::string, RecalledWordSet>>;

RecallCache build_recall_cache(RetrievalModel& m, const Dataset& ds, const Corpus& corpus, int k,
                               bool exclude_own, const std::set<int>* stopwords = nullptr);

// JSON Lines {"image_id": str, "words": [str], "source_captions": [int]}.
void save_recall_cache(const RecallCache& cache, const Vocabulary& vocab, const std::string& path);
RecallCache load_recall_cache(const std::string& path, const Vocabulary& vocab);

}  // namespace recap
