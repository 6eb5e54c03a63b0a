#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

namespace recap {

// Metrics score token-id sequences as given; callers strip EOS/BOS/PAD before
// scoring so ids are treated opaquely (permutation invariance holds).
using TokenSeq = std::vector<int>;
using RefSet = std::vector<TokenSeq>;

// Document frequencies of 1..4-grams over a reference corpus, counted per
// image: df(g) = number of images with g in at least one reference.
struct NgramStats {
  std::array<std::unordered_map<std::string, double>, 4> df;
  double log_ref_count = 0.0;  // log of the number of images
  int n_images = 0;
};

// Encodes an n-gram of token ids as a byte key.
std::string ngram_key(const TokenSeq& seq, size_t start, size_t n);

// refs_by_image[i] holds all references of image i. UsageError if empty.
NgramStats build_df(const std::vector<RefSet>& refs_by_image);

// TF-IDF n-gram cosine with per-reference count clipping, a Gaussian length
// penalty exp(-(lc-lr)^2 / (2 sigma^2)), averaged over references and over
// n = 1..4, scaled by 10.
double cider_d(const TokenSeq& candidate, const RefSet& refs, const NgramStats& stats,
               double sigma = 6.0);

// Corpus-level score: clipped n-gram precisions pooled over all pairs,
// geometric mean times brevity penalty; zero if any precision is zero.
double bleu(const std::vector<TokenSeq>& candidates, const std::vector<RefSet>& refs, int max_n);

// Longest-common-subsequence F-measure (beta = 1.2), max over references.
double rouge_l(const TokenSeq& candidate, const RefSet& refs);

struct EvalReport {
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
  int n_images = 0;
};

// JSON {"bleu1":f,"bleu4":f,"rouge_l":f,"cider_d":f,"n_images":int}.
void save_report(const EvalReport& report, const std::string& path);

}  // namespace recap
