#include "recap/retrieval.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include "json.hpp"
#include "recap/errors.hpp"

namespace recap {

using namespace ag;

RetrievalModel::RetrievalModel(const RetrievalDims& d, int vocab_size, Rng& rng) : dims(d) {
  if (d.hidden_dim % 2 != 0) {
    throw ConfigError("retrieval model: hidden dimension must be even, got " +
                      std::to_string(d.hidden_dim));
  }
  if (d.feat_dim < 1 || d.embed_dim < 1 || d.hidden_dim < 2 || d.attn_dim < 1 || vocab_size < 5) {
    throw ConfigError("retrieval model: non-positive dimension");
  }
  w_image = ag::init_weight(d.hidden_dim, d.feat_dim, rng);
  embedding = ag::init_weight(vocab_size, d.embed_dim, rng);
  fwd = ag::LstmCell(d.embed_dim, d.hidden_dim / 2, rng);
  bwd = ag::LstmCell(d.embed_dim, d.hidden_dim / 2, rng);
  w_su = ag::init_weight(d.attn_dim, d.hidden_dim, rng);
  w_v = ag::init_weight(d.attn_dim, d.feat_dim, rng);
  w_s = Tensor::uniform({d.attn_dim}, rng, 1.0 / std::sqrt(static_cast<double>(d.attn_dim)), true);
}

NamedTensors RetrievalModel::named_tensors() {
  return {
      {"image_proj", &w_image}, {"word_embedding", &embedding},
      {"enc_fwd_w", &fwd.w},    {"enc_fwd_b", &fwd.b},
      {"enc_bwd_w", &bwd.w},    {"enc_bwd_b", &bwd.b},
      {"pool_state", &w_su},    {"pool_image", &w_v},
      {"pool_read", &w_s},
  };
}

Var embed_image(Tape& t, RetrievalModel& m, Var global) {
  if (global.value().rank() != 1 || global.value().dim(0) != m.dims.feat_dim) {
    throw DimError("embed_image: feature shape " + global.value().shape_str() +
                   " does not match model dimension " + std::to_string(m.dims.feat_dim));
  }
  return matmul(t.param(m.w_image), global);
}

std::vector<Var> caption_states(Tape& t, RetrievalModel& m, const std::vector<int>& tokens) {
  if (tokens.empty()) throw UsageError("caption_states: empty token sequence");
  const int n = static_cast<int>(tokens.size());
  const int half = m.dims.hidden_dim / 2;

  Var table = t.param(m.embedding);
  std::vector<Var> embeds;
  embeds.reserve(static_cast<size_t>(n));
  for (int tok : tokens) {
    if (tok < 0 || tok >= m.vocab_size()) {
      throw UsageError("caption_states: token id " + std::to_string(tok) + " outside vocabulary");
    }
    embeds.push_back(row(table, tok));
  }

  std::vector<Var> fwd_h(static_cast<size_t>(n)), bwd_h(static_cast<size_t>(n));
  ag::LstmState s = ag::lstm_zero_state(t, half);
  for (int i = 0; i < n; ++i) {
    s = ag::lstm_step(t, m.fwd, embeds[static_cast<size_t>(i)], s);
    fwd_h[static_cast<size_t>(i)] = s.h;
  }
  s = ag::lstm_zero_state(t, half);
  for (int i = n - 1; i >= 0; --i) {
    s = ag::lstm_step(t, m.bwd, embeds[static_cast<size_t>(i)], s);
    bwd_h[static_cast<size_t>(i)] = s.h;
  }

  std::vector<Var> states(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    states[static_cast<size_t>(i)] =
        concat({fwd_h[static_cast<size_t>(i)], bwd_h[static_cast<size_t>(i)]});
  }
  return states;
}

Var attend_pool(Tape& t, RetrievalModel& m, const std::vector<Var>& states, Var global) {
  if (states.empty()) throw UsageError("attend_pool: no states");
  Var wsu = t.param(m.w_su);
  Var wv = t.param(m.w_v);
  Var ws = t.param(m.w_s);
  Var image_part = matmul(wv, global);
  std::vector<Var> scores;
  scores.reserve(states.size());
  for (const Var& s : states) {
    scores.push_back(dot(ws, tanh(add(matmul(wsu, s), image_part))));
  }
  Var alpha = softmax(pack(scores));
  Var pooled;
  for (size_t i = 0; i < states.size(); ++i) {
    Var term = vscale(states[i], at(alpha, static_cast<int>(i)));
    pooled = i == 0 ? term : add(pooled, term);
  }
  return pooled;
}

Var embed_caption(Tape& t, RetrievalModel& m, const std::vector<int>& tokens, Var global) {
  return attend_pool(t, m, caption_states(t, m, tokens), global);
}

Var cosine(Var a, Var b) {
  double na = 0.0, nb = 0.0;
  for (int64_t i = 0; i < a.value().numel(); ++i) na += a.value()[i] * a.value()[i];
  for (int64_t i = 0; i < b.value().numel(); ++i) nb += b.value()[i] * b.value()[i];
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine: zero-norm input");
  Var denom = sqrt(mul(dot(a, a), dot(b, b)));
  return div(dot(a, b), denom);
}

Var triplet_loss(Tape& t, Var scores, double margin) {
  const Tensor sv = scores.value();
  if (sv.rank() != 2 || sv.dim(0) != sv.dim(1)) {
    throw DimError("triplet_loss: expected a square score matrix, got " + sv.shape_str());
  }
  const int b = sv.dim(0);
  if (b < 2) throw UsageError("triplet_loss: batch of " + std::to_string(b) + " has no negatives");

  Var total = t.constant(0.0);
  for (int i = 0; i < b; ++i) {
    // hardest caption negative in row i and hardest image negative in col i
    int jc = -1, ji = -1;
    for (int j = 0; j < b; ++j) {
      if (j == i) continue;
      if (jc < 0 || sv.at2(i, j) > sv.at2(i, jc)) jc = j;
      if (ji < 0 || sv.at2(j, i) > sv.at2(ji, i)) ji = j;
    }
    Var pos = at(row(scores, i), i);
    Var neg_c = at(row(scores, i), jc);
    Var neg_i = at(row(scores, ji), i);
    Var hinge_c = relu(add_const(sub(neg_c, pos), margin));
    Var hinge_i = relu(add_const(sub(neg_i, pos), margin));
    total = add(total, hinge_c);
    total = add(total, hinge_i);
  }
  return total;
}

Var batch_score_matrix(Tape& t, RetrievalModel& m,
                       const std::vector<std::pair<const ImageRecord*, int>>& pairs) {
  const int b = static_cast<int>(pairs.size());
  if (b < 2) throw UsageError("batch_score_matrix: need at least two pairs");

  std::vector<Var> globals(static_cast<size_t>(b));
  std::vector<Var> image_vecs(static_cast<size_t>(b));
  std::vector<std::vector<Var>> states(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    const ImageRecord* img = pairs[static_cast<size_t>(i)].first;
    int cap = pairs[static_cast<size_t>(i)].second;
    if (cap < 0 || cap >= static_cast<int>(img->captions.size())) {
      throw UsageError("batch_score_matrix: caption index out of range for image " + img->id);
    }
    globals[static_cast<size_t>(i)] =
        t.constant(Tensor({m.dims.feat_dim}, img->global));
    image_vecs[static_cast<size_t>(i)] = embed_image(t, m, globals[static_cast<size_t>(i)]);
    states[static_cast<size_t>(i)] =
        caption_states(t, m, img->captions[static_cast<size_t>(cap)]);
  }

  std::vector<Var> rows_v(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    std::vector<Var> entries(static_cast<size_t>(b));
    for (int j = 0; j < b; ++j) {
      Var g = attend_pool(t, m, states[static_cast<size_t>(j)], globals[static_cast<size_t>(i)]);
      entries[static_cast<size_t>(j)] = cosine(image_vecs[static_cast<size_t>(i)], g);
    }
    rows_v[static_cast<size_t>(i)] = pack(entries);
  }
  return stack_rows(rows_v);
}

// ---------------------------------------------------------------------------

CorpusIndex index_corpus(RetrievalModel& m, const Corpus& corpus) {
  CorpusIndex index;
  index.states.reserve(corpus.entries.size());
  for (const auto& entry : corpus.entries) {
    Tape t;
    std::vector<Var> sts = caption_states(t, m, entry.tokens);
    std::vector<std::vector<double>> vals;
    vals.reserve(sts.size());
    for (const Var& s : sts) vals.push_back(s.value().vec());
    index.states.push_back(std::move(vals));
  }
  return index;
}

TopK retrieve_top_k(RetrievalModel& m, const CorpusIndex& index, const Corpus& corpus,
                    const std::vector<double>& global, const std::string& image_id, int k,
                    bool exclude_own) {
  if (corpus.entries.empty()) throw UsageError("retrieve_top_k: empty corpus");
  if (index.states.size() != corpus.entries.size()) {
    throw UsageError("retrieve_top_k: corpus index does not match corpus");
  }
  if (k < 1) throw UsageError("retrieve_top_k: k must be positive");

  std::vector<ScoredCaption> scored;
  for (size_t e = 0; e < corpus.entries.size(); ++e) {
    if (exclude_own && corpus.entries[e].image_id == image_id) continue;
    Tape t;
    Var gv = t.constant(Tensor({static_cast<int>(global.size())}, global));
    Var img_vec = embed_image(t, m, gv);
    std::vector<Var> sts;
    sts.reserve(index.states[e].size());
    for (const auto& sv : index.states[e]) {
      sts.push_back(t.constant(Tensor({static_cast<int>(sv.size())}, sv)));
    }
    Var pooled = attend_pool(t, m, sts, gv);
    double score = cosine(img_vec, pooled).value().scalar_value();
    scored.push_back({static_cast<int>(e), score});
  }

  std::sort(scored.begin(), scored.end(), [](const ScoredCaption& a, const ScoredCaption& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.corpus_index < b.corpus_index;
  });

  TopK out;
  out.truncated = static_cast<int>(scored.size()) < k;
  size_t take = std::min(scored.size(), static_cast<size_t>(k));
  out.entries.assign(scored.begin(), scored.begin() + static_cast<long>(take));
  return out;
}

double recall_at_k(RetrievalModel& m, const Dataset& ds, Split split, int k) {
  std::vector<int> idx = ds.split_indices(split);
  if (idx.empty()) throw UsageError("recall_at_k: split has no images");

  // candidate pool: every caption of the split, tagged with its image
  Corpus pool;
  for (int i : idx) {
    const ImageRecord& img = ds.images[static_cast<size_t>(i)];
    for (const auto& cap : img.captions) pool.entries.push_back({cap, img.id});
  }
  CorpusIndex index = index_corpus(m, pool);

  int hits = 0;
  for (int i : idx) {
    const ImageRecord& img = ds.images[static_cast<size_t>(i)];
    TopK top = retrieve_top_k(m, index, pool, img.global, img.id, k, /*exclude_own=*/false);
    for (const auto& e : top.entries) {
      if (pool.entries[static_cast<size_t>(e.corpus_index)].image_id == img.id) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

// ---------------------------------------------------------------------------

RecalledWordSet build_recalled_words(const std::vector<std::vector<int>>& captions,
                                     const std::set<int>* stopwords) {
  RecalledWordSet out;
  std::unordered_set<int> seen;
  for (const auto& cap : captions) {
    for (int id : cap) {
      if (id >= 0 && id < Vocabulary::reserved_count) continue;
      if (stopwords && stopwords->count(id)) continue;
      if (seen.insert(id).second) out.word_ids.push_back(id);
    }
  }
  return out;
}

RecallCache build_recall_cache(RetrievalModel& m, const Dataset& ds, const Corpus& corpus, int k,
                               bool exclude_own, const std::set<int>* stopwords) {
  CorpusIndex index = index_corpus(m, corpus);
  RecallCache cache;
  cache.reserve(ds.images.size());
  for (const auto& img : ds.images) {
    TopK top = retrieve_top_k(m, index, corpus, img.global, img.id, k, exclude_own);
    std::vector<std::vector<int>> caps;
    std::vector<int> sources;
    for (const auto& e : top.entries) {
      caps.push_back(corpus.entries[static_cast<size_t>(e.corpus_index)].tokens);
      sources.push_back(e.corpus_index);
    }
    RecalledWordSet set = build_recalled_words(caps, stopwords);
    set.source_captions = std::move(sources);
    cache.emplace_back(img.id, std::move(set));
  }
  return cache;
}

void save_recall_cache(const RecallCache& cache, const Vocabulary& vocab,
                       const std::string& path) {
  std::ofstream os(path);
  if (!os) throw UsageError("save_recall_cache: cannot open " + path + " for writing");
  for (const auto& [image_id, set] : cache) {
    nlohmann::ordered_json j;
    j["image_id"] = image_id;
    std::vector<std::string> words;
    words.reserve(set.word_ids.size());
    for (int id : set.word_ids) words.push_back(vocab.token(id));
    j["words"] = words;
    j["source_captions"] = set.source_captions;
    os << j.dump() << '\n';
  }
  if (!os) throw UsageError("save_recall_cache: write failed for " + path);
}

RecallCache load_recall_cache(const std::string& path, const Vocabulary& vocab) {
  std::ifstream is(path);
  if (!is) throw UsageError("load_recall_cache: cannot open " + path);
  RecallCache cache;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad json: ") + e.what(), line_no);
    }
    try {
      std::string image_id = j.at("image_id").get<std::string>();
      RecalledWordSet set;
      for (const auto& w : j.at("words")) {
        int id = vocab.id(w.get<std::string>());
        if (id < Vocabulary::reserved_count) {
          throw ParseError("recall cache holds reserved or unknown word '" +
                               w.get<std::string>() + "'",
                           line_no);
        }
        set.word_ids.push_back(id);
      }
      set.source_captions = j.at("source_captions").get<std::vector<int>>();
      cache.emplace_back(std::move(image_id), std::move(set));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad field: ") + e.what(), line_no);
    }
  }
  return cache;
}

}  // namespace recap
