#include "recap/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <utility>

#include "recap/errors.hpp"
#include "recap/tape.hpp"

namespace recap {

using namespace ag;

// ---------------------------------------------------------------------------
// log

TrainLog::TrainLog(std::string path) : path_(std::move(path)) {}

std::string TrainLog::header() {
  return "phase,epoch,loss,mean_r_s,mean_r_s_off,mean_wr,val_cider,val_bleu4,lr";
}

void TrainLog::append(const TrainLogRow& row) {
  if (path_.empty()) return;
  const bool fresh =
      !std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw UsageError("training log: cannot open " + path_);
  if (fresh) out << header() << "\n";
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                row.phase.c_str(), row.epoch, row.loss, row.mean_r_s, row.mean_r_s_off,
                row.mean_wr, row.val_cider, row.val_bleu4, row.lr);
  out << buf << "\n";
}

// ---------------------------------------------------------------------------
// shared helpers

namespace {

std::vector<std::pair<int, int>> caption_pairs(const Dataset& ds, Split split) {
  std::vector<std::pair<int, int>> pairs;
  for (int idx : ds.split_indices(split)) {
    const auto& img = ds.images[static_cast<size_t>(idx)];
    for (int c = 0; c < static_cast<int>(img.captions.size()); ++c) pairs.emplace_back(idx, c);
  }
  return pairs;
}

std::vector<std::vector<double>> snapshot_weights(NamedTensors params) {
  std::vector<std::vector<double>> snap;
  for (auto& [name, w] : params) {
    std::vector<double> v(static_cast<size_t>(w->numel()));
    for (int64_t j = 0; j < w->numel(); ++j) v[static_cast<size_t>(j)] = (*w)[j];
    snap.push_back(std::move(v));
  }
  return snap;
}

void restore_weights(NamedTensors params, const std::vector<std::vector<double>>& snap) {
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor* w = params[i].second;
    for (int64_t j = 0; j < w->numel(); ++j) (*w)[j] = snap[i][static_cast<size_t>(j)];
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// retrieval phase

RetrievalTrainResult train_retrieval(RetrievalModel& m, const Dataset& ds,
                                     const RetrievalTrainConfig& cfg, TrainLog* log) {
  if (cfg.epochs < 0) throw UsageError("train_retrieval: negative epoch count");
  if (cfg.batch_size < 2) throw UsageError("train_retrieval: batch size must be at least 2");
  std::vector<std::pair<int, int>> pairs = caption_pairs(ds, Split::train);
  if (pairs.empty()) throw UsageError("train_retrieval: training split is empty");

  RetrievalTrainResult result;
  Adam opt(cfg.adam);
  Rng order_rng(cfg.seed);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = order_rng.fork(static_cast<uint64_t>(epoch));
    epoch_rng.shuffle(pairs);
    const double lr = scheduled_lr(cfg.adam, epoch);
    double loss_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start + 2 <= pairs.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t stop = std::min(pairs.size(), start + static_cast<size_t>(cfg.batch_size));
      if (stop - start < 2) break;  // a single pair has no negatives
      std::vector<std::pair<const ImageRecord*, int>> batch;
      for (size_t i = start; i < stop; ++i) {
        batch.emplace_back(&ds.images[static_cast<size_t>(pairs[i].first)], pairs[i].second);
      }
      Tape t;
      Var scores = batch_score_matrix(t, m, batch);
      Var loss = triplet_loss(t, scores, m.margin);
      t.backward(loss);
      opt.step(m.named_tensors(), t.param_grads(), lr);
      loss_sum += loss.value().scalar_value();
      ++batches;
    }
    double mean_loss = batches > 0 ? loss_sum / batches : 0.0;
    result.epoch_losses.push_back(mean_loss);
    if (log) {
      TrainLogRow row;
      row.phase = "retrieval";
      row.epoch = epoch;
      row.loss = mean_loss;
      row.lr = lr;
      log->append(row);
    }
  }
  result.val_r1 = recall_at_k(m, ds, Split::val, 1);
  result.val_r5 = recall_at_k(m, ds, Split::val, 5);
  return result;
}

// ---------------------------------------------------------------------------
// evaluation helpers

NgramStats train_split_stats(const Dataset& ds) {
  std::vector<RefSet> refs;
  for (int idx : ds.split_indices(Split::train)) {
    RefSet image_refs;
    for (const auto& cap : ds.images[static_cast<size_t>(idx)].captions) {
      image_refs.push_back(strip_special(cap));
    }
    refs.push_back(std::move(image_refs));
  }
  return build_df(refs);
}

const RecalledWordSet& recall_for(const RecallCache& cache, const std::string& image_id) {
  for (const auto& [id, set] : cache) {
    if (id == image_id) return set;
  }
  throw UsageError("recall cache has no entry for image " + image_id);
}

EvalReport evaluate_split(DecoderParams& p, const Dataset& ds, const RecallCache& cache,
                          Split split, const NgramStats& stats, int beam_size, int max_len,
                          bool clamp_switch) {
  if (beam_size < 1) throw UsageError("evaluate_split: beam size must be positive");
  std::vector<TokenSeq> candidates;
  std::vector<RefSet> refs;
  double rouge_sum = 0.0, cider_sum = 0.0;
  int n = 0;
  for (int idx : ds.split_indices(split)) {
    const ImageRecord& img = ds.images[static_cast<size_t>(idx)];
    const RecalledWordSet& recall = recall_for(cache, img.id);
    DecodeResult dec = (beam_size == 1 || clamp_switch)
                           ? generate_greedy(p, img, recall, max_len, clamp_switch)
                           : generate_beam(p, img, recall, beam_size, max_len);
    TokenSeq cand = strip_special(dec.tokens);
    RefSet image_refs;
    for (const auto& cap : img.captions) image_refs.push_back(strip_special(cap));
    cider_sum += cider_d(cand, image_refs, stats);
    rouge_sum += cand.empty() ? 0.0 : rouge_l(cand, image_refs);
    candidates.push_back(std::move(cand));
    refs.push_back(std::move(image_refs));
    ++n;
  }
  if (n == 0) throw UsageError("evaluate_split: split is empty");
  EvalReport report;
  report.bleu1 = bleu(candidates, refs, 1);
  report.bleu4 = bleu(candidates, refs, 4);
  report.rouge_l = rouge_sum / n;
  report.cider_d = cider_sum / n;
  report.n_images = n;
  return report;
}

double split_cider(DecoderParams& p, const Dataset& ds, const RecallCache& cache, Split split,
                   const NgramStats& stats, int max_len, bool clamp_switch) {
  double sum = 0.0;
  int n = 0;
  for (int idx : ds.split_indices(split)) {
    const ImageRecord& img = ds.images[static_cast<size_t>(idx)];
    DecodeResult dec = generate_greedy(p, img, recall_for(cache, img.id), max_len, clamp_switch);
    sum += caption_reward(dec.tokens, img.captions, stats);
    ++n;
  }
  if (n == 0) throw UsageError("split_cider: split is empty");
  return sum / n;
}

double split_perplexity(DecoderParams& p, const Dataset& ds, const RecallCache& cache, Split split,
                        bool clamp_switch) {
  double total_nll = 0.0;
  int64_t total_tokens = 0;
  for (int idx : ds.split_indices(split)) {
    const ImageRecord& img = ds.images[static_cast<size_t>(idx)];
    const RecalledWordSet& recall = recall_for(cache, img.id);
    for (const auto& cap : img.captions) {
      Tape t;
      Var regions = regions_var(t, img);
      Var global = global_var(t, img);
      DecoderState st = decoder_init_state(t, p);
      std::vector<Var> probs;
      for (int tok : cap) {
        StepOutput so = decode_step(t, p, st, regions, global, recall, clamp_switch);
        probs.push_back(so.p_mixed);
        st = so.next;
        st.prev_word = tok;
      }
      XeLoss xe = cross_entropy_loss(t, probs, cap);
      total_nll += xe.loss.value().scalar_value();
      total_tokens += xe.counted_steps;
    }
  }
  if (total_tokens == 0) throw UsageError("split_perplexity: split has no caption tokens");
  return std::exp(total_nll / static_cast<double>(total_tokens));
}

// ---------------------------------------------------------------------------
// captioning: cross-entropy phase

CaptionTrainResult train_caption_xe(DecoderParams& p, const Dataset& ds, const RecallCache& cache,
                                    const NgramStats& stats, const CaptionTrainConfig& cfg,
                                    TrainLog* log) {
  if (cfg.epochs < 0) throw UsageError("train_caption_xe: negative epoch count");
  if (cfg.batch_size < 1) throw UsageError("train_caption_xe: batch size must be positive");
  std::vector<std::pair<int, int>> pairs = caption_pairs(ds, Split::train);
  if (pairs.empty()) throw UsageError("train_caption_xe: training split is empty");

  CaptionTrainResult result;
  Adam opt(cfg.adam);
  Rng order_rng(cfg.seed);
  std::vector<std::vector<double>> best_weights;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = order_rng.fork(static_cast<uint64_t>(epoch));
    epoch_rng.shuffle(pairs);
    const double lr = scheduled_lr(cfg.adam, epoch);
    double nll_sum = 0.0;
    int64_t token_sum = 0;
    for (size_t start = 0; start < pairs.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t stop = std::min(pairs.size(), start + static_cast<size_t>(cfg.batch_size));
      Tape t;
      Var total = t.constant(0.0);
      for (size_t i = start; i < stop; ++i) {
        const ImageRecord& img = ds.images[static_cast<size_t>(pairs[i].first)];
        const auto& cap = img.captions[static_cast<size_t>(pairs[i].second)];
        const RecalledWordSet& recall = recall_for(cache, img.id);
        Var regions = regions_var(t, img);
        Var global = global_var(t, img);
        DecoderState st = decoder_init_state(t, p);
        std::vector<Var> probs;
        std::vector<int> targets;
        for (int tok : cap) {
          if (static_cast<int>(targets.size()) >= cfg.max_len) break;
          StepOutput so = decode_step(t, p, st, regions, global, recall, cfg.clamp_switch);
          probs.push_back(so.p_mixed);
          targets.push_back(tok);
          st = so.next;
          st.prev_word = tok;
        }
        XeLoss xe = cross_entropy_loss(t, probs, targets);
        nll_sum += xe.loss.value().scalar_value();
        token_sum += xe.counted_steps;
        total = add(total, xe.loss);
      }
      Var loss = scale(total, 1.0 / static_cast<double>(stop - start));
      t.backward(loss);
      opt.step(p.named_tensors(), t.param_grads(), lr);
    }

    CaptionEpochStats stats_row;
    stats_row.train_loss = token_sum > 0 ? nll_sum / static_cast<double>(token_sum) : 0.0;
    stats_row.val_ppl = split_perplexity(p, ds, cache, Split::val, cfg.clamp_switch);
    EvalReport val = evaluate_split(p, ds, cache, Split::val, stats, cfg.beam_size, cfg.max_len,
                                    cfg.clamp_switch);
    stats_row.val_cider = val.cider_d;
    stats_row.val_bleu4 = val.bleu4;
    result.epochs.push_back(stats_row);

    if (result.best_epoch < 0 || stats_row.val_cider > result.best_val_cider) {
      result.best_epoch = epoch;
      result.best_val_cider = stats_row.val_cider;
      best_weights = snapshot_weights(p.named_tensors());
    }
    if (log) {
      TrainLogRow row;
      row.phase = "xe";
      row.epoch = epoch;
      row.loss = stats_row.train_loss;
      row.val_cider = stats_row.val_cider;
      row.val_bleu4 = stats_row.val_bleu4;
      row.lr = lr;
      log->append(row);
    }
  }
  if (!best_weights.empty()) restore_weights(p.named_tensors(), best_weights);
  return result;
}

// ---------------------------------------------------------------------------
// captioning: reward-optimization phase

RlTrainResult train_caption_rl(DecoderParams& p, const Dataset& ds, const RecallCache& cache,
                               const NgramStats& stats, const RlTrainConfig& cfg, TrainLog* log) {
  if (cfg.epochs < 0) throw UsageError("train_caption_rl: negative epoch count");
  if (cfg.batch_size < 1) throw UsageError("train_caption_rl: batch size must be positive");
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0) throw ConfigError("train_caption_rl: lambda not in [0,1]");
  std::vector<int> images = ds.split_indices(Split::train);
  if (images.empty()) throw UsageError("train_caption_rl: training split is empty");

  RlTrainResult result;
  result.train_cider_before = split_cider(p, ds, cache, Split::train, stats, cfg.max_len);
  Adam opt(cfg.adam);
  Rng order_rng(cfg.seed);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = order_rng.fork(static_cast<uint64_t>(epoch));
    epoch_rng.shuffle(images);
    const double lr = scheduled_lr(cfg.adam, epoch);
    double loss_sum = 0.0, rs_sum = 0.0, rso_sum = 0.0, wr_sum = 0.0;
    int batches = 0, samples = 0;
    for (size_t start = 0; start < images.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t stop = std::min(images.size(), start + static_cast<size_t>(cfg.batch_size));
      Tape t;
      Var total = t.constant(0.0);
      for (size_t i = start; i < stop; ++i) {
        const ImageRecord& img = ds.images[static_cast<size_t>(images[i])];
        const RecalledWordSet& recall = recall_for(cache, img.id);
        Rng rng_full = epoch_rng.fork(2 * i);
        Rng rng_off = epoch_rng.fork(2 * i + 1);
        RlStep step = combined_rl_step(t, p, img, recall, img.captions, stats, cfg.lambda,
                                       cfg.max_len, rng_full, rng_off);
        total = add(total, step.loss);
        rs_sum += step.rewards.r_s;
        rso_sum += step.rewards.r_s_off;
        wr_sum += step.rewards.wr;
        ++samples;
      }
      Var loss = scale(total, 1.0 / static_cast<double>(stop - start));
      t.backward(loss);
      opt.step(p.named_tensors(), t.param_grads(), lr);
      loss_sum += loss.value().scalar_value();
      ++batches;
    }
    EvalReport val = evaluate_split(p, ds, cache, Split::val, stats, 1, cfg.max_len);
    TrainLogRow row;
    row.phase = "rl";
    row.epoch = epoch;
    row.loss = batches > 0 ? loss_sum / batches : 0.0;
    row.mean_r_s = samples > 0 ? rs_sum / samples : 0.0;
    row.mean_r_s_off = samples > 0 ? rso_sum / samples : 0.0;
    row.mean_wr = samples > 0 ? wr_sum / samples : 0.0;
    row.val_cider = val.cider_d;
    row.val_bleu4 = val.bleu4;
    row.lr = lr;
    result.epochs.push_back(row);
    if (log) log->append(row);
  }
  result.train_cider_after = split_cider(p, ds, cache, Split::train, stats, cfg.max_len);
  return result;
}

}  // namespace recap
