#pragma once

#include <optional>
#include <string>
#include <vector>

#include "recap/data.hpp"
#include "recap/decoder.hpp"
#include "recap/metrics.hpp"
#include "recap/objectives.hpp"
#include "recap/retrieval.hpp"

namespace recap {

// One per-epoch row of the training log. Unused reward columns stay zero for
// the phases that have no sampling.
struct TrainLogRow {
  std::string phase;       // "retrieval" | "xe" | "rl"
  int epoch = 0;
  double loss = 0.0;
  double mean_r_s = 0.0;      // mean full-model sample reward
  double mean_r_s_off = 0.0;  // mean switch-off sample reward
  double mean_wr = 0.0;       // mean recalled-word reward
  double val_cider = 0.0;
  double val_bleu4 = 0.0;
  double lr = 0.0;
};

// Appends CSV rows to a file, writing the header when the file starts empty.
// A null/empty path makes append() a no-op so training code can always log.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(std::string path);
  void append(const TrainLogRow& row);
  static std::string header();

 private:
  std::string path_;
};

// ---------------------------------------------------------------------------
// retrieval phase

struct RetrievalTrainConfig {
  int epochs = 30;
  int batch_size = 16;
  uint64_t seed = 1;
  AdamConfig adam;  // lr calibrated for the summed batch loss

  RetrievalTrainConfig() {
    adam.lr = 2e-4;
    adam.decay_factor = 1.0;  // flat by default; epochs are few
    adam.decay_every = 10;
  }
};

struct RetrievalTrainResult {
  std::vector<double> epoch_losses;  // mean per-batch triplet loss
  double val_r1 = 0.0;               // validation caption retrieval after training
  double val_r5 = 0.0;
};

// Hard-negative triplet training over all (image, caption) pairs of the
// training split; batches are reshuffled each epoch, deterministically in the
// seed. Leftover batches smaller than 2 pairs are dropped (no negatives).
RetrievalTrainResult train_retrieval(RetrievalModel& m, const Dataset& ds,
                                     const RetrievalTrainConfig& cfg, TrainLog* log = nullptr);

// ---------------------------------------------------------------------------
// captioning: cross-entropy phase

struct CaptionTrainConfig {
  int epochs = 40;
  int batch_size = 16;
  uint64_t seed = 1;
  int max_len = 16;
  int beam_size = 1;             // decode width used for per-epoch validation
  bool clamp_switch = false;     // ablation: train with the copy gate forced off
  AdamConfig adam;               // defaults are already the XE schedule
};

struct CaptionEpochStats {
  double train_loss = 0.0;  // mean per-token cross-entropy
  double val_ppl = 0.0;     // exp(mean per-token val cross-entropy)
  double val_cider = 0.0;
  double val_bleu4 = 0.0;
};

struct CaptionTrainResult {
  std::vector<CaptionEpochStats> epochs;
  int best_epoch = -1;        // epoch whose weights the model ends up carrying
  double best_val_cider = 0.0;
};

// Teacher-forced cross-entropy training with batch-mean loss. Tracks
// validation CIDEr every epoch and restores the best-scoring weights at the
// end, so the returned model is the one later phases should start from.
CaptionTrainResult train_caption_xe(DecoderParams& p, const Dataset& ds, const RecallCache& cache,
                                    const NgramStats& stats, const CaptionTrainConfig& cfg,
                                    TrainLog* log = nullptr);

// Per-token perplexity of a split under teacher forcing.
double split_perplexity(DecoderParams& p, const Dataset& ds, const RecallCache& cache, Split split,
                        bool clamp_switch = false);

// ---------------------------------------------------------------------------
// captioning: reward-optimization phase

struct RlTrainConfig {
  int epochs = 10;
  int batch_size = 16;
  uint64_t seed = 1;
  int max_len = 16;
  double lambda = 0.5;
  AdamConfig adam;

  RlTrainConfig() {
    adam.lr = 5e-5;
    adam.decay_factor = 0.1;
    adam.decay_every = 50;
  }
};

struct RlTrainResult {
  std::vector<TrainLogRow> epochs;
  double train_cider_before = 0.0;  // greedy decode on the training split
  double train_cider_after = 0.0;
};

// Two-channel policy-gradient training (guide term on the switch-off policy,
// recalled-word term on the full model), batch-mean loss, per-image rng
// streams forked deterministically from the seed.
RlTrainResult train_caption_rl(DecoderParams& p, const Dataset& ds, const RecallCache& cache,
                               const NgramStats& stats, const RlTrainConfig& cfg,
                               TrainLog* log = nullptr);

// ---------------------------------------------------------------------------
// evaluation

// Document frequencies of the training split's references.
NgramStats train_split_stats(const Dataset& ds);

const RecalledWordSet& recall_for(const RecallCache& cache, const std::string& image_id);

// Decodes every image of the split (greedy for beam_size 1, beam otherwise)
// and scores against the split references.
EvalReport evaluate_split(DecoderParams& p, const Dataset& ds, const RecallCache& cache,
                          Split split, const NgramStats& stats, int beam_size = 1,
                          int max_len = 16, bool clamp_switch = false);

// Mean per-image caption score of greedy decodes on a split.
double split_cider(DecoderParams& p, const Dataset& ds, const RecallCache& cache, Split split,
                   const NgramStats& stats, int max_len = 16, bool clamp_switch = false);

}  // namespace recap
