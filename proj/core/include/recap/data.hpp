#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "recap/rng.hpp"
#include "recap/vocab.hpp"

namespace recap {

enum class Split { train, val, test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);  // ParseError on anything else

// One image: k region feature vectors, their mean as the global feature, and
// reference captions as token-id sequences that always end with EOS.
struct ImageRecord {
  std::string id;
  std::vector<std::vector<double>> regions;
  std::vector<double> global;  // elementwise mean of regions
  std::vector<std::vector<int>> captions;
  Split split = Split::train;
};

struct CorpusEntry {
  std::vector<int> tokens;  // ends with EOS
  std::string image_id;
};

// Caption pool the retriever searches; drawn from the training split.
struct Corpus {
  std::vector<CorpusEntry> entries;
};

struct Dataset {
  std::vector<ImageRecord> images;
  int feat_dim = 0;
  Vocabulary vocab;

  std::vector<int> split_indices(Split s) const;
  const ImageRecord& by_id(const std::string& id) const;  // UsageError if absent
};

std::vector<double> mean_pool(const std::vector<std::vector<double>>& regions);

// Tokenize caption text and map to ids, appending EOS.
std::vector<int> encode_caption(const Vocabulary& vocab, const std::string& text);

// Parameters of the synthetic concept-world generator.
struct SyntheticSpec {
  int vocab_size = 60;  // total target including the 4 reserved ids
  int feat_dim = 16;
  int regions = 5;
  int num_images = 200;
  int captions_per_image = 3;
  double noise = 0.1;
  uint64_t seed = 1;
};

struct SyntheticData {
  Dataset dataset;
  Corpus corpus;
};

// Deterministic for a fixed spec. Images carry two latent concepts; regions
// are noisy copies of the concept prototype vectors and captions are template
// sentences naming both concepts, so visual features predict caption words.
// Splits are assigned by id hash, roughly 80/10/10.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// JSON Lines, one record per line:
//   {"id": str, "split": str, "regions": [[f64]], "captions": [[str]]}
// The global feature is recomputed on load; the vocabulary is rebuilt from
// the sorted set of caption tokens.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// JSON Lines {"image_id": str, "tokens": [str]}; EOS is appended on load.
void save_corpus(const Corpus& corpus, const Vocabulary& vocab, const std::string& path);
Corpus load_corpus(const std::string& path, const Vocabulary& vocab);

bool operator==(const ImageRecord& a, const ImageRecord& b);
bool operator==(const Dataset& a, const Dataset& b);
bool operator==(const CorpusEntry& a, const CorpusEntry& b);
bool operator==(const Corpus& a, const Corpus& b);

}  // namespace recap
