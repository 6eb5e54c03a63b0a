#include "recap/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "recap/errors.hpp"

namespace recap {

using ordered_json = nlohmann::ordered_json;

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw UsageError("split_name: bad enum value");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ParseError("unknown split '" + name + "'");
}

std::vector<int> Dataset::split_indices(Split s) const {
  std::vector<int> out;
  for (size_t i = 0; i < images.size(); ++i) {
    if (images[i].split == s) out.push_back(static_cast<int>(i));
  }
  return out;
}

const ImageRecord& Dataset::by_id(const std::string& id) const {
  for (const auto& img : images) {
    if (img.id == id) return img;
  }
  throw UsageError("dataset: no image with id '" + id + "'");
}

std::vector<double> mean_pool(const std::vector<std::vector<double>>& regions) {
  if (regions.empty()) throw UsageError("mean_pool: no regions");
  std::vector<double> out(regions[0].size(), 0.0);
  for (const auto& r : regions) {
    if (r.size() != out.size()) throw DimError("mean_pool: ragged region dimensions");
    for (size_t i = 0; i < r.size(); ++i) out[i] += r[i];
  }
  for (auto& v : out) v /= static_cast<double>(regions.size());
  return out;
}

std::vector<int> encode_caption(const Vocabulary& vocab, const std::string& text) {
  std::vector<int> ids = vocab.encode(text);
  ids.push_back(Vocabulary::eos_id);
  return ids;
}

// ---------------------------------------------------------------------------
// synthetic generation

namespace {

std::string zero_pad(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

std::vector<double> unit_gauss_vec(int dim, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(dim));
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (auto& x : v) {
      x = rng.gauss();
      norm2 += x * x;
    }
  } while (norm2 < 1e-12);
  double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
  return v;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.vocab_size < 10) throw ConfigError("synthetic: vocab size must be at least 10");
  if (spec.captions_per_image < 1) throw ConfigError("synthetic: captions per image must be >= 1");
  if (spec.feat_dim < 1) throw ConfigError("synthetic: feature dimension must be >= 1");
  if (spec.regions < 1) throw ConfigError("synthetic: regions must be >= 1");
  if (spec.num_images < 1) throw ConfigError("synthetic: num images must be >= 1");
  if (spec.noise < 0.0) throw ConfigError("synthetic: noise level must be >= 0");

  // Word budget: 4 reserved + concepts + connective words + filler.
  const int content = spec.vocab_size - Vocabulary::reserved_count;
  const int n_concepts = std::max(2, std::min(24, content / 3));
  static const std::vector<std::string> kStructure = {"the", "is",  "a",   "near",
                                                      "with", "on", "and", "by"};
  const int n_structure = std::min(static_cast<int>(kStructure.size()), content - n_concepts);
  const int n_filler = content - n_concepts - n_structure;

  std::vector<std::string> concept_words(static_cast<size_t>(n_concepts));
  for (int i = 0; i < n_concepts; ++i) concept_words[static_cast<size_t>(i)] = "obj" + zero_pad(i + 1, 2);
  std::vector<std::string> filler_words(static_cast<size_t>(n_filler));
  for (int i = 0; i < n_filler; ++i) filler_words[static_cast<size_t>(i)] = "w" + zero_pad(i + 1, 2);

  Rng root(spec.seed);
  Rng proto_rng = root.fork(0x70726f746f);  // prototype stream
  std::vector<std::vector<double>> prototypes(static_cast<size_t>(n_concepts));
  for (auto& p : prototypes) p = unit_gauss_vec(spec.feat_dim, proto_rng);

  // Templates over placeholders: -1 = concept A, -2 = concept B, -3 = filler
  // slot, otherwise an index into kStructure. The first tier needs only the
  // first four structure words, which the budget always provides.
  using Tpl = std::vector<int>;
  std::vector<Tpl> templates = {
      {0, -1, 1, 3, 0, -2},     // the A is near the B
      {2, -1, 1, 3, 2, -2},     // a A is near a B
      {0, -1, 1, 3, 2, -2},     // the A is near a B
      {-1, 1, 3, 0, -2},        // A is near the B
  };
  if (n_structure >= 8) {
    templates.push_back({0, -1, 1, 5, 0, -2});           // the A is on the B
    templates.push_back({2, -1, 4, 2, -2});              // a A with a B
    templates.push_back({0, -1, 6, 0, -2});              // the A and the B
    templates.push_back({2, -1, 1, 7, 0, -2, 4, 2, -3});  // a A is by the B with a F
  }

  Rng img_rng = root.fork(0x696d67);      // concept assignment + noise
  Rng cap_rng = root.fork(0x636170);      // template choices
  int filler_cursor = 0;

  Dataset ds;
  ds.feat_dim = spec.feat_dim;
  std::vector<std::vector<std::vector<std::string>>> caption_words(
      static_cast<size_t>(spec.num_images));

  for (int i = 0; i < spec.num_images; ++i) {
    ImageRecord rec;
    rec.id = "img" + zero_pad(i, 5);
    uint64_t h = fnv1a64(rec.id) % 10;
    rec.split = h < 8 ? Split::train : (h == 8 ? Split::val : Split::test);

    int ca = img_rng.uniform_int(n_concepts);
    int cb = img_rng.uniform_int(n_concepts - 1);
    if (cb >= ca) ++cb;
    if (ca > cb) std::swap(ca, cb);  // canonical order: same set -> same features

    rec.regions.resize(static_cast<size_t>(spec.regions));
    for (int r = 0; r < spec.regions; ++r) {
      int proto = (r % 2 == 0) ? ca : cb;
      std::vector<double> v = prototypes[static_cast<size_t>(proto)];
      for (auto& x : v) x += spec.noise * img_rng.gauss();
      rec.regions[static_cast<size_t>(r)] = std::move(v);
    }
    rec.global = mean_pool(rec.regions);

    auto& caps = caption_words[static_cast<size_t>(i)];
    for (int c = 0; c < spec.captions_per_image; ++c) {
      const Tpl& tpl = templates[static_cast<size_t>(cap_rng.uniform_int(
          static_cast<int>(templates.size())))];
      std::vector<std::string> words;
      for (int slot : tpl) {
        if (slot == -1) words.push_back(concept_words[static_cast<size_t>(ca)]);
        else if (slot == -2) words.push_back(concept_words[static_cast<size_t>(cb)]);
        else if (slot == -3) {
          if (n_filler > 0) {
            words.push_back(filler_words[static_cast<size_t>(filler_cursor % n_filler)]);
            ++filler_cursor;
          } else {
            words.push_back(kStructure[0]);
          }
        } else {
          words.push_back(kStructure[static_cast<size_t>(slot)]);
        }
      }
      // Keep filler words in circulation so the realized vocabulary reaches
      // the requested size; capped so captions stay within 4..10 tokens.
      if (n_filler > 0 && words.size() <= 8 && cap_rng.uniform() < 0.5) {
        words.push_back(kStructure[0]);
        words.push_back(filler_words[static_cast<size_t>(filler_cursor % n_filler)]);
        ++filler_cursor;
      }
      caps.push_back(std::move(words));
    }
    ds.images.push_back(std::move(rec));
  }

  std::set<std::string> uniq;
  for (const auto& caps : caption_words) {
    for (const auto& words : caps) uniq.insert(words.begin(), words.end());
  }
  ds.vocab = Vocabulary::from_tokens(std::vector<std::string>(uniq.begin(), uniq.end()));

  for (size_t i = 0; i < ds.images.size(); ++i) {
    for (const auto& words : caption_words[i]) {
      std::vector<int> ids;
      ids.reserve(words.size() + 1);
      for (const auto& w : words) ids.push_back(ds.vocab.id(w));
      ids.push_back(Vocabulary::eos_id);
      ds.images[i].captions.push_back(std::move(ids));
    }
  }

  SyntheticData out;
  out.corpus = Corpus{};
  for (const auto& img : ds.images) {
    if (img.split != Split::train) continue;
    for (const auto& cap : img.captions) {
      out.corpus.entries.push_back({cap, img.id});
    }
  }
  out.dataset = std::move(ds);
  return out;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

std::vector<std::string> caption_to_words(const Vocabulary& vocab, const std::vector<int>& ids) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == Vocabulary::eos_id) continue;  // re-appended on load
    words.push_back(vocab.token(id));
  }
  return words;
}

const ordered_json& need_field(const ordered_json& obj, const char* field, int line_no) {
  auto it = obj.find(field);
  if (it == obj.end()) {
    throw ParseError(std::string("missing \"") + field + "\" field", line_no);
  }
  return *it;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw UsageError("save_dataset: cannot open " + path + " for writing");
  for (const auto& img : ds.images) {
    ordered_json j;
    j["id"] = img.id;
    j["split"] = split_name(img.split);
    j["regions"] = img.regions;
    ordered_json caps = ordered_json::array();
    for (const auto& cap : img.captions) caps.push_back(caption_to_words(ds.vocab, cap));
    j["captions"] = std::move(caps);
    os << j.dump() << '\n';
  }
  if (!os) throw UsageError("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("load_dataset: cannot open " + path);

  struct RawRecord {
    std::string id;
    Split split;
    std::vector<std::vector<double>> regions;
    std::vector<std::vector<std::string>> captions;
  };
  std::vector<RawRecord> raws;
  std::set<std::string> uniq;

  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad json: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("record is not an object", line_no);
    RawRecord raw;
    try {
      raw.id = need_field(j, "id", line_no).get<std::string>();
      raw.split = split_from_name(need_field(j, "split", line_no).get<std::string>());
      raw.regions = need_field(j, "regions", line_no).get<std::vector<std::vector<double>>>();
      raw.captions =
          need_field(j, "captions", line_no).get<std::vector<std::vector<std::string>>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad field type: ") + e.what(), line_no);
    }
    if (raw.regions.empty()) throw ParseError("record has no regions", line_no);
    for (const auto& r : raw.regions) {
      if (r.size() != raw.regions[0].size()) {
        throw ParseError("ragged region dimensions", line_no);
      }
    }
    if (raw.captions.empty()) throw ParseError("record has no captions", line_no);
    for (const auto& c : raw.captions) {
      if (c.empty()) throw ParseError("empty caption", line_no);
      uniq.insert(c.begin(), c.end());
    }
    raws.push_back(std::move(raw));
  }

  Dataset ds;
  for (const char* r : {"<pad>", "<bos>", "<eos>", "<unk>"}) uniq.erase(r);
  ds.vocab = Vocabulary::from_tokens(std::vector<std::string>(uniq.begin(), uniq.end()));
  for (auto& raw : raws) {
    ImageRecord rec;
    rec.id = std::move(raw.id);
    rec.split = raw.split;
    rec.regions = std::move(raw.regions);
    rec.global = mean_pool(rec.regions);
    for (const auto& words : raw.captions) {
      std::vector<int> ids;
      ids.reserve(words.size() + 1);
      for (const auto& w : words) ids.push_back(ds.vocab.id(w));
      ids.push_back(Vocabulary::eos_id);
      rec.captions.push_back(std::move(ids));
    }
    if (ds.feat_dim == 0) {
      ds.feat_dim = static_cast<int>(rec.regions[0].size());
    } else if (ds.feat_dim != static_cast<int>(rec.regions[0].size())) {
      throw ParseError("inconsistent feature dimension across records");
    }
    ds.images.push_back(std::move(rec));
  }
  return ds;
}

void save_corpus(const Corpus& corpus, const Vocabulary& vocab, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw UsageError("save_corpus: cannot open " + path + " for writing");
  for (const auto& e : corpus.entries) {
    ordered_json j;
    j["image_id"] = e.image_id;
    j["tokens"] = caption_to_words(vocab, e.tokens);
    os << j.dump() << '\n';
  }
  if (!os) throw UsageError("save_corpus: write failed for " + path);
}

Corpus load_corpus(const std::string& path, const Vocabulary& vocab) {
  std::ifstream is(path);
  if (!is) throw UsageError("load_corpus: cannot open " + path);
  Corpus out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad json: ") + e.what(), line_no);
    }
    CorpusEntry entry;
    try {
      entry.image_id = need_field(j, "image_id", line_no).get<std::string>();
      auto words = need_field(j, "tokens", line_no).get<std::vector<std::string>>();
      for (const auto& w : words) entry.tokens.push_back(vocab.id(w));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad field type: ") + e.what(), line_no);
    }
    entry.tokens.push_back(Vocabulary::eos_id);
    out.entries.push_back(std::move(entry));
  }
  return out;
}

bool operator==(const ImageRecord& a, const ImageRecord& b) {
  return a.id == b.id && a.regions == b.regions && a.global == b.global &&
         a.captions == b.captions && a.split == b.split;
}

bool operator==(const Dataset& a, const Dataset& b) {
  return a.feat_dim == b.feat_dim && a.images == b.images &&
         a.vocab.tokens() == b.vocab.tokens();
}

bool operator==(const CorpusEntry& a, const CorpusEntry& b) {
  return a.tokens == b.tokens && a.image_id == b.image_id;
}

bool operator==(const Corpus& a, const Corpus& b) { return a.entries == b.entries; }

}  // namespace recap
