#include "recap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>

#include "json.hpp"
#include "recap/errors.hpp"

namespace recap {

std::string ngram_key(const TokenSeq& seq, size_t start, size_t n) {
  std::string key;
  key.reserve(n * 4);
  for (size_t i = start; i < start + n; ++i) {
    uint32_t v = static_cast<uint32_t>(seq[i]);
    key.push_back(static_cast<char>(v & 0xff));
    key.push_back(static_cast<char>((v >> 8) & 0xff));
    key.push_back(static_cast<char>((v >> 16) & 0xff));
    key.push_back(static_cast<char>((v >> 24) & 0xff));
  }
  return key;
}

namespace {

using CountMap = std::unordered_map<std::string, double>;

// counts[n-1]: n-gram -> occurrence count in seq.
std::array<CountMap, 4> count_ngrams(const TokenSeq& seq) {
  std::array<CountMap, 4> out;
  for (size_t n = 1; n <= 4; ++n) {
    if (seq.size() < n) break;
    auto& m = out[n - 1];
    for (size_t i = 0; i + n <= seq.size(); ++i) {
      m[ngram_key(seq, i, n)] += 1.0;
    }
  }
  return out;
}

}  // namespace

NgramStats build_df(const std::vector<RefSet>& refs_by_image) {
  if (refs_by_image.empty()) throw UsageError("build_df: empty reference corpus");
  NgramStats stats;
  stats.n_images = static_cast<int>(refs_by_image.size());
  stats.log_ref_count = std::log(static_cast<double>(stats.n_images));
  for (const auto& refs : refs_by_image) {
    std::array<std::set<std::string>, 4> seen;
    for (const auto& ref : refs) {
      auto counts = count_ngrams(ref);
      for (size_t n = 0; n < 4; ++n) {
        for (const auto& [key, cnt] : counts[n]) seen[n].insert(key);
      }
    }
    for (size_t n = 0; n < 4; ++n) {
      for (const auto& key : seen[n]) stats.df[n][key] += 1.0;
    }
  }
  return stats;
}

double cider_d(const TokenSeq& candidate, const RefSet& refs, const NgramStats& stats,
               double sigma) {
  if (candidate.empty() || refs.empty()) {
    throw UsageError("cider_d: empty candidate or reference set");
  }

  // tf-idf vector, norm per n, and length for one sequence
  struct Profile {
    std::array<CountMap, 4> vec;
    std::array<double, 4> norm{};
    double length = 0.0;
  };
  auto profile = [&stats](const TokenSeq& seq) {
    Profile p;
    p.length = static_cast<double>(seq.size());
    auto counts = count_ngrams(seq);
    for (size_t n = 0; n < 4; ++n) {
      double norm2 = 0.0;
      for (const auto& [key, cnt] : counts[n]) {
        auto it = stats.df[n].find(key);
        double df = it == stats.df[n].end() ? 0.0 : it->second;
        double idf = stats.log_ref_count - std::log(std::max(df, 1.0));
        double w = cnt * idf;
        p.vec[n][key] = w;
        norm2 += w * w;
      }
      p.norm[n] = std::sqrt(norm2);
    }
    return p;
  };

  Profile cand = profile(candidate);
  std::array<double, 4> acc{};
  for (const auto& ref : refs) {
    Profile rp = profile(ref);
    double delta = cand.length - rp.length;
    double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
    for (size_t n = 0; n < 4; ++n) {
      double val = 0.0;
      for (const auto& [key, w] : cand.vec[n]) {
        auto it = rp.vec[n].find(key);
        if (it != rp.vec[n].end()) val += std::min(w, it->second) * it->second;
      }
      if (cand.norm[n] != 0.0 && rp.norm[n] != 0.0) val /= cand.norm[n] * rp.norm[n];
      acc[n] += val * penalty;
    }
  }
  double score = 0.0;
  for (size_t n = 0; n < 4; ++n) score += acc[n] / static_cast<double>(refs.size());
  return score / 4.0 * 10.0;
}

double bleu(const std::vector<TokenSeq>& candidates, const std::vector<RefSet>& refs, int max_n) {
  if (candidates.size() != refs.size()) {
    throw UsageError("bleu: candidate and reference lists must align");
  }
  if (candidates.empty()) throw UsageError("bleu: empty corpus");
  if (max_n < 1 || max_n > 4) throw UsageError("bleu: order must be in [1,4]");

  std::vector<double> num(static_cast<size_t>(max_n), 0.0);
  std::vector<double> den(static_cast<size_t>(max_n), 0.0);
  double cand_len = 0.0, ref_len = 0.0;

  for (size_t i = 0; i < candidates.size(); ++i) {
    const TokenSeq& cand = candidates[i];
    const RefSet& rs = refs[i];
    if (rs.empty()) throw UsageError("bleu: image without references");
    cand_len += static_cast<double>(cand.size());

    // effective reference length: closest to the candidate, shorter on ties
    size_t best_len = rs[0].size();
    for (const auto& r : rs) {
      auto diff = [&](size_t L) {
        return std::llabs(static_cast<long long>(L) - static_cast<long long>(cand.size()));
      };
      if (diff(r.size()) < diff(best_len) || (diff(r.size()) == diff(best_len) && r.size() < best_len)) {
        best_len = r.size();
      }
    }
    ref_len += static_cast<double>(best_len);

    auto cand_counts = count_ngrams(cand);
    std::array<CountMap, 4> max_ref;
    for (const auto& r : rs) {
      auto rc = count_ngrams(r);
      for (size_t n = 0; n < 4; ++n) {
        for (const auto& [key, cnt] : rc[n]) {
          auto& slot = max_ref[n][key];
          slot = std::max(slot, cnt);
        }
      }
    }
    for (int n = 1; n <= max_n; ++n) {
      if (cand.size() < static_cast<size_t>(n)) continue;
      den[static_cast<size_t>(n - 1)] += static_cast<double>(cand.size() - static_cast<size_t>(n) + 1);
      for (const auto& [key, cnt] : cand_counts[static_cast<size_t>(n - 1)]) {
        auto it = max_ref[static_cast<size_t>(n - 1)].find(key);
        if (it != max_ref[static_cast<size_t>(n - 1)].end()) {
          num[static_cast<size_t>(n - 1)] += std::min(cnt, it->second);
        }
      }
    }
  }

  double log_sum = 0.0;
  for (int n = 0; n < max_n; ++n) {
    if (num[static_cast<size_t>(n)] <= 0.0 || den[static_cast<size_t>(n)] <= 0.0) return 0.0;
    log_sum += std::log(num[static_cast<size_t>(n)] / den[static_cast<size_t>(n)]);
  }
  double bp = 1.0;
  if (cand_len <= 0.0) return 0.0;
  if (cand_len <= ref_len) bp = std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

namespace {

size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1]) {
        cur[j] = prev[j - 1] + 1;
      } else {
        cur[j] = std::max(prev[j], cur[j - 1]);
      }
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_l(const TokenSeq& candidate, const RefSet& refs) {
  if (candidate.empty() || refs.empty()) {
    throw UsageError("rouge_l: empty candidate or reference set");
  }
  const double beta = 1.2;
  double best = 0.0;
  for (const auto& ref : refs) {
    if (ref.empty()) throw UsageError("rouge_l: empty reference");
    double lcs = static_cast<double>(lcs_length(candidate, ref));
    double prec = lcs / static_cast<double>(candidate.size());
    double rec = lcs / static_cast<double>(ref.size());
    double f = 0.0;
    if (prec > 0.0 && rec > 0.0) {
      f = (1.0 + beta * beta) * prec * rec / (rec + beta * beta * prec);
    }
    best = std::max(best, f);
  }
  return best;
}

void save_report(const EvalReport& report, const std::string& path) {
  nlohmann::ordered_json j;
  j["bleu1"] = report.bleu1;
  j["bleu4"] = report.bleu4;
  j["rouge_l"] = report.rouge_l;
  j["cider_d"] = report.cider_d;
  j["n_images"] = report.n_images;
  std::ofstream os(path);
  if (!os) throw UsageError("save_report: cannot open " + path + " for writing");
  os << j.dump(2) << '\n';
}

}  // namespace recap
