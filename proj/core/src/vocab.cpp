#include "recap/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "recap/errors.hpp"

namespace recap {

namespace {
const char* kReserved[] = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (const char* r : kReserved) {
    token_to_id_.emplace(r, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(r);
  }
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& content) {
  Vocabulary v;
  for (const auto& tok : content) {
    if (tok.empty()) throw UsageError("vocabulary: empty token");
    if (v.token_to_id_.count(tok)) {
      throw UsageError("vocabulary: duplicate or reserved token '" + tok + "'");
    }
    if (!v.id_to_token_.empty() && v.id_to_token_.size() > reserved_count &&
        tok < v.id_to_token_.back()) {
      throw UsageError("vocabulary: content tokens must be sorted, got '" + tok + "' after '" +
                       v.id_to_token_.back() + "'");
    }
    v.token_to_id_.emplace(tok, static_cast<int>(v.id_to_token_.size()));
    v.id_to_token_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_captions(const std::vector<std::string>& captions) {
  std::set<std::string> uniq;
  for (const auto& c : captions) {
    for (auto& tok : tokenize(c)) {
      bool reserved = false;
      for (const char* r : kReserved) {
        if (tok == r) reserved = true;
      }
      if (!reserved) uniq.insert(std::move(tok));
    }
  }
  return from_tokens(std::vector<std::string>(uniq.begin(), uniq.end()));
}

std::vector<std::string> Vocabulary::tokenize(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    unsigned char u = static_cast<unsigned char>(ch);
    char lower = static_cast<char>(std::tolower(u));
    if ((lower >= 'a' && lower <= 'z') || (lower >= '0' && lower <= '9') || lower == '<' ||
        lower == '>') {
      cleaned.push_back(lower);
    } else {
      cleaned.push_back(' ');
    }
  }
  std::vector<std::string> out;
  size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && cleaned[i] == ' ') ++i;
    size_t j = i;
    while (j < cleaned.size() && cleaned[j] != ' ') ++j;
    if (j > i) out.push_back(cleaned.substr(i, j - i));
    i = j;
  }
  return out;
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? unk_id : it->second;
}

const std::string& Vocabulary::token(int tid) const {
  if (tid < 0 || tid >= size()) {
    throw UsageError("vocabulary: id " + std::to_string(tid) + " out of range [0," +
                     std::to_string(size()) + ")");
  }
  return id_to_token_[static_cast<size_t>(tid)];
}

bool Vocabulary::contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& tok : tokenize(text)) out.push_back(id(tok));
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int tid : ids) {
    if (tid == pad_id || tid == bos_id || tid == eos_id) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(tid);
  }
  return out;
}

}  // namespace recap
