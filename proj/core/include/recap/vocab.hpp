#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace recap {

// Token table with four fixed reserved entries at the front. Content tokens
// follow in sorted order, so the same caption set always yields the same ids.
class Vocabulary {
 public:
  static constexpr int pad_id = 0;
  static constexpr int bos_id = 1;
  static constexpr int eos_id = 2;
  static constexpr int unk_id = 3;
  static constexpr int reserved_count = 4;

  Vocabulary();  // reserved tokens only

  // `content` must be sorted, unique, and free of reserved tokens.
  static Vocabulary from_tokens(const std::vector<std::string>& content);
  // Tokenizes every caption and builds the table from the sorted unique set.
  static Vocabulary from_captions(const std::vector<std::string>& captions);

  // Lowercases, maps everything outside [a-z0-9<>] to spaces, splits on runs
  // of whitespace.
  static std::vector<std::string> tokenize(const std::string& text);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int id(const std::string& token) const;  // unk_id when absent
  const std::string& token(int id) const;
  bool contains(const std::string& token) const;
  bool is_reserved(int id) const { return id >= 0 && id < reserved_count; }

  // Tokenize and map to ids (no BOS/EOS added).
  std::vector<int> encode(const std::string& text) const;
  // Join tokens with spaces, dropping PAD/BOS/EOS.
  std::string decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace recap
