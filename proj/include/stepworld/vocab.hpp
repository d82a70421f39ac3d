#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace stepworld {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

// Length bounds for the canonical token renderings.
inline constexpr int kObsMax = 64;
inline constexpr int kActMax = 8;
inline constexpr int kSubMax = 16;
inline constexpr int kLpMax = 48;
inline constexpr int kCtxMax = 192;

inline constexpr int kNumRooms = 4;
inline constexpr int kNumReceptacles = 12;
inline constexpr int kNumObjectKinds = 12;
inline constexpr int kMaxInstancesPerKind = 3;

// Closed vocabulary generated from the world schema. Every observation,
// instruction, subtask, action and progress summary is a sequence of these
// token ids; there is no free-form text anywhere in the pipeline.
class Vocab {
 public:
  Vocab();

  int size() const { return static_cast<int>(words_.size()); }
  const std::string& word(TokenId id) const { return words_[id]; }
  TokenId id(const std::string& w) const;
  bool contains(const std::string& w) const { return index_.count(w) > 0; }

  // FNV-1a over the word list; checkpoint/datafile compatibility key.
  std::uint64_t hash() const { return hash_; }

  // special tokens
  TokenId end() const { return end_; }
  TokenId sep() const { return sep_; }
  TokenId flag_true() const { return true_; }
  TokenId flag_false() const { return false_; }
  TokenId period() const { return period_; }
  TokenId colon() const { return colon_; }
  TokenId comma() const { return comma_; }
  TokenId semicolon() const { return semicolon_; }

  bool is_room(TokenId id) const;
  bool is_receptacle(TokenId id) const;
  bool is_object_kind(TokenId id) const;
  bool is_object_instance(TokenId id) const;
  // kind token for an instance token (e.g. apple2 -> apple); -1 otherwise.
  TokenId instance_kind(TokenId id) const;
  // instance token for (kind token, 1-based index); -1 if out of range.
  TokenId instance_token(TokenId kind, int index) const;

  int room_index(TokenId id) const;        // -1 if not a room token
  int receptacle_index(TokenId id) const;  // -1 if not a receptacle token
  TokenId room_token(int room) const { return room_tokens_[room]; }
  TokenId receptacle_token(int r) const { return recep_tokens_[r]; }
  TokenId object_kind_token(int k) const { return kind_tokens_[k]; }
  int object_kind_index(TokenId id) const;  // -1 if not a kind token

  std::string render(const TokenSeq& seq) const;  // space-joined words
  // Tokenize a space-separated string; throws std::out_of_range on unknown.
  TokenSeq tokenize(const std::string& text) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
  std::uint64_t hash_ = 0;
  TokenId end_, sep_, true_, false_;
  TokenId period_, colon_, comma_, semicolon_;
  std::vector<TokenId> room_tokens_, recep_tokens_, kind_tokens_;
  std::vector<int> room_of_token_, recep_of_token_, kind_of_token_;
  std::vector<TokenId> instance_kind_of_token_;
  std::vector<std::vector<TokenId>> instances_by_kind_;
};

// Process-wide vocabulary (immutable after construction).
const Vocab& vocab();

std::uint64_t fnv1a64(const void* data, std::size_t len);

}  // namespace stepworld
