#include "stepworld/vocab.hpp"

#include <array>
#include <stdexcept>

namespace stepworld {

namespace {

const std::array<const char*, kNumRooms> kRoomNames = {
    "kitchen", "livingroom", "bedroom", "bathroom"};

const std::array<const char*, kNumReceptacles> kReceptacleNames = {
    "countertop1", "cabinet1",  "cabinet2", "sinkbasin1",
    "fridge1",     "microwave1", "shelf1",   "box1",
    "drawer1",     "dresser1",  "desklamp1", "garbagecan1"};

const std::array<const char*, kNumObjectKinds> kObjectKindNames = {
    "apple", "bread", "egg",  "tomato",    "lettuce", "mug",
    "cup",   "plate", "book", "newspaper", "watch",   "candle"};

const char* kStructureWords[] = {
    "you",     "arrive",  "at",     "is",        "are",     "closed",
    "empty",   "nothing", "happens", "go",       "to",      "see",
    "hold",    "in",      "under",  "a",         "an",      "the",
    "and",     "two",     "new",    "except",    "task",    "your",
    "find",    "locate",  "pick",   "up",        "use",     "place",
    "navigate", "searching", "for", "unchecked", "remain",  "doors",
    "opened",  "found",   "picked", "went",      "took",    "waited",
    "heated",  "cooled",  "cleaned", "examined", "heading", "route",
    "hot",     "cold",    "it"};

const char* kVerbWords[] = {"goto", "open",   "close", "take", "put",
                            "clean", "heat",  "cool",  "examine", "wait"};

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

Vocab::Vocab() {
  auto add = [&](const std::string& w) -> TokenId {
    TokenId id = static_cast<TokenId>(words_.size());
    words_.push_back(w);
    index_[w] = id;
    return id;
  };

  end_ = add("<end>");
  sep_ = add("<sep>");
  true_ = add("<true>");
  false_ = add("<false>");
  period_ = add(".");
  colon_ = add(":");
  comma_ = add(",");
  semicolon_ = add(";");

  for (const char* v : kVerbWords) add(v);
  for (const char* w : kStructureWords) add(w);

  for (const char* r : kRoomNames) room_tokens_.push_back(add(r));
  for (const char* r : kReceptacleNames) recep_tokens_.push_back(add(r));
  for (const char* k : kObjectKindNames) kind_tokens_.push_back(add(k));

  instances_by_kind_.resize(kNumObjectKinds);
  for (int k = 0; k < kNumObjectKinds; ++k) {
    for (int j = 1; j <= kMaxInstancesPerKind; ++j) {
      TokenId t = add(std::string(kObjectKindNames[k]) + std::to_string(j));
      instances_by_kind_[k].push_back(t);
    }
  }

  int n = size();
  room_of_token_.assign(n, -1);
  recep_of_token_.assign(n, -1);
  kind_of_token_.assign(n, -1);
  instance_kind_of_token_.assign(n, -1);
  for (int i = 0; i < kNumRooms; ++i) room_of_token_[room_tokens_[i]] = i;
  for (int i = 0; i < kNumReceptacles; ++i)
    recep_of_token_[recep_tokens_[i]] = i;
  for (int k = 0; k < kNumObjectKinds; ++k) {
    kind_of_token_[kind_tokens_[k]] = k;
    for (TokenId t : instances_by_kind_[k])
      instance_kind_of_token_[t] = kind_tokens_[k];
  }

  std::string all;
  for (const auto& w : words_) {
    all += w;
    all += '\n';
  }
  hash_ = fnv1a64(all.data(), all.size());
}

TokenId Vocab::id(const std::string& w) const {
  auto it = index_.find(w);
  if (it == index_.end())
    throw std::out_of_range("unknown vocabulary word: " + w);
  return it->second;
}

bool Vocab::is_room(TokenId id) const {
  return id >= 0 && id < size() && room_of_token_[id] >= 0;
}
bool Vocab::is_receptacle(TokenId id) const {
  return id >= 0 && id < size() && recep_of_token_[id] >= 0;
}
bool Vocab::is_object_kind(TokenId id) const {
  return id >= 0 && id < size() && kind_of_token_[id] >= 0;
}
bool Vocab::is_object_instance(TokenId id) const {
  return id >= 0 && id < size() && instance_kind_of_token_[id] >= 0;
}
TokenId Vocab::instance_kind(TokenId id) const {
  if (id < 0 || id >= size()) return -1;
  return instance_kind_of_token_[id];
}
TokenId Vocab::instance_token(TokenId kind, int index) const {
  int k = object_kind_index(kind);
  if (k < 0 || index < 1 || index > kMaxInstancesPerKind) return -1;
  return instances_by_kind_[k][index - 1];
}
int Vocab::room_index(TokenId id) const {
  return (id >= 0 && id < size()) ? room_of_token_[id] : -1;
}
int Vocab::receptacle_index(TokenId id) const {
  return (id >= 0 && id < size()) ? recep_of_token_[id] : -1;
}
int Vocab::object_kind_index(TokenId id) const {
  return (id >= 0 && id < size()) ? kind_of_token_[id] : -1;
}

std::string Vocab::render(const TokenSeq& seq) const {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += word(seq[i]);
  }
  return out;
}

TokenSeq Vocab::tokenize(const std::string& text) const {
  TokenSeq out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.push_back(id(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

const Vocab& vocab() {
  static const Vocab v;
  return v;
}

}  // namespace stepworld
