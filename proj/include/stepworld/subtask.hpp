#pragma once

#include <optional>

#include "stepworld/vocab.hpp"

namespace stepworld {

enum class SubtaskKind { Locate, Place, Clean, Heat, Cool, Navigate, Examine };

// Typed intermediate goal proposed by the high-level head. The canonical
// token rendering is what flows through policy inputs; the structured fields
// drive the oracle summarizer and the simulator's completion predicate.
struct Subtask {
  SubtaskKind kind = SubtaskKind::Locate;
  TokenId target_kind = -1;    // object kind token
  TokenId target_recep = -1;   // receptacle token
  TokenId target_room = -1;    // room token (Navigate)
  TokenId except_inst = -1;    // excluded instance token (locate new X except Y)
  bool use_form = false;       // "locate and use" variant
  TokenSeq tokens;

  bool is_locate() const { return kind == SubtaskKind::Locate; }
};

Subtask make_locate(TokenId kind_token);
Subtask make_locate_except(TokenId kind_token, TokenId except_inst);
Subtask make_locate_use(TokenId recep_token);
Subtask make_place(TokenId kind_token, TokenId recep_token);
Subtask make_clean(TokenId kind_token);
Subtask make_heat(TokenId kind_token);
Subtask make_cool(TokenId kind_token);
Subtask make_examine(TokenId kind_token);
Subtask make_navigate(TokenId room_token);

// Classifies an arbitrary token sequence the way the annotation grammar does:
// sequences starting "locate and pick up" / "locate and use" are Locate,
// "navigate ..." is Navigate, everything else is non-Locate keyed on the
// leading operation word. Returns nullopt only when no structure at all can
// be recovered (empty or no recognizable lead token).
std::optional<Subtask> parse_subtask(const TokenSeq& tokens);

const char* subtask_kind_name(SubtaskKind k);

}  // namespace stepworld
