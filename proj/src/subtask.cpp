#include "stepworld/subtask.hpp"

namespace stepworld {

namespace {
TokenSeq toks(std::initializer_list<const char*> words) {
  TokenSeq out;
  for (const char* w : words) out.push_back(vocab().id(w));
  return out;
}
}  // namespace

Subtask make_locate(TokenId kind_token) {
  Subtask s;
  s.kind = SubtaskKind::Locate;
  s.target_kind = kind_token;
  s.tokens = toks({"locate", "and", "pick", "up"});
  s.tokens.push_back(kind_token);
  return s;
}

Subtask make_locate_except(TokenId kind_token, TokenId except_inst) {
  Subtask s;
  s.kind = SubtaskKind::Locate;
  s.target_kind = kind_token;
  s.except_inst = except_inst;
  s.tokens = toks({"locate", "and", "pick", "up", "new"});
  s.tokens.push_back(kind_token);
  s.tokens.push_back(vocab().id("except"));
  s.tokens.push_back(except_inst);
  return s;
}

Subtask make_locate_use(TokenId recep_token) {
  Subtask s;
  s.kind = SubtaskKind::Locate;
  s.target_recep = recep_token;
  s.use_form = true;
  s.tokens = toks({"locate", "and", "use"});
  s.tokens.push_back(recep_token);
  return s;
}

Subtask make_place(TokenId kind_token, TokenId recep_token) {
  Subtask s;
  s.kind = SubtaskKind::Place;
  s.target_kind = kind_token;
  s.target_recep = recep_token;
  s.tokens = toks({"place"});
  s.tokens.push_back(kind_token);
  s.tokens.push_back(vocab().id("in"));
  s.tokens.push_back(recep_token);
  return s;
}

namespace {
Subtask make_op(SubtaskKind k, const char* verb, TokenId kind_token) {
  Subtask s;
  s.kind = k;
  s.target_kind = kind_token;
  s.tokens.push_back(vocab().id(verb));
  s.tokens.push_back(kind_token);
  return s;
}
}  // namespace

Subtask make_clean(TokenId kt) { return make_op(SubtaskKind::Clean, "clean", kt); }
Subtask make_heat(TokenId kt) { return make_op(SubtaskKind::Heat, "heat", kt); }
Subtask make_cool(TokenId kt) { return make_op(SubtaskKind::Cool, "cool", kt); }
Subtask make_examine(TokenId kt) {
  return make_op(SubtaskKind::Examine, "examine", kt);
}

Subtask make_navigate(TokenId room_token) {
  Subtask s;
  s.kind = SubtaskKind::Navigate;
  s.target_room = room_token;
  s.tokens = toks({"navigate", "to"});
  s.tokens.push_back(room_token);
  return s;
}

std::optional<Subtask> parse_subtask(const TokenSeq& tokens) {
  const Vocab& v = vocab();
  if (tokens.empty()) return std::nullopt;

  auto starts_with = [&](std::initializer_list<const char*> words) {
    std::size_t i = 0;
    for (const char* w : words) {
      if (i >= tokens.size() || tokens[i] != v.id(w)) return false;
      ++i;
    }
    return true;
  };
  auto first_kind = [&]() -> TokenId {
    for (TokenId t : tokens)
      if (v.is_object_kind(t)) return t;
    return -1;
  };
  auto first_recep = [&]() -> TokenId {
    for (TokenId t : tokens)
      if (v.is_receptacle(t)) return t;
    return -1;
  };

  Subtask s;
  s.tokens = tokens;
  if (starts_with({"locate", "and", "use"})) {
    s.kind = SubtaskKind::Locate;
    s.use_form = true;
    s.target_recep = first_recep();
    s.target_kind = first_kind();
    return s;
  }
  if (starts_with({"locate", "and", "pick", "up"})) {
    s.kind = SubtaskKind::Locate;
    s.target_kind = first_kind();
    TokenId except_tok = v.id("except");
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
      if (tokens[i] == except_tok && v.is_object_instance(tokens[i + 1])) {
        s.except_inst = tokens[i + 1];
        break;
      }
    }
    return s;
  }
  if (starts_with({"navigate"})) {
    s.kind = SubtaskKind::Navigate;
    for (TokenId t : tokens)
      if (v.is_room(t)) {
        s.target_room = t;
        break;
      }
    return s;
  }

  TokenId head = tokens[0];
  if (head == v.id("place") || head == v.id("put")) {
    s.kind = SubtaskKind::Place;
    s.target_kind = first_kind();
    s.target_recep = first_recep();
    return s;
  }
  if (head == v.id("clean")) s.kind = SubtaskKind::Clean;
  else if (head == v.id("heat")) s.kind = SubtaskKind::Heat;
  else if (head == v.id("cool")) s.kind = SubtaskKind::Cool;
  else if (head == v.id("examine")) s.kind = SubtaskKind::Examine;
  else return std::nullopt;
  s.target_kind = first_kind();
  s.target_recep = first_recep();
  return s;
}

const char* subtask_kind_name(SubtaskKind k) {
  switch (k) {
    case SubtaskKind::Locate: return "Locate";
    case SubtaskKind::Place: return "Place";
    case SubtaskKind::Clean: return "Clean";
    case SubtaskKind::Heat: return "Heat";
    case SubtaskKind::Cool: return "Cool";
    case SubtaskKind::Navigate: return "Navigate";
    case SubtaskKind::Examine: return "Examine";
  }
  return "?";
}

}  // namespace stepworld
