#include "stepworld/progress.hpp"

#include <algorithm>

namespace stepworld {

namespace {
TokenId W(const char* w) { return vocab().id(w); }

void push(TokenSeq& t, std::initializer_list<const char*> words) {
  for (const char* w : words) t.push_back(W(w));
}
}  // namespace

TokenSeq GlobalProgress::tokens() const {
  TokenSeq out;
  for (std::size_t i = 0; i < completed.size(); ++i) {
    if (i) out.push_back(vocab().semicolon());
    out.insert(out.end(), completed[i].tokens.begin(),
               completed[i].tokens.end());
  }
  return out;
}

LocalProgress init_progress() { return LocalProgress{}; }

namespace {

TokenSeq sentence_tokens(const LocalProgress& p) {
  TokenSeq t;
  switch (p.sentence) {
    case SentenceKind::Empty:
      break;
    case SentenceKind::LocOngoing:
      push(t, {"searching", "for"});
      t.push_back(p.slot_a);
      push(t, {",", "unchecked", "remain", ",", "doors"});
      t.push_back(W(p.doors_opened ? "opened" : "closed"));
      break;
    case SentenceKind::LocFound:
      t.push_back(W("found"));
      t.push_back(p.slot_a);
      t.push_back(W("at"));
      t.push_back(p.slot_b);
      break;
    case SentenceKind::LocTaken:
      push(t, {"found", "and", "picked", "up"});
      t.push_back(p.slot_a);
      break;
    case SentenceKind::Went:
      push(t, {"went", "to"});
      t.push_back(p.slot_a);
      break;
    case SentenceKind::Opened:
      t.push_back(W("opened"));
      t.push_back(p.slot_a);
      break;
    case SentenceKind::ClosedRecep:
      t.push_back(W("closed"));
      t.push_back(p.slot_a);
      break;
    case SentenceKind::Placed:
      t.push_back(W("put"));
      t.push_back(p.slot_a);
      t.push_back(W("in"));
      t.push_back(p.slot_b);
      break;
    case SentenceKind::Heated:
    case SentenceKind::Cooled:
    case SentenceKind::Cleaned:
      t.push_back(W(p.sentence == SentenceKind::Heated   ? "heated"
                    : p.sentence == SentenceKind::Cooled ? "cooled"
                                                         : "cleaned"));
      t.push_back(p.slot_a);
      break;
    case SentenceKind::Examined:
      t.push_back(W("examined"));
      t.push_back(p.slot_a);
      t.push_back(W("under"));
      t.push_back(receptacle_token(appliance_for(Capability::Lamp)));
      break;
    case SentenceKind::Took:
      t.push_back(W("took"));
      t.push_back(p.slot_a);
      break;
    case SentenceKind::Waited:
      t.push_back(W("waited"));
      break;
    case SentenceKind::NavOngoing:
      push(t, {"heading", "to"});
      t.push_back(p.slot_a);
      if (!p.route.empty()) {
        push(t, {",", "route", ":"});
        for (std::size_t i = 0; i < p.route.size(); ++i) {
          if (i) t.push_back(vocab().comma());
          t.push_back(p.route[i]);
        }
      }
      break;
  }
  return t;
}

}  // namespace

TokenSeq render(const LocalProgress& p) {
  if (p.empty()) return {};
  TokenSeq t = sentence_tokens(p);
  if (p.locate) {
    t.push_back(vocab().sep());
    for (TokenId c : p.checked) t.push_back(c);
  }
  if (static_cast<int>(t.size()) > kLpMax)
    throw OverLength("progress rendering exceeds LP_MAX");
  return t;
}

namespace {

// Matches one sentence against the templates. Returns nullopt on mismatch.
std::optional<LocalProgress> parse_sentence(const TokenSeq& t) {
  const Vocab& v = vocab();
  LocalProgress p;
  if (t.empty()) return p;

  auto at = [&](std::size_t i, const char* w) {
    return i < t.size() && t[i] == W(w);
  };

  if (at(0, "searching")) {
    if (t.size() != 9 || !at(1, "for") || !at(3, ",") || !at(4, "unchecked") ||
        !at(5, "remain") || !at(6, ",") || !at(7, "doors"))
      return std::nullopt;
    if (!at(8, "opened") && !at(8, "closed")) return std::nullopt;
    if (!v.is_object_kind(t[2]) && !v.is_receptacle(t[2])) return std::nullopt;
    p.sentence = SentenceKind::LocOngoing;
    p.slot_a = t[2];
    p.doors_opened = at(8, "opened");
    return p;
  }
  if (at(0, "found") && at(1, "and")) {
    if (t.size() != 5 || !at(2, "picked") || !at(3, "up") ||
        !v.is_object_instance(t[4]))
      return std::nullopt;
    p.sentence = SentenceKind::LocTaken;
    p.slot_a = t[4];
    return p;
  }
  if (at(0, "found")) {
    if (t.size() != 4 || !at(2, "at") || !v.is_receptacle(t[3]))
      return std::nullopt;
    if (!v.is_object_instance(t[1]) && !v.is_receptacle(t[1]))
      return std::nullopt;
    p.sentence = SentenceKind::LocFound;
    p.slot_a = t[1];
    p.slot_b = t[3];
    return p;
  }
  if (at(0, "went")) {
    if (t.size() != 3 || !at(1, "to")) return std::nullopt;
    if (!v.is_receptacle(t[2]) && !v.is_room(t[2])) return std::nullopt;
    p.sentence = SentenceKind::Went;
    p.slot_a = t[2];
    return p;
  }
  if (at(0, "opened") || at(0, "closed")) {
    if (t.size() != 2 || !v.is_receptacle(t[1])) return std::nullopt;
    p.sentence = at(0, "opened") ? SentenceKind::Opened
                                 : SentenceKind::ClosedRecep;
    p.slot_a = t[1];
    return p;
  }
  if (at(0, "put")) {
    if (t.size() != 4 || !at(2, "in") || !v.is_object_instance(t[1]) ||
        !v.is_receptacle(t[3]))
      return std::nullopt;
    p.sentence = SentenceKind::Placed;
    p.slot_a = t[1];
    p.slot_b = t[3];
    return p;
  }
  if (at(0, "heated") || at(0, "cooled") || at(0, "cleaned")) {
    if (t.size() != 2 || !v.is_object_instance(t[1])) return std::nullopt;
    p.sentence = at(0, "heated")   ? SentenceKind::Heated
                 : at(0, "cooled") ? SentenceKind::Cooled
                                   : SentenceKind::Cleaned;
    p.slot_a = t[1];
    return p;
  }
  if (at(0, "examined")) {
    if (t.size() != 4 || !at(2, "under") || !v.is_object_instance(t[1]) ||
        t[3] != receptacle_token(appliance_for(Capability::Lamp)))
      return std::nullopt;
    p.sentence = SentenceKind::Examined;
    p.slot_a = t[1];
    return p;
  }
  if (at(0, "took")) {
    if (t.size() != 2 || !v.is_object_instance(t[1])) return std::nullopt;
    p.sentence = SentenceKind::Took;
    p.slot_a = t[1];
    return p;
  }
  if (at(0, "waited")) {
    if (t.size() != 1) return std::nullopt;
    p.sentence = SentenceKind::Waited;
    return p;
  }
  if (at(0, "heading")) {
    if (t.size() < 3 || !at(1, "to") || !v.is_room(t[2])) return std::nullopt;
    p.sentence = SentenceKind::NavOngoing;
    p.slot_a = t[2];
    if (t.size() > 3) {
      if (t.size() < 6 || !at(3, ",") || !at(4, "route") || t[5] != v.colon())
        return std::nullopt;
      std::size_t i = 6;
      bool expect_room = true;
      for (; i < t.size(); ++i) {
        if (expect_room) {
          if (!v.is_room(t[i])) return std::nullopt;
          p.route.push_back(t[i]);
        } else if (t[i] != v.comma()) {
          return std::nullopt;
        }
        expect_room = !expect_room;
      }
      if (expect_room || p.route.empty()) return std::nullopt;
    }
    return p;
  }
  return std::nullopt;
}

}  // namespace

std::optional<LocalProgress> parse_progress(const TokenSeq& tokens) {
  const Vocab& v = vocab();
  if (tokens.empty()) return init_progress();

  auto sep_it = std::find(tokens.begin(), tokens.end(), v.sep());
  TokenSeq sent(tokens.begin(), sep_it);
  auto parsed = parse_sentence(sent);
  if (!parsed) return std::nullopt;
  LocalProgress p = *parsed;

  if (sep_it != tokens.end()) {
    p.locate = true;
    if (p.sentence != SentenceKind::LocOngoing &&
        p.sentence != SentenceKind::LocFound &&
        p.sentence != SentenceKind::LocTaken)
      return std::nullopt;
    for (auto it = sep_it + 1; it != tokens.end(); ++it) {
      if (!v.is_receptacle(*it)) return std::nullopt;
      if (std::find(p.checked.begin(), p.checked.end(), *it) !=
          p.checked.end())
        return std::nullopt;
      p.checked.push_back(*it);
    }
  } else if (p.sentence == SentenceKind::LocOngoing ||
             p.sentence == SentenceKind::LocFound ||
             p.sentence == SentenceKind::LocTaken) {
    return std::nullopt;  // locate sentences carry the separator
  }
  if (p.empty() && !tokens.empty()) return std::nullopt;
  return p;
}

namespace {

void validate_prev(const LocalProgress& prev) {
  const Vocab& v = vocab();
  for (std::size_t i = 0; i < prev.checked.size(); ++i) {
    if (!v.is_receptacle(prev.checked[i]))
      throw RuleViolation("checked entry is not a receptacle");
    for (std::size_t j = 0; j < i; ++j)
      if (prev.checked[j] == prev.checked[i])
        throw RuleViolation("duplicate checked entry");
  }
}

bool matches_target(const Subtask& g, TokenId inst) {
  if (g.target_kind < 0) return false;
  return vocab().instance_kind(inst) == g.target_kind &&
         inst != g.except_inst;
}

LocalProgress locate_update(const Subtask& g, const Action& a,
                            const ObsView& view, const LocalProgress& prev) {
  LocalProgress p = prev;
  p.locate = true;

  if (prev.sentence == SentenceKind::LocTaken) return p;

  if (view.kind == ObsView::TakeResult && matches_target(g, view.took)) {
    p.sentence = SentenceKind::LocTaken;
    p.slot_a = view.took;
    p.slot_b = -1;
    return p;
  }
  if (g.use_form && view.kind == ObsView::Arrive && g.target_recep >= 0 &&
      view.receptacle == receptacle_by_token(g.target_recep)) {
    p.sentence = SentenceKind::LocFound;
    p.slot_a = g.target_recep;
    p.slot_b = g.target_recep;
    return p;
  }
  if (prev.terminal()) return p;

  bool search_action = a.verb == Verb::Open || a.verb == Verb::Goto;
  if (search_action && view.contents_known && view.receptacle >= 0) {
    TokenId found = -1;
    for (TokenId inst : view.contents)
      if (matches_target(g, inst)) found = inst;
    if (found >= 0) {
      p.sentence = SentenceKind::LocFound;
      p.slot_a = found;
      p.slot_b = receptacle_token(view.receptacle);
      return p;
    }
    TokenId rt = receptacle_token(view.receptacle);
    if (std::find(p.checked.begin(), p.checked.end(), rt) == p.checked.end())
      p.checked.push_back(rt);
  }

  p.sentence = SentenceKind::LocOngoing;
  p.slot_a = g.use_form ? g.target_recep : g.target_kind;
  p.slot_b = -1;
  p.doors_opened = false;
  for (TokenId c : p.checked) {
    int r = receptacle_by_token(c);
    if (r >= 0 && house()[r].openable) p.doors_opened = true;
  }
  return p;
}

LocalProgress navigate_update(const Subtask& g, const Action&,
                              const ObsView& view, const LocalProgress& prev) {
  LocalProgress p = prev;
  p.sentence = SentenceKind::NavOngoing;
  p.slot_a = g.target_room;
  TokenId entered = -1;
  if (view.kind == ObsView::RoomListing) entered = view.room_token;
  if (view.kind == ObsView::Arrive && view.receptacle >= 0)
    entered = vocab().room_token(house()[view.receptacle].room);
  if (entered >= 0 && (p.route.empty() || p.route.back() != entered))
    p.route.push_back(entered);
  return p;
}

LocalProgress nonlocate_update(const Action&, const ObsView& view,
                               const LocalProgress& prev) {
  LocalProgress p;
  p.checked.clear();
  switch (view.kind) {
    case ObsView::Arrive:
      p.sentence = SentenceKind::Went;
      p.slot_a = receptacle_token(view.receptacle);
      break;
    case ObsView::RoomListing:
      p.sentence = SentenceKind::Went;
      p.slot_a = view.room_token;
      break;
    case ObsView::OpenResult:
      p.sentence = SentenceKind::Opened;
      p.slot_a = receptacle_token(view.receptacle);
      break;
    case ObsView::CloseResult:
      p.sentence = SentenceKind::ClosedRecep;
      p.slot_a = receptacle_token(view.receptacle);
      break;
    case ObsView::TakeResult:
      p.sentence = SentenceKind::Took;
      p.slot_a = view.took;
      break;
    case ObsView::PutResult:
      p.sentence = SentenceKind::Placed;
      p.slot_a = view.put_inst;
      p.slot_b = receptacle_token(view.receptacle);
      break;
    case ObsView::OpResult: {
      const Vocab& v = vocab();
      p.sentence = view.op_verb == v.id("heat")   ? SentenceKind::Heated
                   : view.op_verb == v.id("cool") ? SentenceKind::Cooled
                                                  : SentenceKind::Cleaned;
      p.slot_a = view.op_inst;
      break;
    }
    case ObsView::ExamineResult:
      p.sentence = SentenceKind::Examined;
      p.slot_a = view.op_inst;
      break;
    case ObsView::WaitResult:
      p.sentence = SentenceKind::Waited;
      break;
    default: {
      // no-ops and unrecognized observations leave the summary unchanged
      LocalProgress keep = prev;
      keep.checked.clear();
      keep.locate = false;
      return keep;
    }
  }
  return p;
}

}  // namespace

LocalProgress oracle_update(const Subtask& subtask, const Action& prev_action,
                            const Observation& obs, const LocalProgress& prev) {
  validate_prev(prev);
  ObsView view = parse_obs(obs.tokens);

  LocalProgress result;
  if (subtask.kind == SubtaskKind::Locate)
    result = locate_update(subtask, prev_action, view, prev);
  else if (subtask.kind == SubtaskKind::Navigate)
    result = navigate_update(subtask, prev_action, view, prev);
  else
    result = nonlocate_update(prev_action, view, prev);

  for (TokenId c : prev.checked)
    if (subtask.kind == SubtaskKind::Locate &&
        std::find(result.checked.begin(), result.checked.end(), c) ==
            result.checked.end())
      throw RuleViolation("checked set shrank");
  return result;
}

// --- whole-episode summary ---------------------------------------------------

EpisodeSummary init_episode_summary() { return EpisodeSummary{}; }

TokenSeq render_summary(const EpisodeSummary& s) {
  // oldest sentences are dropped first to honor the LP_MAX budget; each past
  // sentence keeps its trailing semicolon so an empty current stays
  // distinguishable
  TokenSeq cur = render(s.current);
  for (std::size_t start = 0; start <= s.past.size(); ++start) {
    TokenSeq t;
    for (std::size_t i = start; i < s.past.size(); ++i) {
      TokenSeq sent = sentence_tokens(s.past[i]);
      t.insert(t.end(), sent.begin(), sent.end());
      t.push_back(vocab().semicolon());
    }
    t.insert(t.end(), cur.begin(), cur.end());
    if (static_cast<int>(t.size()) <= kLpMax) return t;
  }
  return cur;  // current alone is within budget by render()'s contract
}

std::optional<EpisodeSummary> parse_summary(const TokenSeq& tokens) {
  const Vocab& v = vocab();
  EpisodeSummary s;
  if (tokens.empty()) return s;

  // Sentences never contain semicolons internally (in-sentence lists use
  // commas), so a semicolon always separates summary entries.
  std::vector<TokenSeq> parts;
  TokenSeq cur;
  for (TokenId t : tokens) {
    if (t == v.semicolon()) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(t);
    }
  }
  parts.push_back(cur);

  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i + 1 == parts.size()) {
      auto p = parse_progress(parts[i]);
      if (!p) return std::nullopt;
      s.current = *p;
    } else {
      auto p = parse_sentence(parts[i]);
      if (!p || p->sentence == SentenceKind::Empty) return std::nullopt;
      s.past.push_back(*p);
    }
  }
  return s;
}

EpisodeSummary summary_update(const Subtask& phase, const Action& prev_action,
                              const Observation& obs,
                              const EpisodeSummary& prev, bool phase_end) {
  EpisodeSummary s = prev;
  s.current = oracle_update(phase, prev_action, obs, s.current);
  if (phase_end) {
    LocalProgress sent = s.current;
    sent.checked.clear();
    sent.locate = false;
    sent.route.clear();
    if (sent.sentence != SentenceKind::Empty) s.past.push_back(sent);
    s.current = init_progress();
  }
  return s;
}

}  // namespace stepworld
