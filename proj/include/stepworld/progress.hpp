#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "stepworld/subtask.hpp"
#include "stepworld/vocab.hpp"
#include "stepworld/world.hpp"

namespace stepworld {

struct RuleViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct OverLength : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sentence templates of the progress grammar. Slots hold vocabulary tokens.
enum class SentenceKind {
  Empty,
  LocOngoing,   // searching for A , unchecked remain , doors opened|closed
  LocFound,     // found A at B
  LocTaken,     // found and picked up A
  Went,         // went to A
  Opened,       // opened A
  ClosedRecep,  // closed A
  Placed,       // put A in B
  Heated,       // heated A
  Cooled,       // cooled A
  Cleaned,      // cleaned A
  Examined,     // examined A under desklamp1
  Took,         // took A
  Waited,       // waited
  NavOngoing,   // heading to A [, route : r1 , r2 ...]
};

// Bounded structured summary of the interaction within one subtask. The
// Checked set exists only for Locate subtasks and grows monotonically.
struct LocalProgress {
  SentenceKind sentence = SentenceKind::Empty;
  TokenId slot_a = -1;
  TokenId slot_b = -1;
  bool doors_opened = false;
  bool locate = false;                // renders the separator + checked list
  std::vector<TokenId> checked;       // receptacle tokens, append order
  std::vector<TokenId> route;         // room tokens (Navigate)

  bool terminal() const {
    return sentence == SentenceKind::LocFound ||
           sentence == SentenceKind::LocTaken;
  }
  bool empty() const {
    return sentence == SentenceKind::Empty && !locate && checked.empty() &&
           route.empty();
  }
  bool operator==(const LocalProgress& o) const = default;
};

// Ordered list of completed subtasks; the global task progress.
struct GlobalProgress {
  std::vector<Subtask> completed;
  TokenSeq tokens() const;  // subtask renderings joined by ';'
};

LocalProgress init_progress();

// Applies the rule grammar over one executed step. Pure function of
// observable data only. Throws RuleViolation when prev is structurally
// inconsistent (the only way checked could shrink).
LocalProgress oracle_update(const Subtask& subtask, const Action& prev_action,
                            const Observation& obs, const LocalProgress& prev);

// Canonical wire rendering: sentence tokens, then for Locate progresses the
// separator token followed by the checked receptacle tokens. Throws
// OverLength when the result exceeds LP_MAX.
TokenSeq render(const LocalProgress& p);

// Inverse of render. Returns nullopt (Malformed) for any sequence outside
// the grammar; callers keep the previous progress in that case.
std::optional<LocalProgress> parse_progress(const TokenSeq& tokens);

// --- whole-episode summary (flat-agent mode) --------------------------------

// Concatenation of per-phase sentences under the LP_MAX budget, oldest
// sentences dropped first. Used when no hierarchy is available.
struct EpisodeSummary {
  std::vector<LocalProgress> past;  // sentence-only entries (no checked)
  LocalProgress current;

  bool operator==(const EpisodeSummary& o) const = default;
};

EpisodeSummary init_episode_summary();
TokenSeq render_summary(const EpisodeSummary& s);
std::optional<EpisodeSummary> parse_summary(const TokenSeq& tokens);
// Folds one step into the summary; phase_end moves the current sentence into
// the past list.
EpisodeSummary summary_update(const Subtask& phase, const Action& prev_action,
                              const Observation& obs, const EpisodeSummary& prev,
                              bool phase_end);

}  // namespace stepworld
