#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stepworld/subtask.hpp"
#include "stepworld/vocab.hpp"

namespace stepworld {

inline constexpr int kStepLimit = 50;

struct InvalidTask : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EpisodeFinished : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Capability { None, Clean, Heat, Cool, Lamp };

// Static house layout: the generator varies objects and task goals, never
// the receptacle inventory, so search order is a stable convention.
struct ReceptacleInfo {
  const char* name;
  int room;
  bool openable;
  Capability cap;
  bool searchable;  // can hold objects and is part of the search sweep
};

const std::array<ReceptacleInfo, kNumReceptacles>& house();
TokenId receptacle_token(int r);
int receptacle_by_token(TokenId t);  // -1 if not a receptacle token
// Searchable receptacle indices in canonical sweep order.
const std::vector<int>& search_order();
int appliance_for(Capability cap);  // receptacle index, -1 if none

enum class TaskKind {
  PickPlace,
  ExamineInLight,
  CleanPlace,
  HeatPlace,
  CoolPlace,
  PickTwoPlace
};
inline constexpr int kNumTaskKinds = 6;
const char* task_kind_name(TaskKind k);

enum class Split { Seen, Unseen };

struct TaskGoal {
  TokenId object_kind = -1;
  int target_receptacle = -1;
  int count = 1;
};

struct TaskInstance {
  TokenSeq instruction;
  TaskKind task_kind = TaskKind::PickPlace;
  TaskGoal goal;
  Split split = Split::Seen;
};

enum class Verb { Goto, Open, Close, Take, Put, Clean, Heat, Cool, Examine, Wait };

struct Action {
  Verb verb = Verb::Wait;
  TokenId arg1 = -1;
  TokenId arg2 = -1;
  TokenSeq tokens;
};

Action make_action(Verb verb, TokenId arg1 = -1, TokenId arg2 = -1);
// Returns nullopt for token sequences outside the action grammar.
std::optional<Action> parse_action(const TokenSeq& tokens);

struct ObjectState {
  bool clean = false;
  bool hot = false;
  bool cold = false;
  bool examined = false;
};

struct ObjectInst {
  TokenId kind = -1;   // kind token
  TokenId token = -1;  // instance token
  ObjectState st;
};

struct ReceptacleState {
  bool open = false;
  std::vector<int> contents;  // object indices, kept sorted by instance token

  bool operator==(const ReceptacleState&) const = default;
};

struct WorldState {
  std::array<ReceptacleState, kNumReceptacles> receptacles;
  std::vector<ObjectInst> objects;
  int agent_room = 0;
  int at_receptacle = -1;  // -1: not at any receptacle
  int holding = -1;        // object index or -1
  int step_count = 0;
  std::uint64_t rng_seed = 0;
};

// Throws std::logic_error when a structural invariant is broken.
void check_state_invariants(const WorldState& s);

struct Observation {
  TokenSeq tokens;
  int room = 0;
  std::vector<TokenId> visible;  // instance tokens named by this observation
};

struct Episode {
  TaskInstance task;
  WorldState state;
  bool finished = false;
};

// Deterministic world generation; identical (task, seed) yields identical
// states and initial observations.
std::pair<Episode, Observation> reset(const TaskInstance& task,
                                      std::uint64_t seed);

struct StepResult {
  Episode next;
  Observation obs;
  double reward = 0.0;
  bool done = false;
};

// Invalid or malformed (nullopt) actions are no-ops that still consume a
// step and observe "nothing happens".
StepResult step(const Episode& ep, const std::optional<Action>& action);

bool goal_satisfied(const WorldState& s, const TaskInstance& task);
bool subtask_completed(const WorldState& s, const Subtask& g);

// --- Task generation --------------------------------------------------------

struct WorldGenConfig {
  std::vector<TokenId> object_kinds;  // defaults to the full schema list
  int min_objects = 6;
  int max_objects = 10;
  int seen_mod = 3;  // goal pair is Unseen iff pair_hash % seen_mod == 0
};

WorldGenConfig default_world_config();
// Parses a key=value world config file; throws std::invalid_argument on
// unknown keys or malformed values.
WorldGenConfig parse_world_config(const std::string& path);

// All (task_kind, object_kind, receptacle) goal triples in a split.
std::vector<TaskInstance> task_pool(const WorldGenConfig& cfg, Split split);
// Deterministic task sampling: index selects pool entry and seed variation.
TaskInstance make_task(const WorldGenConfig& cfg, Split split, int index);
std::uint64_t task_seed(std::uint64_t base_seed, Split split, int index);

// --- Observation structure --------------------------------------------------

// Parsed view of a canonical observation, used by the rule-based summarizer
// and the scripted expert. Works purely on tokens.
struct ObsView {
  enum Kind {
    Overview,     // initial house listing
    RoomListing,  // after goto room
    Arrive,       // after goto receptacle
    OpenResult,
    CloseResult,
    TakeResult,
    PutResult,
    OpResult,     // clean/heat/cool result
    ExamineResult,
    WaitResult,
    Noop,         // "nothing happens ."
    Unknown
  };
  Kind kind = Unknown;
  int receptacle = -1;             // receptacle the clause is about
  bool closed = false;             // arrival at a closed receptacle
  bool contents_known = false;     // a contents clause was observed
  std::vector<TokenId> contents;   // instance tokens listed for receptacle
  TokenId took = -1;               // instance taken (TakeResult)
  TokenId put_inst = -1;           // instance placed (PutResult)
  TokenId op_verb = -1;            // verb of an OpResult clause
  TokenId op_inst = -1;            // instance of an Op/Examine clause
  TokenId holding = -1;            // instance from the hold clause, if any
  TokenId room_token = -1;         // room named by a listing
};

ObsView parse_obs(const TokenSeq& tokens);

}  // namespace stepworld
