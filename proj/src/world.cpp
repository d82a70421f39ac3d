#include "stepworld/world.hpp"

#include <algorithm>
#include <fstream>
#include <random>

namespace stepworld {

namespace {

constexpr int kKitchen = 0, kLivingroom = 1, kBedroom = 2, kBathroom = 3;

const std::array<ReceptacleInfo, kNumReceptacles> kHouse = {{
    {"countertop1", kKitchen, false, Capability::None, true},
    {"cabinet1", kKitchen, true, Capability::None, true},
    {"cabinet2", kKitchen, true, Capability::None, true},
    {"sinkbasin1", kKitchen, false, Capability::Clean, true},
    {"fridge1", kKitchen, true, Capability::Cool, true},
    {"microwave1", kKitchen, true, Capability::Heat, true},
    {"shelf1", kLivingroom, false, Capability::None, true},
    {"box1", kLivingroom, true, Capability::None, true},
    {"drawer1", kBedroom, true, Capability::None, true},
    {"dresser1", kBedroom, true, Capability::None, true},
    {"desklamp1", kBedroom, false, Capability::Lamp, false},
    {"garbagecan1", kBathroom, false, Capability::None, true},
}};

// Receptacles that may appear as goal targets of Place-style tasks.
const std::array<int, 6> kGoalReceptacles = {0, 6, 7, 8, 9, 11};

TokenId W(const char* w) { return vocab().id(w); }

}  // namespace

const std::array<ReceptacleInfo, kNumReceptacles>& house() { return kHouse; }

TokenId receptacle_token(int r) { return vocab().receptacle_token(r); }

int receptacle_by_token(TokenId t) { return vocab().receptacle_index(t); }

const std::vector<int>& search_order() {
  static const std::vector<int> order = [] {
    std::vector<int> o;
    for (int r = 0; r < kNumReceptacles; ++r)
      if (kHouse[r].searchable) o.push_back(r);
    return o;
  }();
  return order;
}

int appliance_for(Capability cap) {
  for (int r = 0; r < kNumReceptacles; ++r)
    if (kHouse[r].cap == cap) return r;
  return -1;
}

const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::PickPlace: return "PickPlace";
    case TaskKind::ExamineInLight: return "ExamineInLight";
    case TaskKind::CleanPlace: return "CleanPlace";
    case TaskKind::HeatPlace: return "HeatPlace";
    case TaskKind::CoolPlace: return "CoolPlace";
    case TaskKind::PickTwoPlace: return "PickTwoPlace";
  }
  return "?";
}

Action make_action(Verb verb, TokenId arg1, TokenId arg2) {
  Action a;
  a.verb = verb;
  a.arg1 = arg1;
  a.arg2 = arg2;
  switch (verb) {
    case Verb::Goto: a.tokens = {W("goto"), arg1}; break;
    case Verb::Open: a.tokens = {W("open"), arg1}; break;
    case Verb::Close: a.tokens = {W("close"), arg1}; break;
    case Verb::Take: a.tokens = {W("take"), arg1}; break;
    case Verb::Put: a.tokens = {W("put"), arg1, arg2}; break;
    case Verb::Clean: a.tokens = {W("clean"), arg1}; break;
    case Verb::Heat: a.tokens = {W("heat"), arg1}; break;
    case Verb::Cool: a.tokens = {W("cool"), arg1}; break;
    case Verb::Examine: a.tokens = {W("examine"), arg1}; break;
    case Verb::Wait: a.tokens = {W("wait")}; break;
  }
  return a;
}

std::optional<Action> parse_action(const TokenSeq& tokens) {
  const Vocab& v = vocab();
  if (tokens.empty() || static_cast<int>(tokens.size()) > kActMax)
    return std::nullopt;
  TokenId head = tokens[0];
  auto one_arg = [&](Verb verb, auto pred) -> std::optional<Action> {
    if (tokens.size() != 2 || !pred(tokens[1])) return std::nullopt;
    return make_action(verb, tokens[1]);
  };
  auto is_recep = [&](TokenId t) { return v.is_receptacle(t); };
  auto is_inst = [&](TokenId t) { return v.is_object_instance(t); };

  if (head == W("goto")) {
    if (tokens.size() != 2) return std::nullopt;
    if (!v.is_receptacle(tokens[1]) && !v.is_room(tokens[1]))
      return std::nullopt;
    return make_action(Verb::Goto, tokens[1]);
  }
  if (head == W("open")) return one_arg(Verb::Open, is_recep);
  if (head == W("close")) return one_arg(Verb::Close, is_recep);
  if (head == W("take")) return one_arg(Verb::Take, is_inst);
  if (head == W("put")) {
    if (tokens.size() != 3 || !is_inst(tokens[1]) || !is_recep(tokens[2]))
      return std::nullopt;
    return make_action(Verb::Put, tokens[1], tokens[2]);
  }
  if (head == W("clean")) return one_arg(Verb::Clean, is_inst);
  if (head == W("heat")) return one_arg(Verb::Heat, is_inst);
  if (head == W("cool")) return one_arg(Verb::Cool, is_inst);
  if (head == W("examine")) return one_arg(Verb::Examine, is_inst);
  if (head == W("wait")) {
    if (tokens.size() != 1) return std::nullopt;
    return make_action(Verb::Wait);
  }
  return std::nullopt;
}

void check_state_invariants(const WorldState& s) {
  std::vector<int> seen(s.objects.size(), 0);
  for (int r = 0; r < kNumReceptacles; ++r) {
    for (std::size_t i = 0; i < s.receptacles[r].contents.size(); ++i) {
      int o = s.receptacles[r].contents[i];
      if (o < 0 || o >= static_cast<int>(s.objects.size()))
        throw std::logic_error("contents index out of range");
      seen[o]++;
      if (i > 0 && s.objects[s.receptacles[r].contents[i - 1]].token >
                       s.objects[o].token)
        throw std::logic_error("contents not sorted");
    }
  }
  if (s.holding >= 0) seen[s.holding]++;
  for (std::size_t o = 0; o < seen.size(); ++o)
    if (seen[o] != 1) throw std::logic_error("object not in exactly one place");
  if (s.step_count > kStepLimit) throw std::logic_error("step_count > limit");
  for (const auto& obj : s.objects)
    if (obj.st.hot && obj.st.cold)
      throw std::logic_error("object both hot and cold");
  if (s.at_receptacle >= 0 &&
      kHouse[s.at_receptacle].room != s.agent_room)
    throw std::logic_error("at_receptacle/room mismatch");
}

// --- observation rendering ---------------------------------------------------

namespace {

void push(TokenSeq& seq, std::initializer_list<const char*> words) {
  for (const char* w : words) seq.push_back(W(w));
}

void append_contents_clause(TokenSeq& t, std::vector<TokenId>& visible,
                            const WorldState& s, int r) {
  if (kHouse[r].cap == Capability::Lamp) return;
  t.push_back(receptacle_token(r));
  if (kHouse[r].openable && !s.receptacles[r].open) {
    push(t, {"is", "closed", "."});
    return;
  }
  if (s.receptacles[r].contents.empty()) {
    push(t, {"is", "empty", "."});
    return;
  }
  t.push_back(W(":"));
  for (int o : s.receptacles[r].contents) {
    t.push_back(s.objects[o].token);
    visible.push_back(s.objects[o].token);
  }
  t.push_back(W("."));
}

void append_hold_clause(TokenSeq& t, std::vector<TokenId>& visible,
                        const WorldState& s) {
  if (s.holding < 0) return;
  push(t, {"you", "hold"});
  t.push_back(s.objects[s.holding].token);
  t.push_back(W("."));
  visible.push_back(s.objects[s.holding].token);
}

Observation finish_obs(TokenSeq t, std::vector<TokenId> visible,
                       const WorldState& s) {
  Observation o;
  o.tokens = std::move(t);
  o.visible = std::move(visible);
  o.room = s.agent_room;
  if (static_cast<int>(o.tokens.size()) > kObsMax)
    throw std::logic_error("observation exceeds OBS_MAX");
  return o;
}

Observation render_overview(const WorldState& s) {
  TokenSeq t;
  std::vector<TokenId> visible;
  for (int room = 0; room < kNumRooms; ++room) {
    t.push_back(vocab().room_token(room));
    t.push_back(W(":"));
    for (int r = 0; r < kNumReceptacles; ++r)
      if (kHouse[r].room == room) t.push_back(receptacle_token(r));
    t.push_back(W("."));
  }
  return finish_obs(std::move(t), std::move(visible), s);
}

Observation render_noop(const WorldState& s) {
  TokenSeq t;
  push(t, {"nothing", "happens", "."});
  return finish_obs(std::move(t), {}, s);
}

}  // namespace

// --- task generation ---------------------------------------------------------

WorldGenConfig default_world_config() {
  WorldGenConfig cfg;
  for (int k = 0; k < kNumObjectKinds; ++k)
    cfg.object_kinds.push_back(vocab().object_kind_token(k));
  return cfg;
}

namespace {

std::uint64_t pair_hash(TaskKind kind, int kind_idx, int recep_idx) {
  std::uint64_t h = static_cast<std::uint64_t>(kind) * 1000003ull +
                    static_cast<std::uint64_t>(kind_idx) * 10007ull +
                    static_cast<std::uint64_t>(recep_idx) * 101ull;
  return fnv1a64(&h, sizeof(h));
}

TokenSeq build_instruction(TaskKind kind, TokenId obj_kind, int recep) {
  TokenSeq t;
  switch (kind) {
    case TaskKind::PickPlace:
      push(t, {"put", "a"});
      t.push_back(obj_kind);
      t.push_back(W("in"));
      t.push_back(receptacle_token(recep));
      break;
    case TaskKind::ExamineInLight:
      push(t, {"examine", "a"});
      t.push_back(obj_kind);
      t.push_back(W("under"));
      t.push_back(receptacle_token(recep));
      break;
    case TaskKind::CleanPlace:
    case TaskKind::HeatPlace:
    case TaskKind::CoolPlace: {
      push(t, {"put", "a"});
      const char* adj = kind == TaskKind::CleanPlace  ? "clean"
                        : kind == TaskKind::HeatPlace ? "hot"
                                                      : "cold";
      t.push_back(W(adj));
      t.push_back(obj_kind);
      t.push_back(W("in"));
      t.push_back(receptacle_token(recep));
      break;
    }
    case TaskKind::PickTwoPlace:
      push(t, {"put", "two"});
      t.push_back(obj_kind);
      t.push_back(W("in"));
      t.push_back(receptacle_token(recep));
      break;
  }
  return t;
}

}  // namespace

std::vector<TaskInstance> task_pool(const WorldGenConfig& cfg, Split split) {
  std::vector<TaskInstance> pool;
  for (int f = 0; f < kNumTaskKinds; ++f) {
    TaskKind kind = static_cast<TaskKind>(f);
    for (TokenId obj_kind : cfg.object_kinds) {
      int kind_idx = vocab().object_kind_index(obj_kind);
      std::vector<int> receps;
      if (kind == TaskKind::ExamineInLight)
        receps = {appliance_for(Capability::Lamp)};
      else
        receps.assign(kGoalReceptacles.begin(), kGoalReceptacles.end());
      for (int r : receps) {
        bool unseen = pair_hash(kind, kind_idx, r) % cfg.seen_mod == 0;
        if ((split == Split::Unseen) != unseen) continue;
        TaskInstance task;
        task.task_kind = kind;
        task.goal.object_kind = obj_kind;
        task.goal.target_receptacle = r;
        task.goal.count = kind == TaskKind::PickTwoPlace ? 2 : 1;
        task.split = split;
        task.instruction = build_instruction(kind, obj_kind, r);
        pool.push_back(task);
      }
    }
  }
  return pool;
}

TaskInstance make_task(const WorldGenConfig& cfg, Split split, int index) {
  auto pool = task_pool(cfg, split);
  if (pool.empty()) throw InvalidTask("empty task pool for split");
  return pool[static_cast<std::size_t>(index) % pool.size()];
}

std::uint64_t task_seed(std::uint64_t base_seed, Split split, int index) {
  std::uint64_t mix[3] = {base_seed, static_cast<std::uint64_t>(split) + 1,
                          static_cast<std::uint64_t>(index) + 1};
  return fnv1a64(mix, sizeof(mix));
}

// --- reset -------------------------------------------------------------------

namespace {

void insert_sorted(WorldState& s, int recep, int obj) {
  auto& c = s.receptacles[recep].contents;
  auto it = std::lower_bound(c.begin(), c.end(), obj, [&](int a, int b) {
    return s.objects[a].token < s.objects[b].token;
  });
  c.insert(it, obj);
}

}  // namespace

std::pair<Episode, Observation> reset(const TaskInstance& task,
                                      std::uint64_t seed) {
  const Vocab& v = vocab();
  if (!v.is_object_kind(task.goal.object_kind))
    throw InvalidTask("goal object kind absent from generator inventory");
  int tr = task.goal.target_receptacle;
  if (tr < 0 || tr >= kNumReceptacles)
    throw InvalidTask("goal receptacle out of range");
  bool examine = task.task_kind == TaskKind::ExamineInLight;
  if (!examine && !kHouse[tr].searchable)
    throw InvalidTask("goal receptacle cannot hold objects");
  if (examine && kHouse[tr].cap != Capability::Lamp)
    throw InvalidTask("examine task must target the lamp");
  if (task.goal.count < 1 || task.goal.count > 2)
    throw InvalidTask("goal count out of range");

  std::uint64_t mix[5] = {seed, static_cast<std::uint64_t>(task.task_kind),
                          static_cast<std::uint64_t>(task.goal.object_kind),
                          static_cast<std::uint64_t>(tr),
                          static_cast<std::uint64_t>(task.goal.count)};
  std::mt19937_64 rng(fnv1a64(mix, sizeof(mix)));

  Episode ep;
  ep.task = task;
  WorldState& s = ep.state;
  s.rng_seed = seed;
  s.agent_room = kKitchen;
  for (int r = 0; r < kNumReceptacles; ++r) s.receptacles[r].open = false;

  const auto& order = search_order();
  auto random_recep = [&](bool avoid_target) {
    while (true) {
      int r = order[rng() % order.size()];
      if (avoid_target && r == tr) continue;
      return r;
    }
  };

  std::array<int, kNumObjectKinds> used{};
  auto add_object = [&](TokenId kind, int recep) {
    int k = v.object_kind_index(kind);
    int idx = ++used[k];
    ObjectInst obj;
    obj.kind = kind;
    obj.token = v.instance_token(kind, idx);
    int o = static_cast<int>(s.objects.size());
    s.objects.push_back(obj);
    insert_sorted(s, recep, o);
  };

  for (int i = 0; i < task.goal.count; ++i)
    add_object(task.goal.object_kind, random_recep(!examine));

  int total = WorldGenConfig{}.min_objects +
              static_cast<int>(rng() % (WorldGenConfig{}.max_objects -
                                        WorldGenConfig{}.min_objects + 1));
  int distractors = std::max(0, total - task.goal.count);
  for (int i = 0; i < distractors; ++i) {
    TokenId kind;
    int k;
    do {
      k = static_cast<int>(rng() % kNumObjectKinds);
      kind = v.object_kind_token(k);
    } while (kind == task.goal.object_kind || used[k] >= kMaxInstancesPerKind);
    add_object(kind, random_recep(false));
  }

  check_state_invariants(s);
  Observation obs = render_overview(s);
  return {std::move(ep), std::move(obs)};
}

// --- stepping ----------------------------------------------------------------

namespace {

int find_object(const WorldState& s, TokenId inst) {
  for (std::size_t o = 0; o < s.objects.size(); ++o)
    if (s.objects[o].token == inst) return static_cast<int>(o);
  return -1;
}

int containing_receptacle(const WorldState& s, int obj) {
  for (int r = 0; r < kNumReceptacles; ++r)
    for (int o : s.receptacles[r].contents)
      if (o == obj) return r;
  return -1;
}

// Applies the action; returns the observation, or nullopt when invalid.
std::optional<Observation> apply_action(WorldState& s, const Action& a) {
  const Vocab& v = vocab();
  TokenSeq t;
  std::vector<TokenId> visible;

  switch (a.verb) {
    case Verb::Goto: {
      int r = v.receptacle_index(a.arg1);
      if (r >= 0) {
        s.agent_room = kHouse[r].room;
        s.at_receptacle = r;
        push(t, {"you", "arrive", "at"});
        t.push_back(receptacle_token(r));
        t.push_back(W("."));
        append_contents_clause(t, visible, s, r);
        break;
      }
      int room = v.room_index(a.arg1);
      if (room < 0) return std::nullopt;
      s.agent_room = room;
      s.at_receptacle = -1;
      push(t, {"you", "go", "to"});
      t.push_back(v.room_token(room));
      t.push_back(W("."));
      push(t, {"you", "see"});
      for (int r2 = 0; r2 < kNumReceptacles; ++r2)
        if (kHouse[r2].room == room) t.push_back(receptacle_token(r2));
      t.push_back(W("."));
      break;
    }
    case Verb::Open: {
      int r = v.receptacle_index(a.arg1);
      if (r < 0 || s.at_receptacle != r || !kHouse[r].openable ||
          s.receptacles[r].open)
        return std::nullopt;
      s.receptacles[r].open = true;
      push(t, {"you", "open"});
      t.push_back(receptacle_token(r));
      t.push_back(W("."));
      append_contents_clause(t, visible, s, r);
      break;
    }
    case Verb::Close: {
      int r = v.receptacle_index(a.arg1);
      if (r < 0 || s.at_receptacle != r || !kHouse[r].openable ||
          !s.receptacles[r].open)
        return std::nullopt;
      s.receptacles[r].open = false;
      push(t, {"you", "close"});
      t.push_back(receptacle_token(r));
      t.push_back(W("."));
      break;
    }
    case Verb::Take: {
      int o = find_object(s, a.arg1);
      if (o < 0 || s.holding >= 0) return std::nullopt;
      int r = containing_receptacle(s, o);
      if (r < 0 || s.at_receptacle != r) return std::nullopt;
      if (kHouse[r].openable && !s.receptacles[r].open) return std::nullopt;
      auto& c = s.receptacles[r].contents;
      c.erase(std::find(c.begin(), c.end(), o));
      s.holding = o;
      push(t, {"you", "take"});
      t.push_back(a.arg1);
      t.push_back(W("."));
      visible.push_back(a.arg1);
      break;
    }
    case Verb::Put: {
      int o = find_object(s, a.arg1);
      int r = v.receptacle_index(a.arg2);
      if (o < 0 || r < 0 || s.holding != o || s.at_receptacle != r)
        return std::nullopt;
      if (!kHouse[r].searchable) return std::nullopt;
      if (kHouse[r].openable && !s.receptacles[r].open) return std::nullopt;
      s.holding = -1;
      insert_sorted(s, r, o);
      push(t, {"you", "put"});
      t.push_back(a.arg1);
      t.push_back(W("in"));
      t.push_back(receptacle_token(r));
      t.push_back(W("."));
      visible.push_back(a.arg1);
      break;
    }
    case Verb::Clean:
    case Verb::Heat:
    case Verb::Cool: {
      int o = find_object(s, a.arg1);
      Capability cap = a.verb == Verb::Clean  ? Capability::Clean
                       : a.verb == Verb::Heat ? Capability::Heat
                                              : Capability::Cool;
      if (o < 0 || s.holding != o || s.at_receptacle != appliance_for(cap))
        return std::nullopt;
      auto& st = s.objects[o].st;
      if (a.verb == Verb::Clean) st.clean = true;
      if (a.verb == Verb::Heat) { st.hot = true; st.cold = false; }
      if (a.verb == Verb::Cool) { st.cold = true; st.hot = false; }
      const char* verb = a.verb == Verb::Clean  ? "clean"
                         : a.verb == Verb::Heat ? "heat"
                                                : "cool";
      t.push_back(W("you"));
      t.push_back(W(verb));
      t.push_back(a.arg1);
      t.push_back(W("."));
      break;
    }
    case Verb::Examine: {
      int o = find_object(s, a.arg1);
      if (o < 0 || s.holding != o ||
          s.at_receptacle != appliance_for(Capability::Lamp))
        return std::nullopt;
      s.objects[o].st.examined = true;
      push(t, {"you", "examine"});
      t.push_back(a.arg1);
      t.push_back(W("under"));
      t.push_back(receptacle_token(appliance_for(Capability::Lamp)));
      t.push_back(W("."));
      break;
    }
    case Verb::Wait: {
      push(t, {"you", "wait", "."});
      break;
    }
  }

  append_hold_clause(t, visible, s);
  return finish_obs(std::move(t), std::move(visible), s);
}

}  // namespace

StepResult step(const Episode& ep, const std::optional<Action>& action) {
  if (ep.finished) throw EpisodeFinished("step after episode end");

  StepResult res;
  res.next = ep;
  WorldState& s = res.next.state;
  s.step_count++;
  s.rng_seed = ep.state.rng_seed;

  std::optional<Observation> obs;
  if (action) obs = apply_action(s, *action);
  if (!obs) {
    // invalid or malformed actions leave the world unchanged
    s = ep.state;
    s.step_count = ep.state.step_count + 1;
    obs = render_noop(s);
  }

  bool goal = goal_satisfied(s, ep.task);
  res.reward = goal ? 1.0 : 0.0;
  res.done = goal || s.step_count >= kStepLimit;
  res.next.finished = res.done;
  res.obs = std::move(*obs);
  return res;
}

bool goal_satisfied(const WorldState& s, const TaskInstance& task) {
  TokenId kind = task.goal.object_kind;
  int tr = task.goal.target_receptacle;
  switch (task.task_kind) {
    case TaskKind::ExamineInLight: {
      for (const auto& o : s.objects)
        if (o.kind == kind && o.st.examined) return true;
      return false;
    }
    default: {
      int n = 0;
      for (int o : s.receptacles[tr].contents) {
        const auto& obj = s.objects[o];
        if (obj.kind != kind) continue;
        if (task.task_kind == TaskKind::CleanPlace && !obj.st.clean) continue;
        if (task.task_kind == TaskKind::HeatPlace && !obj.st.hot) continue;
        if (task.task_kind == TaskKind::CoolPlace && !obj.st.cold) continue;
        ++n;
      }
      return n >= task.goal.count;
    }
  }
}

bool subtask_completed(const WorldState& s, const Subtask& g) {
  auto holding_kind = [&](TokenId kind, TokenId except_inst) {
    if (s.holding < 0) return false;
    const auto& obj = s.objects[s.holding];
    return obj.kind == kind && obj.token != except_inst;
  };
  switch (g.kind) {
    case SubtaskKind::Locate: {
      if (g.use_form)
        return g.target_recep >= 0 &&
               s.at_receptacle == receptacle_by_token(g.target_recep);
      if (g.target_kind < 0) return false;
      if (holding_kind(g.target_kind, g.except_inst)) return true;
      for (const auto& o : s.objects)
        if (o.kind == g.target_kind && o.token != g.except_inst &&
            o.st.examined)
          return true;
      return false;
    }
    case SubtaskKind::Place: {
      int r = receptacle_by_token(g.target_recep);
      if (g.target_kind < 0 || r < 0) return false;
      if (s.holding >= 0 && s.objects[s.holding].kind == g.target_kind)
        return false;
      for (int o : s.receptacles[r].contents)
        if (s.objects[o].kind == g.target_kind) return true;
      return false;
    }
    case SubtaskKind::Clean:
    case SubtaskKind::Heat:
    case SubtaskKind::Cool: {
      if (g.target_kind < 0) return false;
      for (const auto& o : s.objects) {
        if (o.kind != g.target_kind) continue;
        if (g.kind == SubtaskKind::Clean && o.st.clean) return true;
        if (g.kind == SubtaskKind::Heat && o.st.hot) return true;
        if (g.kind == SubtaskKind::Cool && o.st.cold) return true;
      }
      return false;
    }
    case SubtaskKind::Examine: {
      if (g.target_kind < 0) return false;
      for (const auto& o : s.objects)
        if (o.kind == g.target_kind && o.st.examined) return true;
      return false;
    }
    case SubtaskKind::Navigate:
      return g.target_room >= 0 &&
             s.agent_room == vocab().room_index(g.target_room);
  }
  return false;
}

// --- observation parsing -----------------------------------------------------

ObsView parse_obs(const TokenSeq& tokens) {
  const Vocab& v = vocab();
  ObsView view;
  if (tokens.empty()) return view;

  std::vector<TokenSeq> clauses;
  TokenSeq cur;
  for (TokenId t : tokens) {
    if (t == v.period()) {
      if (!cur.empty()) clauses.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(t);
    }
  }
  if (!cur.empty()) clauses.push_back(cur);
  if (clauses.empty()) return view;

  auto read_contents = [&](const TokenSeq& c) {
    // "<recep> is closed" | "<recep> is empty" | "<recep> : inst..."
    if (c.size() < 2 || !v.is_receptacle(c[0])) return false;
    int r = v.receptacle_index(c[0]);
    if (c.size() == 3 && c[1] == v.id("is") && c[2] == v.id("closed")) {
      view.receptacle = r;
      view.closed = true;
      return true;
    }
    if (c.size() == 3 && c[1] == v.id("is") && c[2] == v.id("empty")) {
      view.receptacle = r;
      view.contents_known = true;
      return true;
    }
    if (c[1] == v.colon()) {
      view.receptacle = r;
      view.contents_known = true;
      for (std::size_t i = 2; i < c.size(); ++i)
        if (v.is_object_instance(c[i])) view.contents.push_back(c[i]);
      return true;
    }
    return false;
  };

  for (const auto& c : clauses) {
    if (c.size() == 3 && c[0] == v.id("you") && c[1] == v.id("hold") &&
        v.is_object_instance(c[2]))
      view.holding = c[2];
  }

  const TokenSeq& c0 = clauses[0];
  if (c0.size() >= 2 && v.is_room(c0[0]) && c0[1] == v.colon()) {
    view.kind = ObsView::Overview;
    return view;
  }
  if (c0[0] == v.id("nothing")) {
    view.kind = ObsView::Noop;
    return view;
  }
  if (c0[0] != v.id("you") || c0.size() < 2) return view;

  TokenId verb = c0[1];
  if (verb == v.id("arrive") && c0.size() == 4 && v.is_receptacle(c0[3])) {
    view.kind = ObsView::Arrive;
    view.receptacle = v.receptacle_index(c0[3]);
    if (clauses.size() > 1) read_contents(clauses[1]);
    return view;
  }
  if (verb == v.id("go") && c0.size() == 4 && v.is_room(c0[3])) {
    view.kind = ObsView::RoomListing;
    view.room_token = c0[3];
    return view;
  }
  if (verb == v.id("open") && c0.size() == 3) {
    view.kind = ObsView::OpenResult;
    view.receptacle = v.receptacle_index(c0[2]);
    if (clauses.size() > 1) read_contents(clauses[1]);
    return view;
  }
  if (verb == v.id("close") && c0.size() == 3) {
    view.kind = ObsView::CloseResult;
    view.receptacle = v.receptacle_index(c0[2]);
    return view;
  }
  if (verb == v.id("take") && c0.size() == 3) {
    view.kind = ObsView::TakeResult;
    view.took = c0[2];
    return view;
  }
  if (verb == v.id("put") && c0.size() == 5) {
    view.kind = ObsView::PutResult;
    view.put_inst = c0[2];
    view.receptacle = v.receptacle_index(c0[4]);
    return view;
  }
  if ((verb == v.id("clean") || verb == v.id("heat") || verb == v.id("cool")) &&
      c0.size() == 3) {
    view.kind = ObsView::OpResult;
    view.op_verb = verb;
    view.op_inst = c0[2];
    return view;
  }
  if (verb == v.id("examine") && c0.size() >= 3) {
    view.kind = ObsView::ExamineResult;
    view.op_verb = verb;
    view.op_inst = c0[2];
    return view;
  }
  if (verb == v.id("wait")) {
    view.kind = ObsView::WaitResult;
    return view;
  }
  return view;
}

WorldGenConfig parse_world_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open world config: " + path);
  WorldGenConfig cfg = default_world_config();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("world config line " + std::to_string(lineno) +
                                  ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "object_kinds") {
      cfg.object_kinds.clear();
      std::size_t i = 0;
      while (i < val.size()) {
        auto j = val.find(',', i);
        if (j == std::string::npos) j = val.size();
        std::string w = val.substr(i, j - i);
        if (!w.empty()) {
          TokenId t = vocab().contains(w) ? vocab().id(w) : -1;
          if (t < 0 || !vocab().is_object_kind(t))
            throw std::invalid_argument("unknown object kind: " + w);
          cfg.object_kinds.push_back(t);
        }
        i = j + 1;
      }
      if (cfg.object_kinds.empty())
        throw std::invalid_argument("object_kinds must be nonempty");
    } else if (key == "min_objects") {
      cfg.min_objects = std::stoi(val);
    } else if (key == "max_objects") {
      cfg.max_objects = std::stoi(val);
    } else if (key == "seen_mod") {
      cfg.seen_mod = std::stoi(val);
      if (cfg.seen_mod < 2)
        throw std::invalid_argument("seen_mod must be >= 2");
    } else if (key == "rooms") {
      std::string expect;
      for (int r = 0; r < kNumRooms; ++r) {
        if (r) expect += ',';
        expect += vocab().word(vocab().room_token(r));
      }
      if (val != expect)
        throw std::invalid_argument("rooms are fixed to: " + expect);
    } else {
      throw std::invalid_argument("unknown world config key: " + key);
    }
  }
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects ||
      cfg.max_objects > static_cast<int>(cfg.object_kinds.size()) *
                            kMaxInstancesPerKind)
    throw std::invalid_argument("invalid object count range");
  return cfg;
}

}  // namespace stepworld
