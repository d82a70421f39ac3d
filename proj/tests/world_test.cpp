#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "stepworld/progress.hpp"
#include "stepworld/world.hpp"

using namespace stepworld;

namespace {

TaskInstance pick_place_task(const char* kind, const char* recep) {
  TaskInstance t;
  t.task_kind = TaskKind::PickPlace;
  t.goal.object_kind = vocab().id(kind);
  t.goal.target_receptacle = receptacle_by_token(vocab().id(recep));
  t.goal.count = 1;
  t.instruction = vocab().tokenize(std::string("put a ") + kind + " in " + recep);
  return t;
}

int count_kind_in(const WorldState& s, TokenId kind, int recep) {
  int n = 0;
  for (int o : s.receptacles[recep].contents)
    if (s.objects[o].kind == kind) ++n;
  return n;
}

// Drives the episode to the state right before placing: locate the goal
// object by exhaustive sweep using latent state, take it, go to target.
Episode walk_to_goal_object(Episode ep, TokenId kind) {
  for (int r = 0; r < kNumReceptacles; ++r) {
    bool has = false;
    for (int o : ep.state.receptacles[r].contents)
      if (ep.state.objects[o].kind == kind) has = true;
    if (!has) continue;
    auto res = step(ep, make_action(Verb::Goto, receptacle_token(r)));
    ep = res.next;
    if (house()[r].openable) {
      res = step(ep, make_action(Verb::Open, receptacle_token(r)));
      ep = res.next;
    }
    TokenId inst = -1;
    for (int o : ep.state.receptacles[r].contents)
      if (ep.state.objects[o].kind == kind) inst = ep.state.objects[o].token;
    res = step(ep, make_action(Verb::Take, inst));
    return res.next;
  }
  return ep;
}

}  // namespace

TEST_CASE("reset is deterministic and respects the generator contract") {
  TaskInstance t = pick_place_task("apple", "box1");
  auto [ep1, obs1] = reset(t, 7);
  auto [ep2, obs2] = reset(t, 7);
  CHECK(obs1.tokens == obs2.tokens);
  CHECK(ep1.state.step_count == 0);

  int apples = 0;
  for (const auto& o : ep1.state.objects)
    if (o.kind == vocab().id("apple")) ++apples;
  CHECK(apples == 1);
  CHECK(count_kind_in(ep1.state, vocab().id("apple"),
                      t.goal.target_receptacle) == 0);

  auto [ep3, obs3] = reset(t, 8);
  CHECK(obs3.tokens == obs1.tokens);  // overview lists the fixed house
}

TEST_CASE("PickTwoPlace seeds at least two goal objects") {
  // enumerated over the generator's output, per the task contract
  TaskInstance t = pick_place_task("mug", "shelf1");
  t.task_kind = TaskKind::PickTwoPlace;
  t.goal.count = 2;
  for (std::uint64_t seed : {3, 11, 29}) {
    auto [ep, obs] = reset(t, seed);
    int mugs = 0;
    for (const auto& o : ep.state.objects)
      if (o.kind == vocab().id("mug")) ++mugs;
    CHECK(mugs >= 2);
  }
}

TEST_CASE("reset rejects a malformed goal") {
  TaskInstance t = pick_place_task("apple", "box1");
  t.goal.object_kind = vocab().id("kitchen");
  CHECK_THROWS_AS(reset(t, 1), InvalidTask);
}

TEST_CASE("take and put transitions") {
  TaskInstance t = pick_place_task("apple", "box1");
  auto [ep, obs0] = reset(t, 7);
  ep = walk_to_goal_object(ep, vocab().id("apple"));
  CHECK(ep.state.holding >= 0);
  CHECK(ep.state.objects[ep.state.holding].kind == vocab().id("apple"));

  auto res = step(ep, make_action(Verb::Goto, vocab().id("box1")));
  CHECK(res.reward == 0.0);
  CHECK_FALSE(res.done);
  ep = res.next;
  res = step(ep, make_action(Verb::Open, vocab().id("box1")));
  ep = res.next;
  TokenId held = ep.state.objects[ep.state.holding].token;
  res = step(ep, make_action(Verb::Put, held, vocab().id("box1")));
  CHECK(res.reward == 1.0);
  CHECK(res.done);
  CHECK_THROWS_AS(step(res.next, make_action(Verb::Wait)), EpisodeFinished);
}

TEST_CASE("invalid actions are no-ops with the canonical observation") {
  TaskInstance t = pick_place_task("apple", "box1");
  auto [ep, obs0] = reset(t, 7);
  auto before = ep.state;

  auto res = step(ep, make_action(Verb::Open, vocab().id("countertop1")));
  CHECK(vocab().render(res.obs.tokens) == "nothing happens .");
  CHECK(res.next.state.step_count == before.step_count + 1);
  CHECK(res.next.state.holding == before.holding);
  CHECK(res.next.state.receptacles == before.receptacles);

  res = step(ep, std::nullopt);  // malformed action from a learned head
  CHECK(vocab().render(res.obs.tokens) == "nothing happens .");
}

TEST_CASE("episode ends at the step limit") {
  TaskInstance t = pick_place_task("apple", "box1");
  auto [ep, obs0] = reset(t, 7);
  for (int i = 0; i < kStepLimit - 1; ++i) {
    auto res = step(ep, make_action(Verb::Wait));
    CHECK_FALSE(res.done);
    ep = res.next;
  }
  auto res = step(ep, make_action(Verb::Wait));
  CHECK(res.done);
  CHECK(res.reward == 0.0);
}

TEST_CASE("goal predicates") {
  TaskInstance t = pick_place_task("apple", "box1");
  t.task_kind = TaskKind::PickTwoPlace;
  t.goal.count = 2;
  auto [ep, obs0] = reset(t, 3);
  int box = t.goal.target_receptacle;

  WorldState s = ep.state;
  // move one apple into the box by editing latent state directly
  std::vector<int> apples;
  for (std::size_t o = 0; o < s.objects.size(); ++o)
    if (s.objects[o].kind == vocab().id("apple")) apples.push_back((int)o);
  REQUIRE(apples.size() >= 2);
  for (int r = 0; r < kNumReceptacles; ++r) {
    auto& c = s.receptacles[r].contents;
    c.erase(std::remove_if(c.begin(), c.end(),
                           [&](int o) {
                             return std::find(apples.begin(), apples.end(),
                                              o) != apples.end();
                           }),
            c.end());
  }
  s.receptacles[box].contents.push_back(apples[0]);
  CHECK_FALSE(goal_satisfied(s, t));  // 1 of 2
  s.receptacles[box].contents.push_back(apples[1]);
  CHECK(goal_satisfied(s, t));  // 2 of 2

  TaskInstance ct = pick_place_task("apple", "box1");
  ct.task_kind = TaskKind::CleanPlace;
  CHECK_FALSE(goal_satisfied(s, ct));
  s.objects[apples[0]].st.clean = true;
  CHECK(goal_satisfied(s, ct));
}

TEST_CASE("subtask completion predicates") {
  TaskInstance t = pick_place_task("apple", "box1");
  auto [ep, obs0] = reset(t, 7);
  ep = walk_to_goal_object(ep, vocab().id("apple"));

  CHECK(subtask_completed(ep.state, make_locate(vocab().id("apple"))));
  CHECK_FALSE(subtask_completed(ep.state, make_heat(vocab().id("apple"))));
  CHECK_FALSE(subtask_completed(
      ep.state, make_place(vocab().id("apple"), vocab().id("box1"))));

  TokenId held = ep.state.objects[ep.state.holding].token;
  CHECK_FALSE(
      subtask_completed(ep.state, make_locate_except(vocab().id("apple"), held)));

  auto res = step(ep, make_action(Verb::Goto, vocab().id("box1")));
  res = step(res.next, make_action(Verb::Open, vocab().id("box1")));
  res = step(res.next, make_action(Verb::Put, held, vocab().id("box1")));
  CHECK(subtask_completed(res.next.state,
                          make_place(vocab().id("apple"), vocab().id("box1"))));
}

TEST_CASE("replay determinism over random action sequences") {
  TaskInstance t = pick_place_task("egg", "drawer1");
  auto run = [&](std::uint64_t seed) {
    auto [ep, obs] = reset(t, 42);
    TokenSeq stream = obs.tokens;
    std::mt19937_64 rng(seed);
    std::vector<double> rewards;
    while (!ep.finished) {
      Verb verb = static_cast<Verb>(rng() % 10);
      TokenId a1 = receptacle_token(rng() % kNumReceptacles);
      if (verb == Verb::Take || verb == Verb::Put || verb == Verb::Clean ||
          verb == Verb::Heat || verb == Verb::Cool || verb == Verb::Examine) {
        const auto& objs = ep.state.objects;
        a1 = objs[rng() % objs.size()].token;
      }
      TokenId a2 = receptacle_token(rng() % kNumReceptacles);
      auto res = step(ep, make_action(verb, a1, a2));
      stream.insert(stream.end(), res.obs.tokens.begin(), res.obs.tokens.end());
      rewards.push_back(res.reward);
      check_state_invariants(res.next.state);
      ep = res.next;
    }
    double total = 0;
    for (double r : rewards) total += r;
    CHECK((total == 0.0 || total == 1.0));
    return stream;
  };
  for (std::uint64_t s : {1, 2, 3}) CHECK(run(s) == run(s));
}

TEST_CASE("closed receptacles never leak contents") {
  TaskInstance t = pick_place_task("apple", "box1");
  auto [ep, obs0] = reset(t, 9);

  // find a closed receptacle with contents
  int target = -1;
  for (int r : search_order())
    if (house()[r].openable && !ep.state.receptacles[r].contents.empty())
      target = r;
  REQUIRE(target >= 0);

  auto res = step(ep, make_action(Verb::Goto, receptacle_token(target)));
  for (int o : ep.state.receptacles[target].contents) {
    TokenId inst = ep.state.objects[o].token;
    CHECK(std::find(res.obs.tokens.begin(), res.obs.tokens.end(), inst) ==
          res.obs.tokens.end());
  }
  // rendering the same receptacle after opening reveals the difference
  auto opened = step(res.next, make_action(Verb::Open, receptacle_token(target)));
  CHECK(opened.obs.tokens != res.obs.tokens);
  for (int o : opened.next.state.receptacles[target].contents) {
    TokenId inst = opened.next.state.objects[o].token;
    CHECK(std::find(opened.obs.tokens.begin(), opened.obs.tokens.end(), inst) !=
          opened.obs.tokens.end());
  }
}

TEST_CASE("observation length bound holds on generated worlds") {
  WorldGenConfig cfg = default_world_config();
  for (int i = 0; i < 40; ++i) {
    TaskInstance t = make_task(cfg, i % 2 ? Split::Seen : Split::Unseen, i);
    auto [ep, obs] = reset(t, task_seed(5, t.split, i));
    CHECK(obs.tokens.size() <= kObsMax);  // enforced again inside render
  }
}

TEST_CASE("task pools split cleanly") {
  WorldGenConfig cfg = default_world_config();
  auto seen = task_pool(cfg, Split::Seen);
  auto unseen = task_pool(cfg, Split::Unseen);
  CHECK(!seen.empty());
  CHECK(!unseen.empty());
  auto key = [](const TaskInstance& t) {
    return std::tuple(t.task_kind, t.goal.object_kind,
                      t.goal.target_receptacle);
  };
  for (const auto& a : seen)
    for (const auto& b : unseen) CHECK(key(a) != key(b));
}

TEST_CASE("action grammar round trip") {
  auto a = make_action(Verb::Put, vocab().id("apple1"), vocab().id("box1"));
  auto parsed = parse_action(a.tokens);
  REQUIRE(parsed.has_value());
  CHECK(parsed->verb == Verb::Put);
  CHECK(parsed->arg1 == a.arg1);
  CHECK(parsed->arg2 == a.arg2);

  CHECK_FALSE(parse_action(vocab().tokenize("take box1")).has_value());
  CHECK_FALSE(parse_action(vocab().tokenize("apple1")).has_value());
  CHECK_FALSE(parse_action({}).has_value());
}
