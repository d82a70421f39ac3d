#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "stepworld/progress.hpp"
#include "stepworld/world.hpp"

using namespace stepworld;

namespace {

Observation obs_from(const std::string& text) {
  Observation o;
  o.tokens = vocab().tokenize(text);
  return o;
}

LocalProgress random_progress(std::mt19937_64& rng) {
  const Vocab& v = vocab();
  auto any_inst = [&] {
    TokenId kind = v.object_kind_token(rng() % kNumObjectKinds);
    return v.instance_token(kind, 1 + rng() % kMaxInstancesPerKind);
  };
  auto any_recep = [&] { return receptacle_token(rng() % kNumReceptacles); };
  auto any_room = [&] { return v.room_token(rng() % kNumRooms); };

  LocalProgress p;
  switch (rng() % 10) {
    case 0: return p;  // empty
    case 1:
      p.sentence = SentenceKind::LocOngoing;
      p.slot_a = v.object_kind_token(rng() % kNumObjectKinds);
      p.doors_opened = rng() % 2;
      p.locate = true;
      break;
    case 2:
      p.sentence = SentenceKind::LocFound;
      p.slot_a = any_inst();
      p.slot_b = any_recep();
      p.locate = true;
      break;
    case 3:
      p.sentence = SentenceKind::LocTaken;
      p.slot_a = any_inst();
      p.locate = true;
      break;
    case 4:
      p.sentence = SentenceKind::Went;
      p.slot_a = rng() % 2 ? any_recep() : any_room();
      break;
    case 5:
      p.sentence = SentenceKind::Placed;
      p.slot_a = any_inst();
      p.slot_b = any_recep();
      break;
    case 6:
      p.sentence = rng() % 2 ? SentenceKind::Heated : SentenceKind::Cleaned;
      p.slot_a = any_inst();
      break;
    case 7:
      p.sentence = SentenceKind::Examined;
      p.slot_a = any_inst();
      break;
    case 8:
      p.sentence = SentenceKind::Opened;
      p.slot_a = any_recep();
      break;
    case 9: {
      p.sentence = SentenceKind::NavOngoing;
      p.slot_a = any_room();
      int n = rng() % 4;
      for (int i = 0; i < n; ++i) {
        TokenId r = any_room();
        if (p.route.empty() || p.route.back() != r) p.route.push_back(r);
      }
      break;
    }
  }
  if (p.locate) {
    int n = rng() % 6;
    std::vector<int> order(search_order());
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < n; ++i) p.checked.push_back(receptacle_token(order[i]));
  }
  return p;
}

}  // namespace

TEST_CASE("init progress renders to nothing") {
  LocalProgress p = init_progress();
  CHECK(render(p).empty());
  CHECK(p.checked.empty());
  CHECK(render(p).size() == 0);
}

TEST_CASE("locate updates retain previous locations") {
  Subtask g = make_locate(vocab().id("apple"));
  LocalProgress prev;
  prev.locate = true;
  prev.sentence = SentenceKind::LocOngoing;
  prev.slot_a = vocab().id("apple");
  prev.checked = {vocab().id("cabinet1")};

  Action a = make_action(Verb::Open, vocab().id("drawer1"));
  auto p = oracle_update(g, a, obs_from("you open drawer1 . drawer1 : egg1 ."),
                         prev);
  CHECK(p.checked ==
        std::vector<TokenId>{vocab().id("cabinet1"), vocab().id("drawer1")});
  CHECK(p.sentence == SentenceKind::LocOngoing);
  CHECK(p.doors_opened);
}

TEST_CASE("finding the target ends the search") {
  Subtask g = make_locate(vocab().id("apple"));
  LocalProgress prev;
  prev.locate = true;
  prev.sentence = SentenceKind::LocOngoing;
  prev.slot_a = vocab().id("apple");
  prev.checked = {vocab().id("cabinet1")};

  Action a = make_action(Verb::Take, vocab().id("apple1"));
  auto p = oracle_update(g, a, obs_from("you take apple1 . you hold apple1 ."),
                         prev);
  CHECK(p.sentence == SentenceKind::LocTaken);
  CHECK(p.slot_a == vocab().id("apple1"));
  CHECK(p.checked == prev.checked);

  // after the found event, further updates leave checked untouched
  Action b = make_action(Verb::Open, vocab().id("drawer1"));
  auto q = oracle_update(g, b, obs_from("you open drawer1 . drawer1 is empty ."),
                         p);
  CHECK(q.checked == p.checked);
  CHECK(q.sentence == SentenceKind::LocTaken);
}

TEST_CASE("the except rule skips the excluded instance") {
  Subtask g = make_locate_except(vocab().id("apple"), vocab().id("apple1"));
  LocalProgress prev;
  prev.locate = true;

  Action a = make_action(Verb::Goto, vocab().id("box1"));
  auto p = oracle_update(g, a, obs_from("you arrive at box1 . box1 : apple1 ."),
                         prev);
  // only the excluded instance is there: confirmed absent, keep searching
  CHECK(p.sentence == SentenceKind::LocOngoing);
  CHECK(p.checked == std::vector<TokenId>{vocab().id("box1")});

  auto q = oracle_update(
      g, a, obs_from("you arrive at shelf1 . shelf1 : apple2 ."), p);
  CHECK(q.sentence == SentenceKind::LocFound);
  CHECK(q.slot_a == vocab().id("apple2"));
}

TEST_CASE("non-locate summaries carry no checked set") {
  Subtask g = make_heat(vocab().id("apple"));
  Action a = make_action(Verb::Heat, vocab().id("apple1"));
  auto p = oracle_update(g, a, obs_from("you heat apple1 . you hold apple1 ."),
                         init_progress());
  CHECK(p.sentence == SentenceKind::Heated);
  CHECK(p.checked.empty());
  CHECK_FALSE(p.locate);

  TokenSeq r = render(p);
  CHECK(std::find(r.begin(), r.end(), vocab().sep()) == r.end());
  CHECK(std::find(r.begin(), r.end(), vocab().id("found")) == r.end());
}

TEST_CASE("navigate maintains the visited-room route") {
  Subtask g = make_navigate(vocab().id("bedroom"));
  Action a = make_action(Verb::Goto, vocab().id("livingroom"));
  auto p = oracle_update(
      g, a, obs_from("you go to livingroom . you see shelf1 box1 ."),
      init_progress());
  CHECK(p.route == std::vector<TokenId>{vocab().id("livingroom")});

  Action b = make_action(Verb::Goto, vocab().id("drawer1"));
  auto q = oracle_update(
      g, b, obs_from("you arrive at drawer1 . drawer1 is closed ."), p);
  CHECK(q.route == std::vector<TokenId>{vocab().id("livingroom"),
                                        vocab().id("bedroom")});
  auto r = render(q);
  auto parsed = parse_progress(r);
  REQUIRE(parsed.has_value());
  CHECK(*parsed == q);
}

TEST_CASE("malformed inputs raise RuleViolation") {
  Subtask g = make_locate(vocab().id("apple"));
  LocalProgress bad;
  bad.locate = true;
  bad.checked = {vocab().id("cabinet1"), vocab().id("cabinet1")};
  Action a = make_action(Verb::Wait);
  CHECK_THROWS_AS(oracle_update(g, a, obs_from("you wait ."), bad),
                  RuleViolation);
  LocalProgress bad2;
  bad2.checked = {vocab().id("apple1")};
  CHECK_THROWS_AS(oracle_update(g, a, obs_from("you wait ."), bad2),
                  RuleViolation);
}

TEST_CASE("render format places checked tokens after the separator") {
  LocalProgress p;
  p.locate = true;
  p.sentence = SentenceKind::LocOngoing;
  p.slot_a = vocab().id("apple");
  p.checked = {vocab().id("cabinet1"), vocab().id("drawer1"),
               vocab().id("shelf1")};
  TokenSeq t = render(p);
  auto sep = std::find(t.begin(), t.end(), vocab().sep());
  REQUIRE(sep != t.end());
  CHECK(std::distance(sep + 1, t.end()) == 3);
  for (auto it = sep + 1; it != t.end(); ++it)
    CHECK(vocab().is_receptacle(*it));
}

TEST_CASE("render stays within the budget for the worst case") {
  LocalProgress p;
  p.locate = true;
  p.sentence = SentenceKind::LocOngoing;
  p.slot_a = vocab().id("newspaper");
  p.doors_opened = true;
  for (int r : search_order()) p.checked.push_back(receptacle_token(r));
  CHECK(render(p).size() <= kLpMax);
}

TEST_CASE("parse: empty, round trip and garbage") {
  auto p = parse_progress({});
  REQUIRE(p.has_value());
  CHECK(*p == init_progress());

  CHECK_FALSE(parse_progress(vocab().tokenize("apple box1 <sep>")).has_value());
  CHECK_FALSE(parse_progress(vocab().tokenize("went went went")).has_value());
  CHECK_FALSE(parse_progress(vocab().tokenize("took box1")).has_value());
  // locate sentence must carry the separator
  CHECK_FALSE(
      parse_progress(vocab().tokenize("found and picked up apple1")).has_value());

  std::mt19937_64 rng(123);
  for (int i = 0; i < 1000; ++i) {
    LocalProgress p0 = random_progress(rng);
    TokenSeq t = render(p0);
    auto q = parse_progress(t);
    REQUIRE(q.has_value());
    CHECK(*q == p0);
    CHECK(render(*q) == t);  // render . parse . render is idempotent
  }
}

TEST_CASE("episode summary drops oldest sentences under the budget") {
  EpisodeSummary s = init_episode_summary();
  Subtask g = make_heat(vocab().id("apple"));
  for (int i = 0; i < 30; ++i) {
    Action a = make_action(Verb::Heat, vocab().id("apple1"));
    s = summary_update(g, a, obs_from("you heat apple1 . you hold apple1 ."), s,
                       /*phase_end=*/true);
  }
  TokenSeq t = render_summary(s);
  CHECK(t.size() <= kLpMax);
  auto parsed = parse_summary(t);
  REQUIRE(parsed.has_value());
  CHECK(render_summary(*parsed) == t);
}

TEST_CASE("episode summary round trips with an active locate phase") {
  EpisodeSummary s = init_episode_summary();
  Subtask heat = make_heat(vocab().id("apple"));
  s = summary_update(heat, make_action(Verb::Heat, vocab().id("apple1")),
                     obs_from("you heat apple1 . you hold apple1 ."), s, true);
  Subtask loc = make_locate(vocab().id("mug"));
  s = summary_update(loc, make_action(Verb::Open, vocab().id("cabinet1")),
                     obs_from("you open cabinet1 . cabinet1 : egg1 ."), s,
                     false);
  TokenSeq t = render_summary(s);
  auto parsed = parse_summary(t);
  REQUIRE(parsed.has_value());
  CHECK(*parsed == s);
}
