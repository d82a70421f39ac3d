#include "stepworld/datasets.hpp"

#include <algorithm>

#include "stepworld/harness.hpp"

namespace stepworld {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Full: return "full";
    case Mode::NoLP: return "nolp";
    case Mode::NoHier: return "nohier";
  }
  return "?";
}

// --- scripted expert -----------------------------------------------------------

std::optional<Subtask> expert_next_subtask(const TaskInstance& task,
                                           int completed,
                                           const TokenSeq& final_progress) {
  TokenId kind = task.goal.object_kind;
  TokenId recep = receptacle_token(task.goal.target_receptacle);
  switch (task.task_kind) {
    case TaskKind::PickPlace:
      if (completed == 0) return make_locate(kind);
      if (completed == 1) return make_place(kind, recep);
      return std::nullopt;
    case TaskKind::ExamineInLight:
      if (completed == 0) return make_locate(kind);
      if (completed == 1) return make_examine(kind);
      return std::nullopt;
    case TaskKind::CleanPlace:
    case TaskKind::HeatPlace:
    case TaskKind::CoolPlace: {
      if (completed == 0) return make_locate(kind);
      if (completed == 1) {
        if (task.task_kind == TaskKind::CleanPlace) return make_clean(kind);
        if (task.task_kind == TaskKind::HeatPlace) return make_heat(kind);
        return make_cool(kind);
      }
      if (completed == 2) return make_place(kind, recep);
      return std::nullopt;
    }
    case TaskKind::PickTwoPlace: {
      if (completed == 0) return make_locate(kind);
      if (completed == 1) return make_place(kind, recep);
      if (completed == 2) {
        // the placed instance is read off the place phase's final progress
        auto p = parse_progress(final_progress);
        TokenId placed = p && p->sentence == SentenceKind::Placed
                             ? p->slot_a
                             : vocab().instance_token(kind, 1);
        return make_locate_except(kind, placed);
      }
      if (completed == 3) return make_place(kind, recep);
      return std::nullopt;
    }
  }
  return std::nullopt;
}

namespace {

TokenId appliance_token(SubtaskKind k) {
  Capability cap = k == SubtaskKind::Clean  ? Capability::Clean
                   : k == SubtaskKind::Heat ? Capability::Heat
                   : k == SubtaskKind::Cool ? Capability::Cool
                                            : Capability::Lamp;
  return receptacle_token(appliance_for(cap));
}

// First receptacle in the sweep order not yet confirmed absent.
TokenId next_unchecked(const LocalProgress& p) {
  for (int r : search_order()) {
    TokenId t = receptacle_token(r);
    if (std::find(p.checked.begin(), p.checked.end(), t) == p.checked.end())
      return t;
  }
  return -1;
}

Action locate_action(const Subtask& g, const LocalProgress& p,
                     const ObsView& view) {
  // a visible matching instance is taken immediately
  if (view.contents_known) {
    for (TokenId inst : view.contents)
      if (vocab().instance_kind(inst) == g.target_kind &&
          inst != g.except_inst)
        return make_action(Verb::Take, inst);
  }
  if (view.kind == ObsView::Arrive && view.closed)
    return make_action(Verb::Open, receptacle_token(view.receptacle));
  TokenId next = next_unchecked(p);
  if (next >= 0) return make_action(Verb::Goto, next);
  return make_action(Verb::Wait);
}

Action place_action(const Subtask& g, const ObsView& view) {
  TokenId target = g.target_recep;
  int target_idx = receptacle_by_token(target);
  bool at_target = (view.kind == ObsView::Arrive ||
                    view.kind == ObsView::OpenResult) &&
                   view.receptacle == target_idx;
  if (at_target) {
    if (view.closed) return make_action(Verb::Open, target);
    if (view.holding >= 0)
      return make_action(Verb::Put, view.holding, target);
    return make_action(Verb::Wait);
  }
  return make_action(Verb::Goto, target);
}

Action op_action(const Subtask& g, const ObsView& view) {
  TokenId app = appliance_token(g.kind);
  bool at_app = view.kind == ObsView::Arrive &&
                view.receptacle == receptacle_by_token(app);
  if (at_app && view.holding >= 0) {
    Verb verb = g.kind == SubtaskKind::Clean  ? Verb::Clean
                : g.kind == SubtaskKind::Heat ? Verb::Heat
                : g.kind == SubtaskKind::Cool ? Verb::Cool
                                              : Verb::Examine;
    return make_action(verb, view.holding);
  }
  return make_action(Verb::Goto, app);
}

}  // namespace

Action expert_action(const Subtask& g, const LocalProgress& p,
                     const Observation& obs) {
  ObsView view = parse_obs(obs.tokens);
  switch (g.kind) {
    case SubtaskKind::Locate:
      if (g.use_form) {
        if (g.target_recep < 0) return make_action(Verb::Wait);
        return make_action(Verb::Goto, g.target_recep);
      }
      return locate_action(g, p, view);
    case SubtaskKind::Place:
      return place_action(g, view);
    case SubtaskKind::Clean:
    case SubtaskKind::Heat:
    case SubtaskKind::Cool:
    case SubtaskKind::Examine:
      return op_action(g, view);
    case SubtaskKind::Navigate:
      if (g.target_room < 0) return make_action(Verb::Wait);
      return make_action(Verb::Goto, g.target_room);
  }
  return make_action(Verb::Wait);
}

AnnotatedEpisode scripted_expert(const TaskInstance& task,
                                 std::uint64_t seed) {
  ExpertAgent agent;
  RolloutOptions opts;
  opts.mode = Mode::Full;
  opts.summarizer = SummarizerKind::Oracle;
  opts.subtask_cap = 30;
  opts.seed = seed;
  AnnotatedEpisode ep = rollout(agent, task, seed, opts);
  if (!ep.success)
    throw PlanFailure("expert failed on " +
                      std::string(task_kind_name(task.task_kind)) +
                      " seed " + std::to_string(seed));
  return ep;
}

// --- behavior cloning datasets ----------------------------------------------------

namespace {

std::pair<TokenSeq, std::optional<bool>> split_low_output(const TokenSeq& out) {
  TokenSeq toks = out;
  std::optional<bool> flag;
  if (!toks.empty()) {
    if (toks.back() == vocab().flag_true()) {
      flag = true;
      toks.pop_back();
    } else if (toks.back() == vocab().flag_false()) {
      flag = false;
      toks.pop_back();
    }
  }
  return {toks, flag};
}

TokenSeq completed_tokens(const AnnotatedEpisode& ep, int upto_span) {
  TokenSeq out;
  for (int j = 0; j < upto_span; ++j) {
    if (j) out.push_back(vocab().semicolon());
    out.insert(out.end(), ep.spans[j].tokens.begin(), ep.spans[j].tokens.end());
  }
  return out;
}

PolicyInput low_input_for(const AnnotatedEpisode& ep, Mode mode, int t) {
  const auto& st = ep.steps[t];
  if (mode == Mode::NoHier)
    return build_flat_low_input(ep.task.instruction, progress_before(ep, t),
                                st.obs.tokens);
  int k = span_of_step(ep, t);
  const TokenSeq& g = ep.spans[k].tokens;
  if (mode == Mode::NoLP) return build_low_input_nolp(g, st.obs.tokens);
  return build_low_input(g, progress_before(ep, t), st.obs.tokens);
}

PolicyInput high_input_for(const AnnotatedEpisode& ep, Mode mode, int k) {
  const TokenSeq& obs = ep.steps[ep.spans[k].start].obs.tokens;
  TokenSeq g = completed_tokens(ep, k);
  if (mode == Mode::NoLP)
    return build_high_input_nolp(ep.task.instruction, g, obs);
  return build_high_input(ep.task.instruction, g,
                          ep.spans[k].prev_final_progress, obs);
}

// High input for the call after the last recorded subtask (next-state of the
// final high transition).
PolicyInput high_input_terminal(const AnnotatedEpisode& ep, Mode mode) {
  TokenSeq g = completed_tokens(ep, static_cast<int>(ep.spans.size()));
  const TokenSeq& obs = ep.final_obs.tokens;
  if (mode == Mode::NoLP)
    return build_high_input_nolp(ep.task.instruction, g, obs);
  TokenSeq p_hat = ep.steps.empty() ? TokenSeq{}
                                    : ep.steps.back().progress_effective;
  return build_high_input(ep.task.instruction, g, p_hat, obs);
}

PolicyInput progress_input_for(const AnnotatedEpisode& ep, Mode mode, int t) {
  // the update performed after step t: inputs (g, a_t, o_{t+1}, p_t)
  auto [act, flag] = split_low_output(ep.steps[t].low_output);
  const TokenSeq& next_obs = obs_after(ep, t).tokens;
  TokenSeq prev = t == 0 ? TokenSeq{} : progress_before(ep, t);
  // progress before the update equals progress_before of step t within the
  // subtask, i.e. the effective progress after step t-1
  int k = span_of_step(ep, t);
  TokenSeq p_prev =
      (ep.mode == Mode::NoHier)
          ? (t == 0 ? TokenSeq{} : ep.steps[t - 1].progress_effective)
          : ((k >= 0 && t == ep.spans[k].start)
                 ? TokenSeq{}
                 : ep.steps[t - 1].progress_effective);
  if (mode == Mode::NoHier)
    return build_flat_progress_input(ep.task.instruction, act, next_obs,
                                     p_prev);
  return build_progress_input(ep.spans[k].tokens, act, next_obs, p_prev);
}

// Recomputes whole-episode summaries for the flat variant from a full
// trajectory's phase structure.
std::vector<TokenSeq> flat_progress_labels(const AnnotatedEpisode& ep) {
  std::vector<TokenSeq> labels(ep.steps.size());
  EpisodeSummary summary;
  for (std::size_t t = 0; t < ep.steps.size(); ++t) {
    int k = span_of_step(ep, static_cast<int>(t));
    const auto& span = ep.spans[k];
    auto [act, flag] = split_low_output(ep.steps[t].low_output);
    Action a = ep.steps[t].action ? *ep.steps[t].action
                                  : make_action(Verb::Wait);
    bool phase_end = static_cast<int>(t) == span.end - 1;
    summary = summary_update(span.parsed ? *span.parsed
                                         : make_locate(ep.task.goal.object_kind),
                             a, obs_after(ep, static_cast<int>(t)), summary,
                             phase_end);
    labels[t] = render_summary(summary);
  }
  return labels;
}

}  // namespace

BcDatasets build_bc_datasets(const std::vector<AnnotatedEpisode>& trajs,
                             Mode mode) {
  BcDatasets out;
  for (const auto& ep : trajs) {
    if (ep.steps.empty()) continue;

    if (mode == Mode::NoHier) {
      // flat relabeling of a hierarchical trajectory
      std::vector<TokenSeq> labels = flat_progress_labels(ep);
      double total = 0;
      for (std::size_t t = 0; t < ep.steps.size(); ++t) {
        TokenSeq prev = t == 0 ? TokenSeq{} : labels[t - 1];
        PolicyInput low_in = build_flat_low_input(ep.task.instruction, prev,
                                                  ep.steps[t].obs.tokens);
        auto [act, flag] = split_low_output(ep.steps[t].low_output);
        total += ep.steps[t].extrinsic;
        TokenSeq target = act;
        target.push_back(total > 0 ? vocab().flag_true()
                                   : vocab().flag_false());
        out.low.push_back({std::move(low_in), std::move(target)});
        if (t > 0) {
          auto [pact, pflag] = split_low_output(ep.steps[t - 1].low_output);
          out.progress.push_back(
              {build_flat_progress_input(ep.task.instruction, pact,
                                         ep.steps[t].obs.tokens,
                                         t >= 2 ? labels[t - 2] : TokenSeq{}),
               labels[t - 1]});
        }
      }
      continue;
    }

    for (std::size_t k = 0; k < ep.spans.size(); ++k) {
      const auto& span = ep.spans[k];
      if (span.end <= span.start)
        throw AnnotationGap("empty subtask span");

      out.high.push_back(
          {high_input_for(ep, mode, static_cast<int>(k)), span.tokens});

      for (int t = span.start; t < span.end; ++t) {
        const auto& st = ep.steps[t];
        auto [act, flag] = split_low_output(st.low_output);
        TokenSeq target = act;
        target.push_back(st.done_flag ? vocab().flag_true()
                                      : vocab().flag_false());
        out.low.push_back({low_input_for(ep, mode, t), std::move(target)});

        if (mode == Mode::Full && t > span.start) {
          if (ep.mode != Mode::Full)
            throw AnnotationGap("trajectory carries no progress labels");
          // the sample for p_t: inputs reference the update after step t-1
          out.progress.push_back({progress_input_for(ep, mode, t - 1),
                                  ep.steps[t - 1].progress_emitted});
        }
      }
    }
  }
  return out;
}

// --- RL transitions -----------------------------------------------------------

std::vector<RlTransition> build_transitions(const AnnotatedEpisode& ep,
                                            Source source) {
  std::vector<RlTransition> out;
  Mode mode = ep.mode;

  if (mode == Mode::NoHier) {
    int T = static_cast<int>(ep.steps.size());
    for (int t = 0; t < T; ++t) {
      RlTransition tr;
      tr.head = Head::Low;
      tr.state = low_input_for(ep, mode, t);
      tr.action = ep.steps[t].low_output;
      tr.reward = ep.steps[t].extrinsic;
      tr.terminal = t == T - 1;
      tr.next_state =
          tr.terminal
              ? build_flat_low_input(ep.task.instruction,
                                     ep.steps[t].progress_effective,
                                     ep.final_obs.tokens)
              : low_input_for(ep, mode, t + 1);
      tr.source = source;
      tr.success = ep.success;
      out.push_back(std::move(tr));

      if (t > 0) {
        RlTransition pr;
        pr.head = Head::Progress;
        pr.state = progress_input_for(ep, mode, t - 1);
        pr.action = ep.steps[t - 1].progress_emitted;
        pr.reward = ep.steps[t - 1].extrinsic;
        pr.terminal = false;
        pr.next_state = progress_input_for(ep, mode, t);
        pr.source = source;
        pr.success = ep.success;
        out.push_back(std::move(pr));
      }
    }
    return out;
  }

  int K = static_cast<int>(ep.spans.size());
  for (int k = 0; k < K; ++k) {
    const auto& span = ep.spans[k];

    // high-level transition for subtask k
    {
      RlTransition tr;
      tr.head = Head::High;
      tr.state = high_input_for(ep, mode, k);
      tr.action = span.tokens;
      double rk = 0;
      for (int t = span.start; t < span.end; ++t) rk += ep.steps[t].extrinsic;
      tr.reward = rk;
      tr.terminal = k == K - 1;
      tr.next_state = tr.terminal ? high_input_terminal(ep, mode)
                                  : high_input_for(ep, mode, k + 1);
      tr.source = source;
      tr.success = ep.success;
      out.push_back(std::move(tr));
    }

    for (int t = span.start; t < span.end; ++t) {
      RlTransition tr;
      tr.head = Head::Low;
      tr.state = low_input_for(ep, mode, t);
      tr.action = ep.steps[t].low_output;
      tr.reward = ep.steps[t].intrinsic;
      tr.terminal = t == span.end - 1;
      if (!tr.terminal) {
        tr.next_state = low_input_for(ep, mode, t + 1);
      } else {
        const TokenSeq& next_obs = obs_after(ep, t).tokens;
        tr.next_state =
            mode == Mode::NoLP
                ? build_low_input_nolp(span.tokens, next_obs)
                : build_low_input(span.tokens,
                                  ep.steps[t].progress_effective, next_obs);
      }
      tr.source = source;
      tr.success = ep.success;
      out.push_back(std::move(tr));
    }

    if (mode == Mode::Full) {
      // progress transitions cover every update in the span, including the
      // one after the completing step; each is credited with the intrinsic
      // reward of the step it summarizes
      for (int t = span.start; t < span.end; ++t) {
        RlTransition tr;
        tr.head = Head::Progress;
        tr.state = progress_input_for(ep, mode, t);
        tr.action = ep.steps[t].progress_emitted;
        tr.reward = ep.steps[t].intrinsic;
        tr.terminal = t == span.end - 1;
        tr.next_state = tr.terminal ? tr.state : progress_input_for(ep, mode, t + 1);
        tr.source = source;
        tr.success = ep.success;
        out.push_back(std::move(tr));
      }
    }
  }
  return out;
}

OfflineDataset mix(const std::vector<RlTransition>& expert,
                   const std::vector<RlTransition>& collected,
                   int ratio_collected, std::uint64_t seed) {
  if (expert.empty()) throw EmptySource("expert transitions are empty");
  if (ratio_collected > 0 && collected.empty())
    throw EmptySource("collected transitions are empty");

  OfflineDataset out;
  for (const auto& tr : expert)
    out.by_head[static_cast<int>(tr.head)].push_back(tr);

  std::array<std::vector<RlTransition>, kNumHeads> coll;
  for (const auto& tr : collected)
    coll[static_cast<int>(tr.head)].push_back(tr);

  std::mt19937_64 rng(seed ^ 0xabcdef12345ull);
  for (int h = 0; h < kNumHeads; ++h) {
    std::size_t want = out.by_head[h].size() *
                       static_cast<std::size_t>(std::max(0, ratio_collected));
    auto& pool = coll[h];
    if (pool.size() > want) {
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(want);
    }
    out.by_head[h].insert(out.by_head[h].end(), pool.begin(), pool.end());
    std::shuffle(out.by_head[h].begin(), out.by_head[h].end(), rng);
  }
  return out;
}

CollectResult collect(const PolicyBundle& policy, const WorldGenConfig& world,
                      const CollectOptions& opts) {
  auto pool = task_pool(world, Split::Seen);
  CollectResult res;
  res.attempted = opts.episodes;

  std::vector<AnnotatedEpisode> episodes(opts.episodes);
#pragma omp parallel for schedule(dynamic, 1) if (opts.parallel)
  for (int i = 0; i < opts.episodes; ++i) {
    PolicyAgent agent(policy, opts.mode, opts.temp_high, opts.temp_low,
                      opts.temp_progress);
    TaskInstance task = pool[i % pool.size()];
    RolloutOptions ro;
    ro.mode = opts.mode;
    ro.summarizer = SummarizerKind::Learned;
    ro.subtask_cap = opts.subtask_cap;
    std::uint64_t v[2] = {opts.seed, static_cast<std::uint64_t>(i) + 7777};
    ro.seed = fnv1a64(v, sizeof(v));
    episodes[i] = rollout(agent, task, task_seed(opts.seed + 13, Split::Seen, i),
                          ro);
  }

  // retain roughly the requested share of unsuccessful episodes
  std::vector<AnnotatedEpisode> succ, fail;
  for (auto& ep : episodes)
    (ep.success ? succ : fail).push_back(std::move(ep));

  double ft = std::clamp(opts.failure_target, 0.0, 1.0);
  std::size_t keep_succ = succ.size();
  if (!fail.empty() && ft > 0.0 && ft < 1.0) {
    std::size_t cap = static_cast<std::size_t>(
        fail.size() * (1.0 - ft) / ft + 0.5);
    keep_succ = std::min(keep_succ, std::max<std::size_t>(cap, 1));
  }
  std::mt19937_64 rng(opts.seed ^ 0x5151u);
  std::shuffle(succ.begin(), succ.end(), rng);
  succ.resize(keep_succ);

  res.failures_kept = static_cast<int>(fail.size());
  for (auto& ep : fail) res.episodes.push_back(std::move(ep));
  for (auto& ep : succ) res.episodes.push_back(std::move(ep));
  std::shuffle(res.episodes.begin(), res.episodes.end(), rng);

  for (const auto& ep : res.episodes) {
    auto trs = build_transitions(ep, Source::Collected);
    res.transitions.insert(res.transitions.end(),
                           std::make_move_iterator(trs.begin()),
                           std::make_move_iterator(trs.end()));
  }
  return res;
}

}  // namespace stepworld
