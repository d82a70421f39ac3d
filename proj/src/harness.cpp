#include "stepworld/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <memory>
#include <sstream>

namespace stepworld {

namespace {

// Splits a low-head utterance into action tokens and the optional flag.
std::pair<TokenSeq, std::optional<bool>> strip_flag(const TokenSeq& out) {
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

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t v[2] = {a, b};
  return fnv1a64(v, sizeof(v));
}

TokenSeq join_completed(const std::vector<TokenSeq>& completed) {
  TokenSeq out;
  for (std::size_t i = 0; i < completed.size(); ++i) {
    if (i) out.push_back(vocab().semicolon());
    out.insert(out.end(), completed[i].begin(), completed[i].end());
  }
  return out;
}

AnnotatedEpisode rollout_flat(Agent& agent, const TaskInstance& task,
                              std::uint64_t env_seed,
                              const RolloutOptions& opts) {
  AnnotatedEpisode rec;
  rec.task = task;
  rec.env_seed = env_seed;
  rec.mode = Mode::NoHier;
  std::mt19937_64 rng(mix_seed(opts.seed, env_seed));

  auto [ep, obs] = reset(task, env_seed);
  EpisodeSummary summary;
  TokenSeq cur_tokens;

  bool done = false;
  while (!done && static_cast<int>(rec.steps.size()) < kStepLimit) {
    EpisodeStep st;
    st.obs = obs;
    TokenSeq low_out =
        agent.act(task.instruction, std::nullopt, cur_tokens, obs, ep, rng);
    st.low_output = low_out;
    auto [act_toks, flag] = strip_flag(low_out);
    st.done_flag = flag.value_or(false);
    st.action = parse_action(act_toks);

    int ctx = static_cast<int>(task.instruction.size() + cur_tokens.size() +
                               obs.tokens.size());
    rec.context_low_max = std::max(rec.context_low_max, ctx);

    StepResult res = step(ep, st.action);
    st.extrinsic = res.reward;
    st.intrinsic = res.reward;  // no subtask structure in flat mode
    ep = res.next;
    rec.total_reward += res.reward;
    done = res.done;

    TokenSeq em = agent.update_progress(task.instruction, std::nullopt,
                                        act_toks, res.obs, cur_tokens, rng);
    st.progress_emitted = em;
    auto parsed = parse_summary(em);
    if (parsed) summary = *parsed;
    cur_tokens = render_summary(summary);
    st.progress_effective = cur_tokens;

    rec.steps.push_back(std::move(st));
    obs = res.obs;
  }
  rec.final_obs = obs;
  rec.success = goal_satisfied(ep.state, task);
  return rec;
}

}  // namespace

TokenSeq progress_before(const AnnotatedEpisode& ep, int t) {
  if (ep.mode == Mode::NoHier)
    return t == 0 ? TokenSeq{} : ep.steps[t - 1].progress_effective;
  int k = span_of_step(ep, t);
  if (k < 0 || t == ep.spans[k].start) return {};
  return ep.steps[t - 1].progress_effective;
}

const Observation& obs_after(const AnnotatedEpisode& ep, int t) {
  if (t + 1 < static_cast<int>(ep.steps.size())) return ep.steps[t + 1].obs;
  return ep.final_obs;
}

int span_of_step(const AnnotatedEpisode& ep, int t) {
  for (std::size_t k = 0; k < ep.spans.size(); ++k)
    if (t >= ep.spans[k].start && t < ep.spans[k].end)
      return static_cast<int>(k);
  return -1;
}

AnnotatedEpisode rollout(Agent& agent, const TaskInstance& task,
                         std::uint64_t env_seed, const RolloutOptions& opts) {
  if (opts.mode == Mode::NoHier)
    return rollout_flat(agent, task, env_seed, opts);

  AnnotatedEpisode rec;
  rec.task = task;
  rec.env_seed = env_seed;
  rec.mode = opts.mode;
  std::mt19937_64 rng(mix_seed(opts.seed, env_seed));

  auto [ep, obs] = reset(task, env_seed);
  std::vector<TokenSeq> completed;
  TokenSeq last_final_progress;
  bool episode_done = false;

  while (!episode_done && static_cast<int>(rec.steps.size()) < kStepLimit) {
    SubtaskSpan span;
    span.start = static_cast<int>(rec.steps.size());
    span.prev_final_progress = last_final_progress;
    span.tokens =
        agent.propose_subtask(task, completed, last_final_progress, obs, rng);
    span.parsed = parse_subtask(span.tokens);

    LocalProgress cur;
    TokenSeq cur_tokens;
    int sub_steps = 0;
    bool span_done = false;

    while (!span_done) {
      EpisodeStep st;
      st.obs = obs;
      TokenSeq low_out =
          agent.act(span.tokens, span.parsed, cur_tokens, obs, ep, rng);
      st.low_output = low_out;
      auto [act_toks, flag] = strip_flag(low_out);
      st.done_flag = flag.value_or(false);
      st.action = parse_action(act_toks);

      int ctx = static_cast<int>(span.tokens.size() + obs.tokens.size()) +
                (opts.mode == Mode::Full ? static_cast<int>(cur_tokens.size())
                                         : 0);
      rec.context_low_max = std::max(rec.context_low_max, ctx);

      bool before = span.parsed && subtask_completed(ep.state, *span.parsed);
      StepResult res = step(ep, st.action);
      bool after =
          span.parsed && subtask_completed(res.next.state, *span.parsed);
      st.extrinsic = res.reward;
      st.intrinsic = (after && !before) ? 1.0 : 0.0;
      ep = res.next;
      rec.total_reward += res.reward;
      episode_done = res.done;

      if (opts.mode == Mode::Full) {
        if (opts.summarizer == SummarizerKind::Oracle) {
          if (span.parsed) {
            Action upd = st.action ? *st.action : make_action(Verb::Wait);
            cur = oracle_update(*span.parsed, upd, res.obs, cur);
          }
          cur_tokens = render(cur);
          st.progress_emitted = cur_tokens;
          st.progress_effective = cur_tokens;
        } else {
          TokenSeq em = agent.update_progress(span.tokens, span.parsed,
                                              act_toks, res.obs, cur_tokens,
                                              rng);
          st.progress_emitted = em;
          auto parsed = parse_progress(em);
          if (parsed) cur = *parsed;  // malformed emissions keep the previous
          cur_tokens = render(cur);
          st.progress_effective = cur_tokens;
        }
      }

      bool flag_fired = st.done_flag;
      rec.steps.push_back(std::move(st));
      obs = res.obs;
      ++sub_steps;

      if (episode_done || flag_fired) {
        span_done = true;
      } else if (sub_steps >= opts.subtask_cap) {
        span_done = true;
        span.timeout_forced = true;
      }
    }
    span.end = static_cast<int>(rec.steps.size());
    completed.push_back(span.tokens);
    last_final_progress = opts.mode == Mode::Full
                              ? rec.steps.back().progress_effective
                              : TokenSeq{};
    rec.spans.push_back(std::move(span));
  }
  rec.final_obs = obs;
  rec.success = goal_satisfied(ep.state, task);
  return rec;
}

// --- agents --------------------------------------------------------------------

PolicyAgent::PolicyAgent(const PolicyBundle& bundle, Mode mode,
                         double temp_high, double temp_low,
                         double temp_progress)
    : bundle_(bundle),
      mode_(mode),
      temp_high_(temp_high),
      temp_low_(temp_low),
      temp_progress_(temp_progress) {}

TokenSeq PolicyAgent::propose_subtask(const TaskInstance& task,
                                      const std::vector<TokenSeq>& completed,
                                      const TokenSeq& final_progress,
                                      const Observation& obs,
                                      std::mt19937_64& rng) {
  TokenSeq g = join_completed(completed);
  PolicyInput in =
      mode_ == Mode::NoLP
          ? build_high_input_nolp(task.instruction, g, obs.tokens)
          : build_high_input(task.instruction, g, final_progress, obs.tokens);
  return sample(bundle_, in, temp_high_, rng).tokens;
}

TokenSeq PolicyAgent::act(const TokenSeq& subtask,
                          const std::optional<Subtask>&,
                          const TokenSeq& progress, const Observation& obs,
                          const Episode&, std::mt19937_64& rng) {
  PolicyInput in;
  switch (mode_) {
    case Mode::Full:
      in = build_low_input(subtask, progress, obs.tokens);
      break;
    case Mode::NoLP:
      in = build_low_input_nolp(subtask, obs.tokens);
      break;
    case Mode::NoHier:
      in = build_flat_low_input(subtask, progress, obs.tokens);
      break;
  }
  return sample(bundle_, in, temp_low_, rng).tokens;
}

TokenSeq PolicyAgent::update_progress(const TokenSeq& subtask,
                                      const std::optional<Subtask>&,
                                      const TokenSeq& prev_action,
                                      const Observation& obs,
                                      const TokenSeq& prev_progress,
                                      std::mt19937_64& rng) {
  PolicyInput in = mode_ == Mode::NoHier
                       ? build_flat_progress_input(subtask, prev_action,
                                                   obs.tokens, prev_progress)
                       : build_progress_input(subtask, prev_action, obs.tokens,
                                              prev_progress);
  return sample(bundle_, in, temp_progress_, rng).tokens;
}

TokenSeq ExpertAgent::propose_subtask(const TaskInstance& task,
                                      const std::vector<TokenSeq>& completed,
                                      const TokenSeq& final_progress,
                                      const Observation&, std::mt19937_64&) {
  auto g = expert_next_subtask(task, static_cast<int>(completed.size()),
                               final_progress);
  if (!g) return make_locate(task.goal.object_kind).tokens;
  return g->tokens;
}

TokenSeq ExpertAgent::act(const TokenSeq&, const std::optional<Subtask>& parsed,
                          const TokenSeq& progress, const Observation& obs,
                          const Episode& ep, std::mt19937_64&) {
  if (!parsed) return {vocab().id("wait"), vocab().flag_false()};
  auto p = parse_progress(progress);
  Action a = expert_action(*parsed, p ? *p : init_progress(), obs);

  // ground-truth termination flag
  StepResult probe = step(ep, a);
  bool completes = subtask_completed(probe.next.state, *parsed) &&
                   !subtask_completed(ep.state, *parsed);
  TokenSeq out = a.tokens;
  out.push_back(completes ? vocab().flag_true() : vocab().flag_false());
  return out;
}

TokenSeq ExpertAgent::update_progress(const TokenSeq&,
                                      const std::optional<Subtask>&,
                                      const TokenSeq&, const Observation&,
                                      const TokenSeq& prev, std::mt19937_64&) {
  return prev;  // expert rollouts run under the oracle summarizer
}

// --- evaluation ----------------------------------------------------------------

namespace {

EvalSummary summarize(std::vector<AnnotatedEpisode>&& episodes,
                      bool keep_episodes) {
  EvalSummary s;
  s.per_family.resize(kNumTaskKinds);
  for (int f = 0; f < kNumTaskKinds; ++f)
    s.per_family[f].kind = static_cast<TaskKind>(f);
  for (const auto& ep : episodes) {
    FamilyStats& fs = s.per_family[static_cast<int>(ep.task.task_kind)];
    int steps = static_cast<int>(ep.steps.size());
    fs.n++;
    fs.steps_all_sum += steps;
    s.total.n++;
    s.total.steps_all_sum += steps;
    if (ep.success) {
      fs.successes++;
      fs.steps_success_sum += steps;
      s.total.successes++;
      s.total.steps_success_sum += steps;
    }
  }
  if (keep_episodes) s.episodes = std::move(episodes);
  return s;
}

template <typename MakeAgent>
EvalSummary run_sweep(const WorldGenConfig& world, Split split, int n_tasks,
                      std::uint64_t seed, const RolloutOptions& base,
                      bool parallel, bool keep_episodes, MakeAgent&& make) {
  auto pool = task_pool(world, split);
  std::vector<AnnotatedEpisode> episodes(n_tasks);
#pragma omp parallel for schedule(dynamic, 1) if (parallel)
  for (int i = 0; i < n_tasks; ++i) {
    auto agent = make();
    TaskInstance task = pool[i % pool.size()];
    RolloutOptions opts = base;
    opts.seed = mix_seed(seed, 0x51u + i);
    episodes[i] = rollout(*agent, task, task_seed(seed, split, i), opts);
  }
  return summarize(std::move(episodes), keep_episodes);
}

}  // namespace

EvalSummary evaluate(const PolicyBundle& policy, const WorldGenConfig& world,
                     Split split, const EvalOptions& opts) {
  RolloutOptions ro;
  ro.mode = opts.mode;
  ro.summarizer = opts.summarizer;
  ro.subtask_cap = opts.subtask_cap;
  // deterministic evaluation: every head decodes greedily
  return run_sweep(world, split, opts.n_tasks, opts.seed, ro, opts.parallel,
                   opts.keep_episodes, [&] {
                     return std::make_unique<PolicyAgent>(policy, opts.mode,
                                                          0.0, 0.0, 0.0);
                   });
}

EvalSummary evaluate_expert(const WorldGenConfig& world, Split split,
                            int n_tasks, std::uint64_t seed,
                            bool keep_episodes) {
  RolloutOptions ro;
  ro.summarizer = SummarizerKind::Oracle;
  return run_sweep(world, split, n_tasks, seed, ro, true, keep_episodes,
                   [] { return std::make_unique<ExpertAgent>(); });
}

std::string format_eval_table(const EvalSummary& s) {
  std::ostringstream out;
  out << "family\tn\tsuccess_rate\tavg_steps_success\tavg_steps_all\n";
  char buf[160];
  for (const auto& fs : s.per_family) {
    if (fs.n == 0) continue;
    std::snprintf(buf, sizeof(buf), "%s\t%d\t%.1f\t%.1f\t%.1f\n",
                  task_kind_name(fs.kind), fs.n, fs.success_rate(),
                  fs.avg_steps_success(), fs.avg_steps_all());
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "total\t%d\t%.1f\t%.1f\t%.1f\n", s.total.n,
                s.total.success_rate(), s.total.avg_steps_success(),
                s.total.avg_steps_all());
  out << buf;
  return out.str();
}

// --- token accounting ------------------------------------------------------------

ParadigmTrace token_trace(const AnnotatedEpisode& ep) {
  ParadigmTrace tr;
  int T = static_cast<int>(ep.steps.size());
  long c = static_cast<long>(ep.task.instruction.size());

  std::vector<long> olen(T), alen(T);
  for (int t = 0; t < T; ++t) {
    olen[t] = static_cast<long>(ep.steps[t].obs.tokens.size());
    auto [act, flag] = strip_flag(ep.steps[t].low_output);
    alen[t] = static_cast<long>(act.size());
  }

  long hist = 0;  // sum of |o_i| + |a_i| over i < t
  for (int t = 0; t < T; ++t) {
    long standard = c + hist + olen[t];
    tr.standard_rl.push_back(standard);

    int k = span_of_step(ep, t);
    long g_len = k >= 0 ? static_cast<long>(ep.spans[k].tokens.size()) : c;
    long p_len = static_cast<long>(progress_before(ep, t).size());
    bool high_step = k >= 0 && t == ep.spans[k].start;

    // hierarchical but history-conditioned: subtask-local history, plus the
    // full-history high-level call at subtask-generation steps
    long local = 0;
    if (k >= 0)
      for (int i = ep.spans[k].start; i < t; ++i) local += olen[i] + alen[i];
    else
      local = hist;
    long hrl = g_len + local + olen[t];
    if (high_step) hrl += c + hist + olen[t];
    tr.hrl.push_back(hrl);

    long low = g_len + p_len + olen[t];
    tr.step_low_len.push_back(static_cast<int>(low));
    long step_hrl = low;
    if (high_step) {
      long g_tokens = 0;
      for (int j = 0; j < k; ++j)
        g_tokens += static_cast<long>(ep.spans[j].tokens.size()) + (j ? 1 : 0);
      step_hrl += c + g_tokens +
                  static_cast<long>(ep.spans[k].prev_final_progress.size()) +
                  olen[t];
    }
    tr.step_hrl.push_back(step_hrl);

    hist += olen[t] + alen[t];
  }
  return tr;
}

std::string format_token_trace(const ParadigmTrace& t) {
  std::ostringstream out;
  out << "t\tstandard\thrl\tstephrl\n";
  for (std::size_t i = 0; i < t.standard_rl.size(); ++i)
    out << i << '\t' << t.standard_rl[i] << '\t' << t.hrl[i] << '\t'
        << t.step_hrl[i] << '\n';
  return out.str();
}

}  // namespace stepworld
