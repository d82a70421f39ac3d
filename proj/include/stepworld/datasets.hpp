#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "stepworld/policy.hpp"
#include "stepworld/progress.hpp"
#include "stepworld/subtask.hpp"
#include "stepworld/world.hpp"

namespace stepworld {

struct PlanFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AnnotationGap : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptySource : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Conditioning variants: Full is the hierarchical loop with local progress,
// NoLP strips the progress conditioning, NoHier is a flat agent with a
// whole-episode summary.
enum class Mode { Full, NoLP, NoHier };
const char* mode_name(Mode m);

// One environment step as recorded during a rollout. `low_output` is the
// acting head's utterance (action tokens plus the termination flag token);
// `progress_emitted` is the summarizer's utterance for the update after this
// step and `progress_effective` is what downstream inputs actually used
// (malformed emissions fall back to the previous progress).
struct EpisodeStep {
  Observation obs;
  TokenSeq low_output;
  std::optional<Action> action;
  double extrinsic = 0.0;
  double intrinsic = 0.0;
  bool done_flag = false;
  TokenSeq progress_emitted;
  TokenSeq progress_effective;
};

struct SubtaskSpan {
  TokenSeq tokens;
  std::optional<Subtask> parsed;
  int start = 0, end = 0;  // [start, end) step indices
  bool timeout_forced = false;
  TokenSeq prev_final_progress;  // p̂ of the preceding subtask, as conditioned on
};

struct AnnotatedEpisode {
  TaskInstance task;
  std::uint64_t env_seed = 0;
  Mode mode = Mode::Full;
  std::vector<EpisodeStep> steps;
  Observation final_obs;
  std::vector<SubtaskSpan> spans;
  bool success = false;
  double total_reward = 0.0;
  int context_low_max = 0;
};

// Effective progress tokens at decision time of step t.
TokenSeq progress_before(const AnnotatedEpisode& ep, int t);
// Observation following step t (the next step's obs, or the final one).
const Observation& obs_after(const AnnotatedEpisode& ep, int t);
// Index of the span containing step t; -1 if none.
int span_of_step(const AnnotatedEpisode& ep, int t);

// --- scripted expert -----------------------------------------------------------

// Observation-driven search protocol: act on (subtask, progress, observation)
// only, so behavior cloning can reproduce it. Throws PlanFailure when the
// episode does not succeed within the step limit.
AnnotatedEpisode scripted_expert(const TaskInstance& task, std::uint64_t seed);

// The expert's action rule, exposed for harness replays and tests.
Action expert_action(const Subtask& g, const LocalProgress& p,
                     const Observation& obs);
// Phase decomposition for a task family; the except-instance for the second
// locate of PickTwoPlace is read from the final progress of the place phase.
std::optional<Subtask> expert_next_subtask(const TaskInstance& task,
                                           int completed,
                                           const TokenSeq& final_progress);

// --- behavior-cloning datasets ---------------------------------------------------

struct BcSample {
  PolicyInput input;
  TokenSeq target;
};

struct BcDatasets {
  std::vector<BcSample> progress, low, high;
};

// Organizes expert trajectories into the three input-target datasets. The
// per-subtask counts follow the step-level rule: one low sample per step,
// one progress sample per step after the first, one high sample per subtask.
BcDatasets build_bc_datasets(const std::vector<AnnotatedEpisode>& trajs,
                             Mode mode = Mode::Full);

// --- offline RL transitions ------------------------------------------------------

enum class Source { Expert, Collected };

struct RlTransition {
  Head head = Head::Low;
  PolicyInput state;
  TokenSeq action;
  double reward = 0.0;
  PolicyInput next_state;
  bool terminal = false;
  Source source = Source::Expert;
  bool success = false;
};

struct OfflineDataset {
  std::array<std::vector<RlTransition>, kNumHeads> by_head;

  std::vector<RlTransition>& head(Head h) {
    return by_head[static_cast<int>(h)];
  }
  const std::vector<RlTransition>& head(Head h) const {
    return by_head[static_cast<int>(h)];
  }
  std::size_t total() const {
    return by_head[0].size() + by_head[1].size() + by_head[2].size();
  }
};

std::vector<RlTransition> build_transitions(const AnnotatedEpisode& ep,
                                            Source source);

// Keeps every expert transition and per head retains ratio_collected
// collected transitions per expert one (subsampled deterministically when
// more are available). Throws EmptySource when a required side is empty.
OfflineDataset mix(const std::vector<RlTransition>& expert,
                   const std::vector<RlTransition>& collected,
                   int ratio_collected, std::uint64_t seed);

// --- policy-driven collection ----------------------------------------------------

struct CollectOptions {
  int episodes = 200;
  double temp_high = 1.0;
  double temp_low = 0.0;
  double temp_progress = 1.0;
  double failure_target = 0.25;  // unsuccessful-episode share to retain
  int subtask_cap = 15;
  Mode mode = Mode::Full;
  std::uint64_t seed = 0;
  bool parallel = true;
};

struct CollectResult {
  std::vector<AnnotatedEpisode> episodes;
  std::vector<RlTransition> transitions;
  int attempted = 0;
  int failures_kept = 0;
};

// Rolls out the BC policy on training tasks and records step-level
// transitions for all three heads; failed episodes are retained by design.
CollectResult collect(const PolicyBundle& policy, const WorldGenConfig& world,
                      const CollectOptions& opts);

}  // namespace stepworld
