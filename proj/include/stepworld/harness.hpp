#pragma once

#include <functional>
#include <memory>

#include "stepworld/datasets.hpp"

namespace stepworld {

// Decision interface over the three heads. The latent episode is passed so
// scripted agents can report ground-truth termination; learned agents only
// read the token arguments.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual TokenSeq propose_subtask(const TaskInstance& task,
                                   const std::vector<TokenSeq>& completed,
                                   const TokenSeq& final_progress,
                                   const Observation& obs,
                                   std::mt19937_64& rng) = 0;
  // Returns the low-head utterance: action tokens, optionally followed by a
  // termination flag token.
  virtual TokenSeq act(const TokenSeq& subtask,
                       const std::optional<Subtask>& parsed,
                       const TokenSeq& progress, const Observation& obs,
                       const Episode& ep, std::mt19937_64& rng) = 0;
  virtual TokenSeq update_progress(const TokenSeq& subtask,
                                   const std::optional<Subtask>& parsed,
                                   const TokenSeq& prev_action,
                                   const Observation& obs,
                                   const TokenSeq& prev_progress,
                                   std::mt19937_64& rng) = 0;
};

enum class SummarizerKind { Oracle, Learned };

struct RolloutOptions {
  Mode mode = Mode::Full;
  SummarizerKind summarizer = SummarizerKind::Oracle;
  int subtask_cap = 15;
  std::uint64_t seed = 0;
};

// The hierarchical loop: the high head proposes a subtask, the low head acts
// on (subtask, progress, observation) until its flag fires or the cap hits,
// the progress summary is updated after every step, and the final progress
// plus the next observation feed the next high call.
AnnotatedEpisode rollout(Agent& agent, const TaskInstance& task,
                         std::uint64_t env_seed, const RolloutOptions& opts);

// Learned policy driving all heads; the oracle summarizer can replace the
// progress head.
class PolicyAgent : public Agent {
 public:
  PolicyAgent(const PolicyBundle& bundle, Mode mode, double temp_high,
              double temp_low, double temp_progress);
  TokenSeq propose_subtask(const TaskInstance&, const std::vector<TokenSeq>&,
                           const TokenSeq&, const Observation&,
                           std::mt19937_64&) override;
  TokenSeq act(const TokenSeq&, const std::optional<Subtask>&, const TokenSeq&,
               const Observation&, const Episode&, std::mt19937_64&) override;
  TokenSeq update_progress(const TokenSeq&, const std::optional<Subtask>&,
                           const TokenSeq&, const Observation&, const TokenSeq&,
                           std::mt19937_64&) override;

 private:
  const PolicyBundle& bundle_;
  Mode mode_;
  double temp_high_, temp_low_, temp_progress_;
};

// Scripted planner agent; emits ground-truth termination flags.
class ExpertAgent : public Agent {
 public:
  TokenSeq propose_subtask(const TaskInstance&, const std::vector<TokenSeq>&,
                           const TokenSeq&, const Observation&,
                           std::mt19937_64&) override;
  TokenSeq act(const TokenSeq&, const std::optional<Subtask>&, const TokenSeq&,
               const Observation&, const Episode&, std::mt19937_64&) override;
  TokenSeq update_progress(const TokenSeq&, const std::optional<Subtask>&,
                           const TokenSeq&, const Observation&, const TokenSeq&,
                           std::mt19937_64&) override;
};

// --- evaluation ----------------------------------------------------------------

struct FamilyStats {
  TaskKind kind = TaskKind::PickPlace;
  int n = 0;
  int successes = 0;
  double steps_success_sum = 0;
  double steps_all_sum = 0;

  double success_rate() const { return n ? 100.0 * successes / n : 0.0; }
  double avg_steps_success() const {
    return successes ? steps_success_sum / successes : 0.0;
  }
  double avg_steps_all() const { return n ? steps_all_sum / n : 0.0; }
};

struct EvalSummary {
  std::vector<FamilyStats> per_family;  // ordered by TaskKind
  FamilyStats total;
  std::vector<AnnotatedEpisode> episodes;  // rollout records, task order
};

struct EvalOptions {
  int n_tasks = 200;
  std::uint64_t seed = 0;
  Mode mode = Mode::Full;
  SummarizerKind summarizer = SummarizerKind::Learned;
  int subtask_cap = 15;
  bool parallel = true;
  bool keep_episodes = false;
};

EvalSummary evaluate(const PolicyBundle& policy, const WorldGenConfig& world,
                     Split split, const EvalOptions& opts);
EvalSummary evaluate_expert(const WorldGenConfig& world, Split split,
                            int n_tasks, std::uint64_t seed,
                            bool keep_episodes = false);
std::string format_eval_table(const EvalSummary& s);

// --- per-step token accounting ----------------------------------------------------

// Input token counts for the same observation/action sequence under the
// three conditioning paradigms. High-level calls add their context at the
// step where they happen.
struct ParadigmTrace {
  std::vector<long> standard_rl;
  std::vector<long> hrl;
  std::vector<long> step_hrl;
  std::vector<int> step_low_len;  // low-head input length per step
};

ParadigmTrace token_trace(const AnnotatedEpisode& ep);
std::string format_token_trace(const ParadigmTrace& t);  // TSV, one row per step

}  // namespace stepworld
