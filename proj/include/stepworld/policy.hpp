#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stepworld/vocab.hpp"

namespace stepworld {

struct ContextOverflow : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- tensors -----------------------------------------------------------------

struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c) {}
  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }

  bool operator==(const Mat&) const = default;
};

// Ordered collection of named matrices. Gradient buffers share the layout of
// the parameters they correspond to.
struct Tensors {
  std::vector<std::pair<std::string, Mat>> items;

  Mat& add(const std::string& name, int rows, int cols);
  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool has(const std::string& name) const;

  void zero();
  void axpy(double alpha, const Tensors& other);        // this += alpha*other
  void lerp(const Tensors& online, double rate);        // this = (1-r)this + r*online
  Tensors zeros_like() const;
  std::size_t num_params() const;

  bool operator==(const Tensors&) const = default;
};

// --- policy inputs -----------------------------------------------------------

enum class Head { High = 0, Low = 1, Progress = 2 };
inline constexpr int kNumHeads = 3;
const char* head_name(Head h);

enum class SegTag {
  Instruction = 0,
  Completed = 1,
  Progress = 2,
  Observation = 3,
  Subtask = 4,
  PrevAction = 5,
  Output = 6
};
inline constexpr int kNumSegTags = 7;

struct Segment {
  SegTag tag;
  TokenSeq tokens;
  bool operator==(const Segment&) const = default;
};

struct PolicyInput {
  Head head = Head::Low;
  std::vector<Segment> segments;

  int total_len() const;
  bool operator==(const PolicyInput&) const = default;
};

// Fixed segment orders, one per conditioning mode.
PolicyInput build_high_input(const TokenSeq& instruction,
                             const TokenSeq& completed,
                             const TokenSeq& final_progress,
                             const TokenSeq& obs);
PolicyInput build_low_input(const TokenSeq& subtask, const TokenSeq& progress,
                            const TokenSeq& obs);
PolicyInput build_progress_input(const TokenSeq& subtask,
                                 const TokenSeq& prev_action,
                                 const TokenSeq& obs,
                                 const TokenSeq& prev_progress);
// Ablation variants: no progress conditioning.
PolicyInput build_high_input_nolp(const TokenSeq& instruction,
                                  const TokenSeq& completed,
                                  const TokenSeq& obs);
PolicyInput build_low_input_nolp(const TokenSeq& subtask, const TokenSeq& obs);
// Flat variants: instruction replaces the subtask.
PolicyInput build_flat_low_input(const TokenSeq& instruction,
                                 const TokenSeq& progress, const TokenSeq& obs);
PolicyInput build_flat_progress_input(const TokenSeq& instruction,
                                      const TokenSeq& prev_action,
                                      const TokenSeq& obs,
                                      const TokenSeq& prev_progress);

struct PolicyOutput {
  TokenSeq tokens;
  std::vector<double> per_token_logprob;
  bool done_flag = false;
  bool has_done_flag = false;
};

// Generation budgets per head.
int head_budget(Head h);

// --- the bundle --------------------------------------------------------------

struct PolicyConfig {
  int dim = 64;
  int critic_width = 64;  // 0 selects linear value heads
  std::uint64_t seed = 0;
};

struct CriticNetworks {
  Tensors q, v, q_target, v_target;
};

// Shared-backbone sequence policy: one set of encoder/decoder parameters
// serving the three conditioning modes, plus per-head critic heads.
struct PolicyBundle {
  PolicyConfig config;
  std::uint64_t vocab_hash = 0;
  std::uint64_t train_step = 0;
  Tensors theta;
  std::array<CriticNetworks, kNumHeads> critics;

  static PolicyBundle init(const PolicyConfig& cfg);
};

struct ValueEstimate {
  double q = 0.0;
  double v = 0.0;
  double v_target = 0.0;
  double q_target = 0.0;
};

std::vector<double> encode(const PolicyBundle& b, const PolicyInput& input);
double logprob(const PolicyBundle& b, const PolicyInput& input,
               const TokenSeq& target);
// Teacher-forced per-token log probabilities (sums to logprob()).
std::vector<double> logprob_per_token(const PolicyBundle& b,
                                      const PolicyInput& input,
                                      const TokenSeq& target);
PolicyOutput sample(const PolicyBundle& b, const PolicyInput& input,
                    double temperature, std::mt19937_64& rng);
ValueEstimate critic_eval(const PolicyBundle& b, Head head,
                          const PolicyInput& input,
                          const TokenSeq* action_tokens = nullptr);
void soft_update(PolicyBundle& b, double rate);

// --- batch kernels -----------------------------------------------------------
//
// The batch loops are the hot path. Per-sample work is distributed over
// fixed-size blocks; block partials are reduced in block order, so results
// are bitwise identical for any thread count, including the serial reference
// (parallel = false).

inline constexpr int kGradBlock = 16;

struct NllItem {
  PolicyInput input;
  TokenSeq target;  // <end> is appended internally
  double weight = 1.0;
};

// loss = sum_i w_i * NLL(target_i | input_i); gradient accumulated into
// theta_grad (layout of theta).
double weighted_nll_gradient(const PolicyBundle& b,
                             std::span<const NllItem> items, bool parallel,
                             Tensors* theta_grad);

struct CriticItem {
  PolicyInput state;
  TokenSeq action;
  double reward = 0.0;
  PolicyInput next_state;
  bool terminal = false;
};

struct CriticBatchResult {
  double loss_q = 0.0;
  double loss_v = 0.0;
  Tensors grad_q;      // per-head online Q parameters
  Tensors grad_v;      // per-head online V parameters
  Tensors grad_theta;  // backbone contribution (reported, not applied)
};

// TD loss on Q bootstrapped from the target V; expectile loss on V regressed
// toward the target Q. Gamma and tau are the discount and expectile.
CriticBatchResult critic_losses(const PolicyBundle& b, Head head,
                                std::span<const CriticItem> items, double gamma,
                                double tau, bool parallel);

double expectile_loss(double d, double tau);

// Advantage per item: Q_phi(s,u) - V_psi(s), batched.
std::vector<double> batch_advantages(const PolicyBundle& b, Head head,
                                     std::span<const CriticItem> items,
                                     bool parallel);

}  // namespace stepworld
