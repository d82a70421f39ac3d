#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <omp.h>

#include <random>

#include "doctest.h"
#include "stepworld/policy.hpp"

using namespace stepworld;

// The OpenMP kernels must be bitwise identical to the serial reference: the
// block-sum reduction fixes the floating point evaluation order regardless
// of thread count.

namespace {

TokenSeq random_tokens(std::mt19937_64& rng, int len) {
  TokenSeq t;
  for (int i = 0; i < len; ++i)
    t.push_back(static_cast<TokenId>(rng() % vocab().size()));
  return t;
}

std::vector<NllItem> random_nll_batch(std::mt19937_64& rng, int n) {
  std::vector<NllItem> items;
  for (int i = 0; i < n; ++i) {
    Head head = static_cast<Head>(rng() % kNumHeads);
    PolicyInput in;
    if (head == Head::High)
      in = build_high_input(random_tokens(rng, 6), random_tokens(rng, 10),
                            random_tokens(rng, 8), random_tokens(rng, 12));
    else if (head == Head::Low)
      in = build_low_input(random_tokens(rng, 5), random_tokens(rng, 12),
                           random_tokens(rng, 14));
    else
      in = build_progress_input(random_tokens(rng, 5), random_tokens(rng, 3),
                                random_tokens(rng, 14), random_tokens(rng, 12));
    items.push_back({in, random_tokens(rng, 2 + rng() % 6), 1.0 / n});
  }
  return items;
}

std::vector<CriticItem> random_critic_batch(std::mt19937_64& rng, int n) {
  std::vector<CriticItem> items;
  for (int i = 0; i < n; ++i) {
    CriticItem it;
    it.state = build_low_input(random_tokens(rng, 5), random_tokens(rng, 10),
                               random_tokens(rng, 12));
    it.action = random_tokens(rng, 3);
    it.reward = (rng() % 2) ? 1.0 : 0.0;
    it.next_state = build_low_input(random_tokens(rng, 5),
                                    random_tokens(rng, 10),
                                    random_tokens(rng, 12));
    it.terminal = rng() % 4 == 0;
    items.push_back(it);
  }
  return items;
}

PolicyBundle trained_ish_bundle() {
  PolicyBundle b = PolicyBundle::init({.dim = 24, .critic_width = 12, .seed = 3});
  std::mt19937_64 rng(5);
  // move the zero-initialized blocks off zero so gradients are dense
  for (const char* n : {"outW_high", "outW_low", "outW_prog"})
    for (auto& x : b.theta.at(n).a)
      x = ((rng() >> 11) * (1.0 / 9007199254740992.0) - 0.5) * 0.2;
  for (auto& cn : b.critics) {
    for (auto& x : cn.q.at("w2").a)
      x = ((rng() >> 11) * (1.0 / 9007199254740992.0) - 0.5) * 0.2;
    for (auto& x : cn.v.at("w2").a)
      x = ((rng() >> 11) * (1.0 / 9007199254740992.0) - 0.5) * 0.2;
    cn.q_target = cn.q;
    cn.v_target = cn.v;
  }
  return b;
}

}  // namespace

TEST_CASE("nll gradients: parallel kernel equals serial reference bitwise") {
  PolicyBundle b = trained_ish_bundle();
  std::mt19937_64 rng(17);
  auto items = random_nll_batch(rng, 70);  // not a multiple of the block size

  Tensors g_serial = b.theta.zeros_like();
  double loss_serial = weighted_nll_gradient(b, items, false, &g_serial);

  for (int threads : {1, 2, 4}) {
    omp_set_num_threads(threads);
    Tensors g_par = b.theta.zeros_like();
    double loss_par = weighted_nll_gradient(b, items, true, &g_par);
    CHECK(loss_par == loss_serial);
    CHECK(g_par == g_serial);
  }
}

TEST_CASE("critic losses: parallel kernel equals serial reference bitwise") {
  PolicyBundle b = trained_ish_bundle();
  std::mt19937_64 rng(23);
  auto items = random_critic_batch(rng, 53);

  auto serial = critic_losses(b, Head::Low, items, 0.99, 0.95, false);
  for (int threads : {2, 4}) {
    omp_set_num_threads(threads);
    auto par = critic_losses(b, Head::Low, items, 0.99, 0.95, true);
    CHECK(par.loss_q == serial.loss_q);
    CHECK(par.loss_v == serial.loss_v);
    CHECK(par.grad_q == serial.grad_q);
    CHECK(par.grad_v == serial.grad_v);
    CHECK(par.grad_theta == serial.grad_theta);
  }
}

TEST_CASE("advantages: parallel equals serial") {
  PolicyBundle b = trained_ish_bundle();
  std::mt19937_64 rng(29);
  auto items = random_critic_batch(rng, 40);

  auto serial = batch_advantages(b, Head::Low, items, false);
  omp_set_num_threads(2);
  auto par = batch_advantages(b, Head::Low, items, true);
  CHECK(par == serial);
}
