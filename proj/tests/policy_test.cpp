#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "stepworld/policy.hpp"

using namespace stepworld;

namespace {

TokenSeq random_tokens(std::mt19937_64& rng, int len) {
  TokenSeq t;
  for (int i = 0; i < len; ++i)
    t.push_back(static_cast<TokenId>(rng() % vocab().size()));
  return t;
}

PolicyInput random_input(std::mt19937_64& rng, Head head) {
  switch (head) {
    case Head::High:
      return build_high_input(random_tokens(rng, 5), random_tokens(rng, 8),
                              random_tokens(rng, 6), random_tokens(rng, 10));
    case Head::Low:
      return build_low_input(random_tokens(rng, 4), random_tokens(rng, 6),
                             random_tokens(rng, 9));
    case Head::Progress:
      return build_progress_input(random_tokens(rng, 4), random_tokens(rng, 2),
                                  random_tokens(rng, 8),
                                  random_tokens(rng, 6));
  }
  return {};
}

// Central finite differences over every element of every tensor.
void fd_check(Tensors& params, const Tensors& analytic,
              const std::function<double()>& loss_fn, double tol,
              double eps = 1e-5) {
  int checked = 0, failed = 0;
  for (std::size_t b = 0; b < params.items.size(); ++b) {
    auto& m = params.items[b].second.a;
    const auto& g = analytic.items[b].second.a;
    for (std::size_t i = 0; i < m.size(); ++i) {
      double save = m[i];
      m[i] = save + eps;
      double lp = loss_fn();
      m[i] = save - eps;
      double lm = loss_fn();
      m[i] = save;
      double fd = (lp - lm) / (2 * eps);
      double rel = std::abs(fd - g[i]) /
                   std::max({1e-6, std::abs(fd), std::abs(g[i])});
      ++checked;
      if (rel > tol) {
        ++failed;
        if (failed < 5)
          MESSAGE("block " << params.items[b].first << "[" << i << "]: fd="
                           << fd << " analytic=" << g[i] << " rel=" << rel);
      }
    }
  }
  CHECK(failed == 0);
  CHECK(checked > 0);
}

}  // namespace

TEST_CASE("encode is deterministic and sensitive to segment order") {
  PolicyBundle b = PolicyBundle::init({.dim = 16, .critic_width = 8, .seed = 1});
  std::mt19937_64 rng(7);
  PolicyInput in = random_input(rng, Head::Low);

  auto h1 = encode(b, in);
  auto h2 = encode(b, in);
  CHECK(h1 == h2);

  PolicyInput permuted = in;
  std::swap(permuted.segments[0], permuted.segments[1]);
  CHECK(encode(b, permuted) != h1);
}

TEST_CASE("empty progress segment encodes without error") {
  PolicyBundle b = PolicyBundle::init({.dim = 16, .critic_width = 8, .seed = 1});
  PolicyInput in = build_low_input(vocab().tokenize("heat apple"), {},
                                   vocab().tokenize("you wait ."));
  CHECK(encode(b, in).size() == 16);
}

TEST_CASE("context overflow is an error, never silent truncation") {
  PolicyBundle b = PolicyBundle::init({.dim = 8, .critic_width = 4, .seed = 1});
  std::mt19937_64 rng(3);
  PolicyInput in =
      build_low_input(random_tokens(rng, kCtxMax), random_tokens(rng, 1), {});
  CHECK_THROWS_AS(encode(b, in), ContextOverflow);
}

TEST_CASE("uniform-initialized logprob of a single token is -ln|V|") {
  PolicyBundle b = PolicyBundle::init({.dim = 32, .critic_width = 8, .seed = 5});
  std::mt19937_64 rng(11);
  PolicyInput in = random_input(rng, Head::Low);
  double lp = logprob(b, in, {vocab().id("wait")});
  CHECK(lp == doctest::Approx(-std::log(vocab().size())).epsilon(1e-9));
}

TEST_CASE("logprob agrees with the batch loss code path") {
  PolicyBundle b = PolicyBundle::init({.dim = 16, .critic_width = 8, .seed = 2});
  // give the outputs some structure first
  b.theta.at("outb_low").a[vocab().id("wait")] = 0.7;
  b.theta.at("outb_low").a[vocab().end()] = 0.3;

  std::mt19937_64 rng(13);
  PolicyInput in = random_input(rng, Head::Low);
  TokenSeq target = vocab().tokenize("take apple1 <true>");

  TokenSeq with_end = target;
  with_end.push_back(vocab().end());
  double lp = logprob(b, in, with_end);
  auto per_tok = logprob_per_token(b, in, with_end);
  double sum = 0;
  for (double v : per_tok) sum += v;
  CHECK(lp == doctest::Approx(sum).epsilon(1e-12));

  NllItem item{in, target, 1.0};
  double nll = weighted_nll_gradient(b, std::span(&item, 1), false, nullptr);
  CHECK(nll == doctest::Approx(-lp).epsilon(1e-10));
}

TEST_CASE("raising target logits raises logprob") {
  PolicyBundle b = PolicyBundle::init({.dim = 16, .critic_width = 8, .seed = 3});
  std::mt19937_64 rng(17);
  PolicyInput in = random_input(rng, Head::High);
  TokenSeq target = vocab().tokenize("locate and pick up apple");

  double before = logprob(b, in, target);
  for (TokenId t : target) b.theta.at("outb_high").a[t] += 0.25;
  double after = logprob(b, in, target);
  CHECK(after > before);
}

TEST_CASE("greedy sampling is deterministic and self-consistent") {
  PolicyBundle b = PolicyBundle::init({.dim = 16, .critic_width = 8, .seed = 4});
  // bias toward a short action so generation terminates naturally
  b.theta.at("outb_low").a[vocab().id("wait")] = 1.0;
  b.theta.at("outb_low").a[vocab().end()] = 0.9;

  std::mt19937_64 rng1(1), rng2(2);
  std::mt19937_64 rngx(9);
  PolicyInput in = random_input(rngx, Head::Low);
  PolicyOutput o1 = sample(b, in, 0.0, rng1);
  PolicyOutput o2 = sample(b, in, 0.0, rng2);
  CHECK(o1.tokens == o2.tokens);
  CHECK(o1.tokens.size() <= static_cast<std::size_t>(head_budget(Head::Low)));

  // teacher-forcing its own output reproduces the recorded logprobs
  auto per_tok = logprob_per_token(b, in, o1.tokens);
  REQUIRE(per_tok.size() == o1.per_token_logprob.size());
  for (std::size_t i = 0; i < per_tok.size(); ++i)
    CHECK(per_tok[i] == doctest::Approx(o1.per_token_logprob[i]).epsilon(1e-12));
}

TEST_CASE("temperature sampling is reproducible from the seed") {
  PolicyBundle b = PolicyBundle::init({.dim = 16, .critic_width = 8, .seed = 6});
  std::mt19937_64 rngx(21);
  PolicyInput in = random_input(rngx, Head::Progress);
  std::mt19937_64 ra(77), rb(77), rc(78);
  PolicyOutput oa = sample(b, in, 1.0, ra);
  PolicyOutput ob = sample(b, in, 1.0, rb);
  CHECK(oa.tokens == ob.tokens);
  // a different seed is allowed to differ; the budget always binds
  PolicyOutput oc = sample(b, in, 1.0, rc);
  CHECK(oc.tokens.size() <= static_cast<std::size_t>(head_budget(Head::Progress)));
}

TEST_CASE("per-position token distribution sums to one") {
  PolicyBundle b = PolicyBundle::init({.dim = 16, .critic_width = 8, .seed = 8});
  std::mt19937_64 rng(31);
  b.theta.at("outb_low").a[5] = 2.0;  // break uniformity
  PolicyInput in = random_input(rng, Head::Low);
  double sum = 0;
  for (TokenId u = 0; u < vocab().size(); ++u)
    sum += std::exp(logprob(b, in, {u}));
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("zero-initialized critic heads evaluate to zero") {
  PolicyBundle b = PolicyBundle::init({.dim = 16, .critic_width = 8, .seed = 9});
  std::mt19937_64 rng(41);
  PolicyInput in = random_input(rng, Head::Low);
  TokenSeq act = vocab().tokenize("wait");
  ValueEstimate est = critic_eval(b, Head::Low, in, &act);
  CHECK(est.q == 0.0);
  CHECK(est.v == 0.0);
  CHECK(est.v_target == 0.0);
}

TEST_CASE("soft update: rate one copies, scalar probe interpolates exactly") {
  PolicyBundle b = PolicyBundle::init({.dim = 8, .critic_width = 0, .seed = 10});
  auto& cn = b.critics[static_cast<int>(Head::Low)];
  cn.v.at("b2").a[0] = 1.0;  // linear head producing 1.0 everywhere

  std::mt19937_64 rng(51);
  PolicyInput in = random_input(rng, Head::Low);
  CHECK(critic_eval(b, Head::Low, in).v_target == 0.0);

  soft_update(b, 0.2);
  CHECK(critic_eval(b, Head::Low, in).v_target == doctest::Approx(0.2));

  soft_update(b, 1.0);
  CHECK(cn.v_target == cn.v);
}

TEST_CASE("repeated soft updates contract geometrically") {
  PolicyBundle b = PolicyBundle::init({.dim = 8, .critic_width = 4, .seed = 11});
  auto& cn = b.critics[0];
  cn.v.at("w2").a[0] = 1.5;

  auto dist = [&] {
    double d = 0;
    for (std::size_t i = 0; i < cn.v.items.size(); ++i)
      for (std::size_t j = 0; j < cn.v.items[i].second.a.size(); ++j)
        d += std::pow(cn.v.items[i].second.a[j] -
                          cn.v_target.items[i].second.a[j],
                      2);
    return std::sqrt(d);
  };
  double d0 = dist();
  REQUIRE(d0 > 0);
  soft_update(b, 0.2);
  CHECK(dist() == doctest::Approx(0.8 * d0).epsilon(1e-12));
  soft_update(b, 0.2);
  CHECK(dist() == doctest::Approx(0.64 * d0).epsilon(1e-12));
}

TEST_CASE("heads share the backbone parameters") {
  PolicyBundle b = PolicyBundle::init({.dim = 16, .critic_width = 8, .seed = 12});
  std::mt19937_64 rng(61);
  PolicyInput low_in = random_input(rng, Head::Low);
  PolicyInput high_in = random_input(rng, Head::High);
  PolicyInput prog_in = random_input(rng, Head::Progress);

  auto h_high = encode(b, high_in);
  auto h_prog = encode(b, prog_in);

  // two gradient steps on a low-head sample (the first one only moves the
  // zero-initialized output projection; the second reaches the recurrence)
  NllItem item{low_in, vocab().tokenize("wait"), 1.0};
  for (int i = 0; i < 2; ++i) {
    Tensors grad = b.theta.zeros_like();
    weighted_nll_gradient(b, std::span(&item, 1), false, &grad);
    b.theta.axpy(-0.5, grad);
  }

  CHECK(encode(b, high_in) != h_high);
  CHECK(encode(b, prog_in) != h_prog);
}

TEST_CASE("analytic NLL gradient matches finite differences") {
  PolicyBundle b = PolicyBundle::init({.dim = 6, .critic_width = 4, .seed = 13});
  std::mt19937_64 rng(71);
  std::vector<NllItem> items;
  for (int i = 0; i < 3; ++i) {
    Head head = static_cast<Head>(i % kNumHeads);
    items.push_back(
        {random_input(rng, head), random_tokens(rng, 3), 1.0 / 3});
  }

  Tensors grad = b.theta.zeros_like();
  weighted_nll_gradient(b, items, false, &grad);
  fd_check(b.theta, grad,
           [&] { return weighted_nll_gradient(b, items, false, nullptr); },
           1e-4);
}

TEST_CASE("analytic critic gradients match finite differences") {
  PolicyBundle b = PolicyBundle::init({.dim = 6, .critic_width = 4, .seed = 14});
  // non-trivial online and target heads
  std::mt19937_64 rim(99);
  for (auto& cn : b.critics) {
    for (auto& [n, m] : cn.q.items)
      for (auto& x : m.a) x += 0.01 * static_cast<double>((rim() % 100)) / 100;
    for (auto& [n, m] : cn.v.items)
      for (auto& x : m.a) x += 0.01 * static_cast<double>((rim() % 100)) / 100;
    cn.q_target = cn.q;
    cn.v_target = cn.v;
    for (auto& [n, m] : cn.q_target.items)
      for (auto& x : m.a) x *= 0.9;
  }

  std::mt19937_64 rng(81);
  std::vector<CriticItem> items;
  for (int i = 0; i < 4; ++i) {
    CriticItem it;
    it.state = random_input(rng, Head::Low);
    it.action = random_tokens(rng, 2);
    it.reward = (i % 2) ? 1.0 : 0.0;
    it.next_state = random_input(rng, Head::Low);
    it.terminal = i == 3;
    items.push_back(it);
  }

  auto res = critic_losses(b, Head::Low, items, 0.99, 0.95, false);
  auto& cn = b.critics[static_cast<int>(Head::Low)];

  fd_check(cn.q, res.grad_q,
           [&] {
             return critic_losses(b, Head::Low, items, 0.99, 0.95, false).loss_q;
           },
           1e-4);
  fd_check(cn.v, res.grad_v,
           [&] {
             return critic_losses(b, Head::Low, items, 0.99, 0.95, false).loss_v;
           },
           1e-4);
  // the backbone sees both losses
  fd_check(b.theta, res.grad_theta,
           [&] {
             auto r = critic_losses(b, Head::Low, items, 0.99, 0.95, false);
             return r.loss_q + r.loss_v;
           },
           1e-4);
}
