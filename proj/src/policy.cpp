#include "stepworld/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace stepworld {

// --- Tensors -----------------------------------------------------------------

Mat& Tensors::add(const std::string& name, int rows, int cols) {
  items.emplace_back(name, Mat(rows, cols));
  return items.back().second;
}

Mat& Tensors::at(const std::string& name) {
  for (auto& [n, m] : items)
    if (n == name) return m;
  throw std::out_of_range("no tensor named " + name);
}

const Mat& Tensors::at(const std::string& name) const {
  for (const auto& [n, m] : items)
    if (n == name) return m;
  throw std::out_of_range("no tensor named " + name);
}

bool Tensors::has(const std::string& name) const {
  for (const auto& [n, m] : items)
    if (n == name) return true;
  return false;
}

void Tensors::zero() {
  for (auto& [n, m] : items) std::fill(m.a.begin(), m.a.end(), 0.0);
}

void Tensors::axpy(double alpha, const Tensors& other) {
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& dst = items[i].second.a;
    const auto& src = other.items[i].second.a;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += alpha * src[j];
  }
}

void Tensors::lerp(const Tensors& online, double rate) {
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& dst = items[i].second.a;
    const auto& src = online.items[i].second.a;
    for (std::size_t j = 0; j < dst.size(); ++j)
      dst[j] = (1.0 - rate) * dst[j] + rate * src[j];
  }
}

Tensors Tensors::zeros_like() const {
  Tensors t;
  for (const auto& [n, m] : items) t.add(n, m.rows, m.cols);
  return t;
}

std::size_t Tensors::num_params() const {
  std::size_t n = 0;
  for (const auto& [name, m] : items) n += m.a.size();
  return n;
}

// --- inputs ------------------------------------------------------------------

const char* head_name(Head h) {
  switch (h) {
    case Head::High: return "high";
    case Head::Low: return "low";
    case Head::Progress: return "progress";
  }
  return "?";
}

int PolicyInput::total_len() const {
  int n = 0;
  for (const auto& s : segments) n += static_cast<int>(s.tokens.size());
  return n;
}

PolicyInput build_high_input(const TokenSeq& instruction,
                             const TokenSeq& completed,
                             const TokenSeq& final_progress,
                             const TokenSeq& obs) {
  return PolicyInput{Head::High,
                     {{SegTag::Instruction, instruction},
                      {SegTag::Completed, completed},
                      {SegTag::Progress, final_progress},
                      {SegTag::Observation, obs}}};
}

PolicyInput build_low_input(const TokenSeq& subtask, const TokenSeq& progress,
                            const TokenSeq& obs) {
  return PolicyInput{Head::Low,
                     {{SegTag::Subtask, subtask},
                      {SegTag::Progress, progress},
                      {SegTag::Observation, obs}}};
}

PolicyInput build_progress_input(const TokenSeq& subtask,
                                 const TokenSeq& prev_action,
                                 const TokenSeq& obs,
                                 const TokenSeq& prev_progress) {
  return PolicyInput{Head::Progress,
                     {{SegTag::Subtask, subtask},
                      {SegTag::PrevAction, prev_action},
                      {SegTag::Observation, obs},
                      {SegTag::Progress, prev_progress}}};
}

PolicyInput build_high_input_nolp(const TokenSeq& instruction,
                                  const TokenSeq& completed,
                                  const TokenSeq& obs) {
  return PolicyInput{Head::High,
                     {{SegTag::Instruction, instruction},
                      {SegTag::Completed, completed},
                      {SegTag::Observation, obs}}};
}

PolicyInput build_low_input_nolp(const TokenSeq& subtask, const TokenSeq& obs) {
  return PolicyInput{
      Head::Low, {{SegTag::Subtask, subtask}, {SegTag::Observation, obs}}};
}

PolicyInput build_flat_low_input(const TokenSeq& instruction,
                                 const TokenSeq& progress, const TokenSeq& obs) {
  return PolicyInput{Head::Low,
                     {{SegTag::Instruction, instruction},
                      {SegTag::Progress, progress},
                      {SegTag::Observation, obs}}};
}

PolicyInput build_flat_progress_input(const TokenSeq& instruction,
                                      const TokenSeq& prev_action,
                                      const TokenSeq& obs,
                                      const TokenSeq& prev_progress) {
  return PolicyInput{Head::Progress,
                     {{SegTag::Instruction, instruction},
                      {SegTag::PrevAction, prev_action},
                      {SegTag::Observation, obs},
                      {SegTag::Progress, prev_progress}}};
}

int head_budget(Head h) { return h == Head::Progress ? kLpMax + 2 : 32; }

// --- init --------------------------------------------------------------------

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  double u = (rng() >> 11) * (1.0 / 9007199254740992.0);
  return lo + u * (hi - lo);
}

void fill_uniform(Mat& m, std::mt19937_64& rng, double bound) {
  for (auto& x : m.a) x = uniform(rng, -bound, bound);
}

Tensors make_mlp(int in_dim, int width, std::mt19937_64& rng) {
  Tensors t;
  if (width > 0) {
    fill_uniform(t.add("W1", width, in_dim), rng, 1.0 / std::sqrt(in_dim));
    t.add("b1", width, 1);
    t.add("w2", 1, width);  // zero: value heads start at exactly 0
    t.add("b2", 1, 1);
  } else {
    t.add("w2", 1, in_dim);
    t.add("b2", 1, 1);
  }
  return t;
}

}  // namespace

PolicyBundle PolicyBundle::init(const PolicyConfig& cfg) {
  PolicyBundle b;
  b.config = cfg;
  b.vocab_hash = vocab().hash();
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  int d = cfg.dim;
  int V = vocab().size();

  fill_uniform(b.theta.add("embed", V, d), rng, 0.1);
  fill_uniform(b.theta.add("seg", kNumSegTags, d), rng, 0.1);
  fill_uniform(b.theta.add("head_init", kNumHeads, d), rng, 0.1);
  double k = 1.0 / std::sqrt(d);
  for (const char* n : {"Wz", "Uz", "Wr", "Ur", "Wc", "Uc"})
    fill_uniform(b.theta.add(n, d, d), rng, k);
  for (const char* n : {"bz", "br", "bc"}) b.theta.add(n, d, 1);
  for (const char* n : {"outW_high", "outW_low", "outW_prog"})
    b.theta.add(n, V, d);  // zero: uniform next-token distribution at init
  for (const char* n : {"outb_high", "outb_low", "outb_prog"})
    b.theta.add(n, V, 1);

  for (int h = 0; h < kNumHeads; ++h) {
    b.critics[h].q = make_mlp(d, cfg.critic_width, rng);
    b.critics[h].v = make_mlp(d, cfg.critic_width, rng);
    b.critics[h].q_target = b.critics[h].q;
    b.critics[h].v_target = b.critics[h].v;
  }
  return b;
}

// --- sequence core -------------------------------------------------------------

namespace {

struct ThetaView {
  const Mat *embed, *seg, *head_init;
  const Mat *Wz, *Uz, *Wr, *Ur, *Wc, *Uc;
  const Mat *bz, *br, *bc;
  const Mat *outW, *outb;
  int d;

  ThetaView(const Tensors& t, Head head, int dim) : d(dim) {
    embed = &t.at("embed");
    seg = &t.at("seg");
    head_init = &t.at("head_init");
    Wz = &t.at("Wz");
    Uz = &t.at("Uz");
    Wr = &t.at("Wr");
    Ur = &t.at("Ur");
    Wc = &t.at("Wc");
    Uc = &t.at("Uc");
    bz = &t.at("bz");
    br = &t.at("br");
    bc = &t.at("bc");
    outW = &t.at(head == Head::High  ? "outW_high"
                 : head == Head::Low ? "outW_low"
                                     : "outW_prog");
    outb = &t.at(head == Head::High  ? "outb_high"
                 : head == Head::Low ? "outb_low"
                                     : "outb_prog");
  }
};

struct ThetaGradView {
  Mat *embed, *seg, *head_init;
  Mat *Wz, *Uz, *Wr, *Ur, *Wc, *Uc;
  Mat *bz, *br, *bc;
  Mat *outW, *outb;

  ThetaGradView(Tensors& t, Head head) {
    embed = &t.at("embed");
    seg = &t.at("seg");
    head_init = &t.at("head_init");
    Wz = &t.at("Wz");
    Uz = &t.at("Uz");
    Wr = &t.at("Wr");
    Ur = &t.at("Ur");
    Wc = &t.at("Wc");
    Uc = &t.at("Uc");
    bz = &t.at("bz");
    br = &t.at("br");
    bc = &t.at("bc");
    outW = &t.at(head == Head::High  ? "outW_high"
                 : head == Head::Low ? "outW_low"
                                     : "outW_prog");
    outb = &t.at(head == Head::High  ? "outb_high"
                 : head == Head::Low ? "outb_low"
                                     : "outb_prog");
  }
};

inline void matvec(const Mat& W, const double* x, double* y) {
  for (int r = 0; r < W.rows; ++r) {
    const double* row = W.row(r);
    double s = 0;
    for (int c = 0; c < W.cols; ++c) s += row[c] * x[c];
    y[r] += s;
  }
}

inline void matvec_t(const Mat& W, const double* y, double* x) {
  // x += W^T y
  for (int r = 0; r < W.rows; ++r) {
    const double* row = W.row(r);
    double yr = y[r];
    for (int c = 0; c < W.cols; ++c) x[c] += row[c] * yr;
  }
}

inline void outer_acc(Mat& G, const double* u, const double* v) {
  // G += u v^T
  for (int r = 0; r < G.rows; ++r) {
    double* row = G.row(r);
    double ur = u[r];
    for (int c = 0; c < G.cols; ++c) row[c] += ur * v[c];
  }
}

struct SeqCache {
  Head head = Head::Low;
  int d = 0;
  std::vector<TokenId> toks;
  std::vector<int> tags;
  std::vector<double> h;           // (T+1) * d
  std::vector<double> z, r, c, x;  // T * d

  int T() const { return static_cast<int>(toks.size()); }
  double* hid(int t) { return h.data() + static_cast<std::size_t>(t) * d; }
  const double* hid(int t) const {
    return h.data() + static_cast<std::size_t>(t) * d;
  }
};

void flatten_input(const PolicyInput& in, std::vector<TokenId>& toks,
                   std::vector<int>& tags) {
  for (const auto& seg : in.segments)
    for (TokenId t : seg.tokens) {
      toks.push_back(t);
      tags.push_back(static_cast<int>(seg.tag));
    }
}

void gru_forward_step(const ThetaView& tv, const double* h_prev, TokenId tok,
                      int tag, double* x, double* z, double* r, double* c,
                      double* h_out) {
  int d = tv.d;
  for (int i = 0; i < d; ++i)
    x[i] = tv.embed->row(tok)[i] + tv.seg->row(tag)[i];

  std::copy(tv.bz->a.begin(), tv.bz->a.end(), z);
  matvec(*tv.Wz, x, z);
  matvec(*tv.Uz, h_prev, z);
  std::copy(tv.br->a.begin(), tv.br->a.end(), r);
  matvec(*tv.Wr, x, r);
  matvec(*tv.Ur, h_prev, r);
  for (int i = 0; i < d; ++i) {
    z[i] = 1.0 / (1.0 + std::exp(-z[i]));
    r[i] = 1.0 / (1.0 + std::exp(-r[i]));
  }
  double rh[512];
  for (int i = 0; i < d; ++i) rh[i] = r[i] * h_prev[i];
  std::copy(tv.bc->a.begin(), tv.bc->a.end(), c);
  matvec(*tv.Wc, x, c);
  matvec(*tv.Uc, rh, c);
  for (int i = 0; i < d; ++i) c[i] = std::tanh(c[i]);
  for (int i = 0; i < d; ++i) h_out[i] = (1.0 - z[i]) * h_prev[i] + z[i] * c[i];
}

void run_forward(const ThetaView& tv, Head head,
                 const std::vector<TokenId>& toks,
                 const std::vector<int>& tags, SeqCache& cache) {
  int d = tv.d;
  int T = static_cast<int>(toks.size());
  cache.head = head;
  cache.d = d;
  cache.toks = toks;
  cache.tags = tags;
  cache.h.assign(static_cast<std::size_t>(T + 1) * d, 0.0);
  cache.z.assign(static_cast<std::size_t>(T) * d, 0.0);
  cache.r.assign(static_cast<std::size_t>(T) * d, 0.0);
  cache.c.assign(static_cast<std::size_t>(T) * d, 0.0);
  cache.x.assign(static_cast<std::size_t>(T) * d, 0.0);

  std::copy(tv.head_init->row(static_cast<int>(head)),
            tv.head_init->row(static_cast<int>(head)) + d, cache.hid(0));
  for (int t = 0; t < T; ++t) {
    std::size_t off = static_cast<std::size_t>(t) * d;
    gru_forward_step(tv, cache.hid(t), toks[t], tags[t], cache.x.data() + off,
                     cache.z.data() + off, cache.r.data() + off,
                     cache.c.data() + off, cache.hid(t + 1));
  }
}

// Backpropagates through a cached sequence. dh_at[t] holds external gradient
// contributions at hidden state h[t], t in 0..T; empty vectors mean zero.
void run_backward(const ThetaView& tv, const SeqCache& cache,
                  const std::vector<std::vector<double>>& dh_at,
                  Tensors& grad) {
  int d = tv.d;
  int T = cache.T();
  ThetaGradView gv(grad, cache.head);

  std::vector<double> dh(d, 0.0);
  if (!dh_at[T].empty())
    for (int i = 0; i < d; ++i) dh[i] += dh_at[T][i];

  std::vector<double> dzpre(d), drpre(d), dcpre(d), drh(d), dx(d), dh_prev(d);
  std::vector<double> rh(d);
  for (int t = T - 1; t >= 0; --t) {
    std::size_t off = static_cast<std::size_t>(t) * d;
    const double* z = cache.z.data() + off;
    const double* r = cache.r.data() + off;
    const double* c = cache.c.data() + off;
    const double* x = cache.x.data() + off;
    const double* h_prev = cache.hid(t);

    std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
    std::fill(drh.begin(), drh.end(), 0.0);
    std::fill(dx.begin(), dx.end(), 0.0);

    for (int i = 0; i < d; ++i) {
      double dzi = dh[i] * (c[i] - h_prev[i]);
      dzpre[i] = dzi * z[i] * (1.0 - z[i]);
      double dci = dh[i] * z[i];
      dcpre[i] = dci * (1.0 - c[i] * c[i]);
      dh_prev[i] = dh[i] * (1.0 - z[i]);
    }
    outer_acc(*gv.Wc, dcpre.data(), x);
    for (int i = 0; i < d; ++i) rh[i] = r[i] * h_prev[i];
    outer_acc(*gv.Uc, dcpre.data(), rh.data());
    for (int i = 0; i < d; ++i) gv.bc->a[i] += dcpre[i];
    matvec_t(*tv.Uc, dcpre.data(), drh.data());
    for (int i = 0; i < d; ++i) {
      double dri = drh[i] * h_prev[i];
      drpre[i] = dri * r[i] * (1.0 - r[i]);
      dh_prev[i] += drh[i] * r[i];
    }
    outer_acc(*gv.Wz, dzpre.data(), x);
    outer_acc(*gv.Uz, dzpre.data(), h_prev);
    outer_acc(*gv.Wr, drpre.data(), x);
    outer_acc(*gv.Ur, drpre.data(), h_prev);
    for (int i = 0; i < d; ++i) {
      gv.bz->a[i] += dzpre[i];
      gv.br->a[i] += drpre[i];
    }
    matvec_t(*tv.Uz, dzpre.data(), dh_prev.data());
    matvec_t(*tv.Ur, drpre.data(), dh_prev.data());
    matvec_t(*tv.Wz, dzpre.data(), dx.data());
    matvec_t(*tv.Wr, drpre.data(), dx.data());
    matvec_t(*tv.Wc, dcpre.data(), dx.data());

    double* erow = gv.embed->row(cache.toks[t]);
    double* srow = gv.seg->row(cache.tags[t]);
    for (int i = 0; i < d; ++i) {
      erow[i] += dx[i];
      srow[i] += dx[i];
    }

    dh = dh_prev;
    if (!dh_at[t].empty())
      for (int i = 0; i < d; ++i) dh[i] += dh_at[t][i];
  }
  double* hrow = gv.head_init->row(static_cast<int>(cache.head));
  for (int i = 0; i < d; ++i) hrow[i] += dh[i];
}

void softmax_logits(const ThetaView& tv, const double* h,
                    std::vector<double>& logits, std::vector<double>& probs) {
  int V = tv.outW->rows;
  logits.assign(V, 0.0);
  for (int r = 0; r < V; ++r) logits[r] = tv.outb->a[r];
  matvec(*tv.outW, h, logits.data());
  double mx = *std::max_element(logits.begin(), logits.end());
  probs.resize(V);
  double sum = 0;
  for (int r = 0; r < V; ++r) {
    probs[r] = std::exp(logits[r] - mx);
    sum += probs[r];
  }
  for (int r = 0; r < V; ++r) probs[r] /= sum;
}

void check_context(const PolicyInput& in) {
  if (in.total_len() > kCtxMax)
    throw ContextOverflow("policy input exceeds CTX_MAX (" +
                          std::to_string(in.total_len()) + " tokens)");
}

double mlp_forward(const Tensors& mlp, const double* x, int d) {
  if (!mlp.has("W1")) {
    const Mat& w2 = mlp.at("w2");
    double out = mlp.at("b2").a[0];
    for (int i = 0; i < d; ++i) out += w2.a[i] * x[i];
    return out;
  }
  const Mat& W1 = mlp.at("W1");
  const Mat& b1 = mlp.at("b1");
  const Mat& w2 = mlp.at("w2");
  int h = W1.rows;
  double out = mlp.at("b2").a[0];
  for (int r = 0; r < h; ++r) {
    const double* row = W1.row(r);
    double s = b1.a[r];
    for (int c = 0; c < d; ++c) s += row[c] * x[c];
    out += w2.a[r] * std::tanh(s);
  }
  return out;
}

// dout: gradient w.r.t. the scalar output. Parameter gradients go to grad
// (nullable), input gradients accumulate into dx (nullable).
void mlp_backward(const Tensors& mlp, const double* x, int d, double dout,
                  Tensors* grad, double* dx) {
  if (!mlp.has("W1")) {
    const Mat& w2 = mlp.at("w2");
    if (grad) {
      Mat& gw2 = grad->at("w2");
      for (int i = 0; i < d; ++i) gw2.a[i] += dout * x[i];
      grad->at("b2").a[0] += dout;
    }
    if (dx)
      for (int i = 0; i < d; ++i) dx[i] += dout * w2.a[i];
    return;
  }
  const Mat& W1 = mlp.at("W1");
  const Mat& b1 = mlp.at("b1");
  const Mat& w2 = mlp.at("w2");
  int h = W1.rows;
  std::vector<double> a1(h), dz1(h);
  for (int r = 0; r < h; ++r) {
    const double* row = W1.row(r);
    double s = b1.a[r];
    for (int c = 0; c < d; ++c) s += row[c] * x[c];
    a1[r] = std::tanh(s);
  }
  for (int r = 0; r < h; ++r)
    dz1[r] = dout * w2.a[r] * (1.0 - a1[r] * a1[r]);
  if (grad) {
    Mat& gW1 = grad->at("W1");
    Mat& gb1 = grad->at("b1");
    Mat& gw2 = grad->at("w2");
    for (int r = 0; r < h; ++r) {
      double* row = gW1.row(r);
      for (int c = 0; c < d; ++c) row[c] += dz1[r] * x[c];
      gb1.a[r] += dz1[r];
      gw2.a[r] += dout * a1[r];
    }
    grad->at("b2").a[0] += dout;
  }
  if (dx)
    for (int r = 0; r < h; ++r) {
      const double* row = W1.row(r);
      for (int c = 0; c < d; ++c) dx[c] += dz1[r] * row[c];
    }
}

}  // namespace

// --- public inference ----------------------------------------------------------

std::vector<double> encode(const PolicyBundle& b, const PolicyInput& input) {
  check_context(input);
  ThetaView tv(b.theta, input.head, b.config.dim);
  std::vector<TokenId> toks;
  std::vector<int> tags;
  flatten_input(input, toks, tags);
  SeqCache cache;
  run_forward(tv, input.head, toks, tags, cache);
  return std::vector<double>(cache.hid(cache.T()),
                             cache.hid(cache.T()) + b.config.dim);
}

std::vector<double> logprob_per_token(const PolicyBundle& b,
                                      const PolicyInput& input,
                                      const TokenSeq& target) {
  check_context(input);
  ThetaView tv(b.theta, input.head, b.config.dim);
  std::vector<TokenId> toks;
  std::vector<int> tags;
  flatten_input(input, toks, tags);
  SeqCache cache;
  run_forward(tv, input.head, toks, tags, cache);

  std::vector<double> out;
  std::vector<double> h(cache.hid(cache.T()), cache.hid(cache.T()) + tv.d);
  std::vector<double> logits, probs;
  std::vector<double> x(tv.d), z(tv.d), r(tv.d), c(tv.d), h2(tv.d);
  for (TokenId u : target) {
    softmax_logits(tv, h.data(), logits, probs);
    out.push_back(std::log(probs[u]));
    gru_forward_step(tv, h.data(), u, static_cast<int>(SegTag::Output),
                     x.data(), z.data(), r.data(), c.data(), h2.data());
    h = h2;
  }
  return out;
}

double logprob(const PolicyBundle& b, const PolicyInput& input,
               const TokenSeq& target) {
  double lp = 0;
  for (double v : logprob_per_token(b, input, target)) lp += v;
  return lp;
}

PolicyOutput sample(const PolicyBundle& b, const PolicyInput& input,
                    double temperature, std::mt19937_64& rng) {
  check_context(input);
  ThetaView tv(b.theta, input.head, b.config.dim);
  std::vector<TokenId> toks;
  std::vector<int> tags;
  flatten_input(input, toks, tags);
  SeqCache cache;
  run_forward(tv, input.head, toks, tags, cache);

  PolicyOutput out;
  std::vector<double> h(cache.hid(cache.T()), cache.hid(cache.T()) + tv.d);
  std::vector<double> logits, probs;
  std::vector<double> x(tv.d), z(tv.d), r(tv.d), c(tv.d), h2(tv.d);
  int budget = head_budget(input.head);
  const TokenId end_tok = vocab().end();

  for (int step = 0; step < budget; ++step) {
    softmax_logits(tv, h.data(), logits, probs);
    TokenId pick = 0;
    if (temperature <= 0.0) {
      for (int i = 1; i < static_cast<int>(logits.size()); ++i)
        if (logits[i] > logits[pick]) pick = i;  // ties keep the lowest id
    } else {
      double mx = *std::max_element(logits.begin(), logits.end());
      double sum = 0;
      std::vector<double> p(logits.size());
      for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - mx) / temperature);
        sum += p[i];
      }
      double u = (rng() >> 11) * (1.0 / 9007199254740992.0) * sum;
      double acc = 0;
      pick = static_cast<TokenId>(logits.size()) - 1;
      for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
          pick = static_cast<TokenId>(i);
          break;
        }
      }
    }
    if (pick == end_tok) break;
    out.tokens.push_back(pick);
    out.per_token_logprob.push_back(std::log(probs[pick]));
    gru_forward_step(tv, h.data(), pick, static_cast<int>(SegTag::Output),
                     x.data(), z.data(), r.data(), c.data(), h2.data());
    h = h2;
  }

  if (input.head == Head::Low && !out.tokens.empty()) {
    TokenId last = out.tokens.back();
    if (last == vocab().flag_true() || last == vocab().flag_false()) {
      out.has_done_flag = true;
      out.done_flag = last == vocab().flag_true();
    }
  }
  return out;
}

ValueEstimate critic_eval(const PolicyBundle& b, Head head,
                          const PolicyInput& input,
                          const TokenSeq* action_tokens) {
  check_context(input);
  ThetaView tv(b.theta, head, b.config.dim);
  std::vector<TokenId> toks;
  std::vector<int> tags;
  flatten_input(input, toks, tags);

  const CriticNetworks& cn = b.critics[static_cast<int>(head)];
  ValueEstimate est;
  SeqCache cache;
  run_forward(tv, head, toks, tags, cache);
  est.v = mlp_forward(cn.v, cache.hid(cache.T()), tv.d);
  est.v_target = mlp_forward(cn.v_target, cache.hid(cache.T()), tv.d);

  if (action_tokens) {
    for (TokenId t : *action_tokens) {
      toks.push_back(t);
      tags.push_back(static_cast<int>(SegTag::Output));
    }
    SeqCache cache2;
    run_forward(tv, head, toks, tags, cache2);
    est.q = mlp_forward(cn.q, cache2.hid(cache2.T()), tv.d);
    est.q_target = mlp_forward(cn.q_target, cache2.hid(cache2.T()), tv.d);
  }
  return est;
}

void soft_update(PolicyBundle& b, double rate) {
  for (auto& cn : b.critics) {
    cn.q_target.lerp(cn.q, rate);
    cn.v_target.lerp(cn.v, rate);
  }
}

double expectile_loss(double d, double tau) {
  double w = std::abs(tau - (d < 0 ? 1.0 : 0.0));
  return w * d * d;
}

// --- batch kernels -------------------------------------------------------------

namespace {

// Forward + backward for one weighted NLL item; returns the weighted loss.
double nll_item_backward(const PolicyBundle& b, const NllItem& item,
                         Tensors* grad) {
  check_context(item.input);
  ThetaView tv(b.theta, item.input.head, b.config.dim);
  std::vector<TokenId> toks;
  std::vector<int> tags;
  flatten_input(item.input, toks, tags);
  int len_in = static_cast<int>(toks.size());

  TokenSeq target = item.target;
  target.push_back(vocab().end());
  // all target tokens except the trailing <end> are consumed by the recurrence
  for (std::size_t i = 0; i + 1 < target.size(); ++i) {
    toks.push_back(target[i]);
    tags.push_back(static_cast<int>(SegTag::Output));
  }

  SeqCache cache;
  run_forward(tv, item.input.head, toks, tags, cache);

  int T = cache.T();
  std::vector<std::vector<double>> dh_at(T + 1);
  std::vector<double> logits, probs;
  double loss = 0;

  for (std::size_t l = 0; l < target.size(); ++l) {
    int pos = len_in + static_cast<int>(l);
    const double* h = cache.hid(pos);
    softmax_logits(tv, h, logits, probs);
    TokenId u = target[l];
    loss += -item.weight * std::log(probs[u]);
    if (grad) {
      ThetaGradView gv(*grad, item.input.head);
      if (dh_at[pos].empty()) dh_at[pos].assign(tv.d, 0.0);
      for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
        double dl = item.weight * (probs[i] - (i == u ? 1.0 : 0.0));
        const double* wrow = tv.outW->row(i);
        double* grow = gv.outW->row(i);
        for (int j = 0; j < tv.d; ++j) {
          dh_at[pos][j] += dl * wrow[j];
          grow[j] += dl * h[j];
        }
        gv.outb->a[i] += dl;
      }
    }
  }
  if (grad) run_backward(tv, cache, dh_at, *grad);
  return loss;
}

template <typename Fn>
void for_each_block(int n, bool parallel, Fn&& fn) {
  int nblocks = (n + kGradBlock - 1) / kGradBlock;
#pragma omp parallel for schedule(dynamic, 1) if (parallel)
  for (int blk = 0; blk < nblocks; ++blk) {
    int lo = blk * kGradBlock;
    int hi = std::min(n, lo + kGradBlock);
    fn(blk, lo, hi);
  }
}

}  // namespace

double weighted_nll_gradient(const PolicyBundle& b,
                             std::span<const NllItem> items, bool parallel,
                             Tensors* theta_grad) {
  int n = static_cast<int>(items.size());
  if (n == 0) return 0.0;
  int nblocks = (n + kGradBlock - 1) / kGradBlock;
  std::vector<Tensors> block_grad(nblocks);
  std::vector<double> block_loss(nblocks, 0.0);

  for_each_block(n, parallel, [&](int blk, int lo, int hi) {
    Tensors g;
    if (theta_grad) g = b.theta.zeros_like();
    double L = 0;
    for (int i = lo; i < hi; ++i)
      L += nll_item_backward(b, items[i], theta_grad ? &g : nullptr);
    block_grad[blk] = std::move(g);
    block_loss[blk] = L;
  });

  // block partials are reduced in block order: bitwise reproducible for any
  // thread count, and identical to the serial reference
  double loss = 0;
  for (int blk = 0; blk < nblocks; ++blk) {
    loss += block_loss[blk];
    if (theta_grad) theta_grad->axpy(1.0, block_grad[blk]);
  }
  return loss;
}

namespace {

struct CriticScratch {
  double loss_q = 0, loss_v = 0;
  Tensors gq, gv, gtheta;
};

void critic_item_backward(const PolicyBundle& b, Head head,
                          const CriticItem& item, double gamma, double tau,
                          double weight, CriticScratch& out) {
  const CriticNetworks& cn = b.critics[static_cast<int>(head)];
  ThetaView tv(b.theta, head, b.config.dim);
  int d = tv.d;

  std::vector<TokenId> toks_s;
  std::vector<int> tags_s;
  flatten_input(item.state, toks_s, tags_s);
  std::vector<TokenId> toks_sa = toks_s;
  std::vector<int> tags_sa = tags_s;
  for (TokenId t : item.action) {
    toks_sa.push_back(t);
    tags_sa.push_back(static_cast<int>(SegTag::Output));
  }

  SeqCache cs, csa, cs2;
  run_forward(tv, head, toks_s, tags_s, cs);
  run_forward(tv, head, toks_sa, tags_sa, csa);
  const double* h_s = cs.hid(cs.T());
  const double* h_sa = csa.hid(csa.T());

  double q = mlp_forward(cn.q, h_sa, d);
  double v = mlp_forward(cn.v, h_s, d);
  double q_tgt = mlp_forward(cn.q_target, h_sa, d);

  double v_tgt_next = 0.0;
  if (!item.terminal) {
    std::vector<TokenId> toks2;
    std::vector<int> tags2;
    flatten_input(item.next_state, toks2, tags2);
    run_forward(tv, head, toks2, tags2, cs2);
    v_tgt_next = mlp_forward(cn.v_target, cs2.hid(cs2.T()), d);
  }

  double mask = item.terminal ? 0.0 : 1.0;
  double td = item.reward + gamma * v_tgt_next * mask - q;
  out.loss_q += weight * td * td;
  double dq = weight * (-2.0) * td;

  double dv_exp = q_tgt - v;
  out.loss_v += weight * expectile_loss(dv_exp, tau);
  double wexp = std::abs(tau - (dv_exp < 0 ? 1.0 : 0.0));
  double dd = weight * wexp * 2.0 * dv_exp;

  std::vector<double> dh_s(d, 0.0), dh_sa(d, 0.0);
  mlp_backward(cn.q, h_sa, d, dq, &out.gq, dh_sa.data());
  mlp_backward(cn.v, h_s, d, -dd, &out.gv, dh_s.data());
  // target heads feed backbone gradient but are never trained themselves
  mlp_backward(cn.q_target, h_sa, d, dd, nullptr, dh_sa.data());

  std::vector<std::vector<double>> dh_at_sa(csa.T() + 1);
  dh_at_sa[csa.T()] = dh_sa;
  run_backward(tv, csa, dh_at_sa, out.gtheta);

  std::vector<std::vector<double>> dh_at_s(cs.T() + 1);
  dh_at_s[cs.T()] = dh_s;
  run_backward(tv, cs, dh_at_s, out.gtheta);

  if (!item.terminal) {
    std::vector<double> dh_s2(d, 0.0);
    mlp_backward(cn.v_target, cs2.hid(cs2.T()), d, weight * 2.0 * td * gamma,
                 nullptr, dh_s2.data());
    std::vector<std::vector<double>> dh_at_s2(cs2.T() + 1);
    dh_at_s2[cs2.T()] = dh_s2;
    run_backward(tv, cs2, dh_at_s2, out.gtheta);
  }
}

}  // namespace

CriticBatchResult critic_losses(const PolicyBundle& b, Head head,
                                std::span<const CriticItem> items, double gamma,
                                double tau, bool parallel) {
  const CriticNetworks& cn = b.critics[static_cast<int>(head)];
  int n = static_cast<int>(items.size());
  CriticBatchResult res;
  res.grad_q = cn.q.zeros_like();
  res.grad_v = cn.v.zeros_like();
  res.grad_theta = b.theta.zeros_like();
  if (n == 0) return res;
  double weight = 1.0 / n;

  int nblocks = (n + kGradBlock - 1) / kGradBlock;
  std::vector<CriticScratch> blocks(nblocks);
  for_each_block(n, parallel, [&](int blk, int lo, int hi) {
    CriticScratch s;
    s.gq = cn.q.zeros_like();
    s.gv = cn.v.zeros_like();
    s.gtheta = b.theta.zeros_like();
    for (int i = lo; i < hi; ++i)
      critic_item_backward(b, head, items[i], gamma, tau, weight, s);
    blocks[blk] = std::move(s);
  });

  for (auto& s : blocks) {
    res.loss_q += s.loss_q;
    res.loss_v += s.loss_v;
    res.grad_q.axpy(1.0, s.gq);
    res.grad_v.axpy(1.0, s.gv);
    res.grad_theta.axpy(1.0, s.gtheta);
  }
  return res;
}

std::vector<double> batch_advantages(const PolicyBundle& b, Head head,
                                     std::span<const CriticItem> items,
                                     bool parallel) {
  int n = static_cast<int>(items.size());
  std::vector<double> adv(n, 0.0);
  for_each_block(n, parallel, [&](int, int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      ValueEstimate est =
          critic_eval(b, head, items[i].state, &items[i].action);
      adv[i] = est.q - est.v;
    }
  });
  return adv;
}

}  // namespace stepworld
