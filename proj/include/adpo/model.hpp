#pragma once

// The toy vision-language model: a linear-tanh image encoder plus a token
// embedding table feeding a one-hidden-layer autoregressive scorer. The
// encode / decode split is explicit so perturbations can be injected either
// into pixels or into the encoded latent sequence.
//
// Every numeric path (log-likelihood, generation, gradients) is built on the
// same GradGraph kernels, so values agree bit-for-bit across entry points.

#include <cstdint>
#include <string>
#include <vector>

#include "adpo/graph.hpp"
#include "adpo/rng.hpp"
#include "adpo/tensor.hpp"

namespace adpo {

// Reserved token ids. Content tokens start at kContentBase.
constexpr int kBosId = 0;
constexpr int kEosId = 1;
constexpr int kRefuseId = 2;
constexpr int kComplyId = 3;
constexpr int kContentBase = 4;

struct Dims {
  int vocab = 32;        // V
  int embed = 16;        // d
  int pixels = 64;       // p (8x8 image)
  int image_tokens = 4;  // k
  int hidden = 32;       // m

  bool operator==(const Dims&) const = default;

  void validate() const {
    if (vocab <= kContentBase || embed <= 0 || pixels <= 0 || image_tokens <= 0 || hidden <= 0)
      throw std::invalid_argument("Dims: all dimensions must be positive (vocab > " +
                                  std::to_string(kContentBase) + ")");
  }
};

struct Query {
  std::vector<double> image;  // pixels, each in [0,1]
  std::vector<int> text;      // token ids < vocab

  bool operator==(const Query&) const = default;
};

using Response = std::vector<int>;

struct ToyVlmParams {
  Dims dims;
  Tensor embedding;  // V x d
  Tensor enc_w;      // (k*d) x p
  Tensor enc_b;      // (k*d) x 1
  Tensor dec_w;      // m x 2d
  Tensor dec_b;      // m x 1
  Tensor out_w;      // V x m
  Tensor out_b;      // V x 1
};

// Gradient (or moment) container with the same shapes as the parameters.
struct ParamGrads {
  Tensor embedding, enc_w, enc_b, dec_w, dec_b, out_w, out_b;

  static ParamGrads zeros_like(const ToyVlmParams& p) {
    ParamGrads g;
    g.embedding = Tensor(p.embedding.rows, p.embedding.cols);
    g.enc_w = Tensor(p.enc_w.rows, p.enc_w.cols);
    g.enc_b = Tensor(p.enc_b.rows, p.enc_b.cols);
    g.dec_w = Tensor(p.dec_w.rows, p.dec_w.cols);
    g.dec_b = Tensor(p.dec_b.rows, p.dec_b.cols);
    g.out_w = Tensor(p.out_w.rows, p.out_w.cols);
    g.out_b = Tensor(p.out_b.rows, p.out_b.cols);
    return g;
  }
};

template <class P, class F>
void for_each_tensor(P& p, F f) {
  f(p.embedding);
  f(p.enc_w);
  f(p.enc_b);
  f(p.dec_w);
  f(p.dec_b);
  f(p.out_w);
  f(p.out_b);
}

template <class A, class B, class F>
void zip_tensors(A& a, B& b, F f) {
  f(a.embedding, b.embedding);
  f(a.enc_w, b.enc_w);
  f(a.enc_b, b.enc_b);
  f(a.dec_w, b.dec_w);
  f(a.dec_b, b.dec_b);
  f(a.out_w, b.out_w);
  f(a.out_b, b.out_b);
}

inline void axpy(ParamGrads& acc, const ParamGrads& g, double c) {
  zip_tensors(acc, const_cast<ParamGrads&>(g), [c](Tensor& a, Tensor& b) {
    for (int i = 0; i < a.size(); ++i) a.v[i] += c * b.v[i];
  });
}

inline void validate_query(const Dims& dims, const Query& q) {
  if (static_cast<int>(q.image.size()) != dims.pixels)
    throw std::invalid_argument("query: image has " + std::to_string(q.image.size()) +
                                " pixels, expected " + std::to_string(dims.pixels));
  for (double px : q.image)
    if (!(px >= 0.0 && px <= 1.0))
      throw std::invalid_argument("query: pixel " + std::to_string(px) + " outside [0,1]");
  for (int t : q.text)
    if (t < 0 || t >= dims.vocab)
      throw std::invalid_argument("query: token id " + std::to_string(t) + " outside [0," +
                                  std::to_string(dims.vocab) + ")");
}

inline void validate_response(const Dims& dims, const Response& r) {
  if (r.empty()) throw std::invalid_argument("response: must be non-empty");
  for (int t : r)
    if (t < 0 || t >= dims.vocab)
      throw std::invalid_argument("response: token id " + std::to_string(t) + " outside [0," +
                                  std::to_string(dims.vocab) + ")");
}

// Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases. Tensors are
// filled in declaration order from a single derived stream.
inline ToyVlmParams init_params(std::uint64_t seed, const Dims& dims) {
  dims.validate();
  ToyVlmParams p;
  p.dims = dims;
  p.embedding = Tensor(dims.vocab, dims.embed);
  p.enc_w = Tensor(dims.image_tokens * dims.embed, dims.pixels);
  p.enc_b = Tensor(dims.image_tokens * dims.embed, 1);
  p.dec_w = Tensor(dims.hidden, 2 * dims.embed);
  p.dec_b = Tensor(dims.hidden, 1);
  p.out_w = Tensor(dims.vocab, dims.hidden);
  p.out_b = Tensor(dims.vocab, 1);

  Rng rng(derive_seed(seed, "init"));
  auto fill = [&rng](Tensor& t, int fan_in) {
    double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : t.v) x = rng.uniform(-s, s);
  };
  fill(p.embedding, dims.embed);
  fill(p.enc_w, dims.pixels);
  fill(p.dec_w, 2 * dims.embed);
  fill(p.out_w, dims.hidden);
  return p;
}

// Node handles for one set of parameters inside a graph.
struct ParamNodes {
  NodeId embedding, enc_w, enc_b, dec_w, dec_b, out_w, out_b;
};

inline ParamNodes add_params(GradGraph& g, const ToyVlmParams& p, bool as_leaves) {
  auto put = [&](const Tensor& t) { return as_leaves ? g.leaf(t) : g.constant(t); };
  return ParamNodes{put(p.embedding), put(p.enc_w), put(p.enc_b), put(p.dec_w),
                    put(p.dec_b),     put(p.out_w), put(p.out_b)};
}

inline ParamGrads collect_param_grads(const GradResult& r, const ParamNodes& n) {
  ParamGrads g;
  g.embedding = r.at(n.embedding);
  g.enc_w = r.at(n.enc_w);
  g.enc_b = r.at(n.enc_b);
  g.dec_w = r.at(n.dec_w);
  g.dec_b = r.at(n.dec_b);
  g.out_w = r.at(n.out_w);
  g.out_b = r.at(n.out_b);
  return g;
}

// Latent sequence: k encoded image rows followed by the text embedding rows.
inline NodeId build_latent(GradGraph& g, const ParamNodes& pn, const Dims& dims, NodeId image,
                           const std::vector<int>& text) {
  NodeId enc = g.tanh(g.add(g.matvec(pn.enc_w, image), pn.enc_b));
  NodeId image_block = g.reshape(enc, dims.image_tokens, dims.embed);
  NodeId text_block = g.gather_rows(pn.embedding, text);
  return g.concat_rows(image_block, text_block);
}

// One decoder step: logits over the vocabulary given pooled context and the
// previous token id.
inline NodeId build_step_logits(GradGraph& g, const ParamNodes& pn, NodeId context, int prev_token) {
  NodeId prev_rows = g.gather_rows(pn.embedding, {prev_token});
  NodeId prev = g.reshape(prev_rows, g.value(prev_rows).cols, 1);
  NodeId joint = g.concat_rows(context, prev);
  NodeId hidden = g.tanh(g.add(g.matvec(pn.dec_w, joint), pn.dec_b));
  return g.add(g.matvec(pn.out_w, hidden), pn.out_b);
}

// Sum over response positions of log-softmax(logits)[y_t], conditioning on
// BOS for the first step.
inline NodeId build_response_loglik(GradGraph& g, const ParamNodes& pn, const Dims& dims,
                                    NodeId latent, const Response& response) {
  validate_response(dims, response);
  const Tensor& lv = g.value(latent);
  if (lv.cols != dims.embed)
    throw std::invalid_argument("latent: row dimension " + std::to_string(lv.cols) +
                                " != embed dim " + std::to_string(dims.embed));
  NodeId context = g.mean_rows(latent);
  NodeId total = -1;
  int prev = kBosId;
  for (int t : response) {
    NodeId logits = build_step_logits(g, pn, context, prev);
    NodeId lp = g.pick(g.log_softmax(logits), t);
    total = (total < 0) ? lp : g.add(total, lp);
    prev = t;
  }
  return total;
}

inline Tensor encode(const ToyVlmParams& p, const Query& q) {
  validate_query(p.dims, q);
  GradGraph g;
  ParamNodes pn = add_params(g, p, false);
  NodeId latent = build_latent(g, pn, p.dims, g.constant(Tensor::column(q.image)), q.text);
  return g.value(latent);
}

inline double decode_loglik(const ToyVlmParams& p, const Tensor& latent, const Response& r) {
  GradGraph g;
  ParamNodes pn = add_params(g, p, false);
  NodeId lp = build_response_loglik(g, pn, p.dims, g.constant(latent), r);
  return g.value(lp).v[0];
}

inline double loglik(const ToyVlmParams& p, const Query& q, const Response& r) {
  validate_query(p.dims, q);
  GradGraph g;
  ParamNodes pn = add_params(g, p, false);
  NodeId latent = build_latent(g, pn, p.dims, g.constant(Tensor::column(q.image)), q.text);
  NodeId lp = build_response_loglik(g, pn, p.dims, latent, r);
  return g.value(lp).v[0];
}

// Greedy decoding from an already-encoded latent sequence. Ties break toward
// the lowest token id; generation stops after emitting EOS or at max_len.
inline Response generate_from_latent(const ToyVlmParams& p, const Tensor& latent, int max_len) {
  if (max_len < 1) throw std::invalid_argument("generate: max_len must be >= 1");
  GradGraph g;
  ParamNodes pn = add_params(g, p, false);
  NodeId context = g.mean_rows(g.constant(latent));
  Response out;
  int prev = kBosId;
  for (int step = 0; step < max_len; ++step) {
    NodeId logits = build_step_logits(g, pn, context, prev);
    const Tensor& lv = g.value(logits);
    int best = 0;
    for (int i = 1; i < lv.rows; ++i)
      if (lv.v[i] > lv.v[best]) best = i;
    out.push_back(best);
    if (best == kEosId) break;
    prev = best;
  }
  return out;
}

inline Response generate(const ToyVlmParams& p, const Query& q, int max_len) {
  return generate_from_latent(p, encode(p, q), max_len);
}

}  // namespace adpo
