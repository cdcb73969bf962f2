#pragma once

// SGD and Adam (with bias correction) over the model's parameter tensors.
// Steps are value-semantic: callers get fresh params and state.

#include <cstdint>
#include <string>
#include <utility>

#include "adpo/model.hpp"

namespace adpo {

enum class OptKind { sgd, adam };

inline std::string to_string(OptKind k) { return k == OptKind::sgd ? "sgd" : "adam"; }

inline OptKind opt_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptKind::sgd;
  if (s == "adam") return OptKind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd|adam)");
}

struct OptCfg {
  OptKind kind = OptKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
};

struct OptimizerState {
  std::int64_t step = 0;
  ParamGrads m, v;

  static OptimizerState init(const ToyVlmParams& params) {
    OptimizerState s;
    s.m = ParamGrads::zeros_like(params);
    s.v = ParamGrads::zeros_like(params);
    return s;
  }
};

inline std::pair<ToyVlmParams, OptimizerState> optimizer_step(const ToyVlmParams& params,
                                                              const ParamGrads& grads,
                                                              OptimizerState state, double lr,
                                                              const OptCfg& cfg) {
  ToyVlmParams out = params;
  auto check = [](const Tensor& p, const Tensor& g) {
    if (!p.same_shape(g))
      throw std::invalid_argument("optimizer: gradient shape " + g.shape_str() +
                                  " does not match parameter " + p.shape_str());
  };
  if (cfg.kind == OptKind::sgd) {
    zip_tensors(out, const_cast<ParamGrads&>(grads), [&](Tensor& p, Tensor& g) {
      check(p, g);
      for (int i = 0; i < p.size(); ++i) p.v[i] -= lr * g.v[i];
    });
    ++state.step;
    return {std::move(out), std::move(state)};
  }

  ++state.step;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto adam_one = [&](Tensor& p, const Tensor& g, Tensor& m, Tensor& v) {
    check(p, g);
    for (int i = 0; i < p.size(); ++i) {
      m.v[i] = cfg.beta1 * m.v[i] + (1.0 - cfg.beta1) * g.v[i];
      v.v[i] = cfg.beta2 * v.v[i] + (1.0 - cfg.beta2) * g.v[i] * g.v[i];
      double mhat = m.v[i] / bc1;
      double vhat = v.v[i] / bc2;
      p.v[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps_adam);
    }
  };
  adam_one(out.embedding, grads.embedding, state.m.embedding, state.v.embedding);
  adam_one(out.enc_w, grads.enc_w, state.m.enc_w, state.v.enc_w);
  adam_one(out.enc_b, grads.enc_b, state.m.enc_b, state.v.enc_b);
  adam_one(out.dec_w, grads.dec_w, state.m.dec_w, state.v.dec_w);
  adam_one(out.dec_b, grads.dec_b, state.m.dec_b, state.v.dec_b);
  adam_one(out.out_w, grads.out_w, state.m.out_w, state.v.out_w);
  adam_one(out.out_b, grads.out_b, state.m.out_b, state.v.out_b);
  return {std::move(out), std::move(state)};
}

}  // namespace adpo
