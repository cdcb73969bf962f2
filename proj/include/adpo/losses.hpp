#pragma once

// The objective family: supervised fine-tuning, the adversarial reference
// objective (toward + alpha * utility at the worst-case perturbation), and
// the preference losses. One preference-loss implementation covers all four
// variants; which reference parameters are passed and whether a perturbation
// is applied determine the variant:
//
//   dpo     vanilla reference, no perturbation
//   ar-dpo  adversarial reference, no perturbation
//   at-dpo  vanilla reference, perturbed policy inputs
//   adpo    adversarial reference, perturbed policy inputs
//
// Reference likelihoods are constants (no gradient), as is the perturbation:
// gradients flow through the policy at the perturbed point only.

#include <optional>
#include <string>

#include "adpo/dataset.hpp"
#include "adpo/model.hpp"
#include "adpo/perturb.hpp"

namespace adpo {

enum class Variant { sft, dpo, ar_dpo, at_dpo, adpo };
enum class LossSpace { image, latent, none };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::sft: return "sft";
    case Variant::dpo: return "dpo";
    case Variant::ar_dpo: return "ar-dpo";
    case Variant::at_dpo: return "at-dpo";
    case Variant::adpo: return "adpo";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "sft") return Variant::sft;
  if (s == "dpo") return Variant::dpo;
  if (s == "ar-dpo") return Variant::ar_dpo;
  if (s == "at-dpo") return Variant::at_dpo;
  if (s == "adpo") return Variant::adpo;
  throw std::invalid_argument("unknown variant '" + s + "' (expected sft|dpo|ar-dpo|at-dpo|adpo)");
}

inline std::string to_string(LossSpace s) {
  switch (s) {
    case LossSpace::image: return "image";
    case LossSpace::latent: return "latent";
    case LossSpace::none: return "none";
  }
  return "?";
}

inline LossSpace loss_space_from_string(const std::string& s) {
  if (s == "image") return LossSpace::image;
  if (s == "latent") return LossSpace::latent;
  if (s == "none") return LossSpace::none;
  throw std::invalid_argument("unknown perturb_space '" + s + "' (expected image|latent|none)");
}

inline bool variant_uses_perturbation(Variant v) {
  return v == Variant::at_dpo || v == Variant::adpo;
}

struct LossCfg {
  double alpha = 30.0;
  double beta = 0.1;
  Variant variant = Variant::dpo;
  LossSpace perturb_space = LossSpace::none;

  void validate() const {
    if (!(beta > 0.0)) throw std::invalid_argument("loss: beta must be > 0");
    if (alpha < 0.0) throw std::invalid_argument("loss: alpha must be >= 0");
    bool wants = variant_uses_perturbation(variant);
    if (wants && perturb_space == LossSpace::none)
      throw std::invalid_argument("loss: variant " + to_string(variant) +
                                  " requires perturb_space image or latent");
    if (!wants && perturb_space != LossSpace::none)
      throw std::invalid_argument("loss: variant " + to_string(variant) +
                                  " requires perturb_space none");
  }
};

struct LossComponents {
  double toward = 0.0;
  double utility = 0.0;
  double dpo_argument = 0.0;
  double perturb_objective = 0.0;
};

struct LossValue {
  double total = 0.0;
  LossComponents components;
};

struct LossGrads {
  LossValue value;
  ParamGrads grads;
};

// -log(sigmoid(a)), overflow-safe for any finite argument.
inline double neg_log_sigmoid(double a) { return ten::softplus_scalar(-a); }

inline double dpo_argument(double lp_p, double lp_ref_p, double lp_r, double lp_ref_r,
                           double beta) {
  return beta * ((lp_p - lp_ref_p) - (lp_r - lp_ref_r));
}

namespace detail {

struct NllGraph {
  GradGraph g;
  ParamNodes pn;
  NodeId total = -1;
};

// -loglik(y_p) with parameters as leaves.
inline LossGrads nll_grad(const ToyVlmParams& params, const Query& query, const Response& resp) {
  validate_query(params.dims, query);
  GradGraph g;
  ParamNodes pn = add_params(g, params, true);
  NodeId latent = build_latent(g, pn, params.dims, g.constant(Tensor::column(query.image)), query.text);
  NodeId lp = build_response_loglik(g, pn, params.dims, latent, resp);
  NodeId total = g.scale(lp, -1.0);
  LossGrads out;
  out.value.total = g.value(total).v[0];
  out.grads = collect_param_grads(g.backward(total), pn);
  return out;
}

}  // namespace detail

inline LossValue sft_loss(const ToyVlmParams& params, const PreferenceExample& ex) {
  LossValue v;
  v.total = -loglik(params, ex.query, ex.y_p);
  v.components.toward = v.total;
  return v;
}

inline LossGrads sft_loss_grad(const ToyVlmParams& params, const PreferenceExample& ex) {
  LossGrads out = detail::nll_grad(params, ex.query, ex.y_p);
  out.value.components.toward = out.value.total;
  return out;
}

// Worst-case search against y_r in the configured space.
inline Perturbation attack_example(const ToyVlmParams& params, const PreferenceExample& ex,
                                   const PerturbCfg& pcfg) {
  if (pcfg.space == Space::image) return pgd_image(params, ex.query, ex.y_r, pcfg);
  return pgd_latent(params, ex.query, ex.y_r, pcfg);
}

// -log p(y_p | perturbed input); gradients flow through the model at the
// perturbed point, not through the perturbation search.
inline LossGrads toward_loss_grad(const ToyVlmParams& params, const PreferenceExample& ex,
                                  const PerturbCfg& pcfg, Perturbation* delta_out = nullptr) {
  Perturbation delta = attack_example(params, ex, pcfg);
  LossGrads out;
  if (pcfg.space == Space::image) {
    Query attacked{apply_image_delta(ex.query.image, delta.delta), ex.query.text};
    out = detail::nll_grad(params, attacked, ex.y_p);
  } else {
    GradGraph g;
    ParamNodes pn = add_params(g, params, true);
    NodeId latent = build_latent(g, pn, params.dims, g.constant(Tensor::column(ex.query.image)),
                                 ex.query.text);
    NodeId perturbed = g.add(latent, g.constant(delta.delta));
    NodeId lp = build_response_loglik(g, pn, params.dims, perturbed, ex.y_p);
    NodeId total = g.scale(lp, -1.0);
    out.value.total = g.value(total).v[0];
    out.grads = collect_param_grads(g.backward(total), pn);
  }
  out.value.components.toward = out.value.total;
  out.value.components.perturb_objective = delta.achieved_objective;
  if (delta_out) *delta_out = std::move(delta);
  return out;
}

inline LossGrads adversarial_ref_loss_grad(const ToyVlmParams& params,
                                           const PreferenceExample& harmful,
                                           const PreferenceExample& utility, const LossCfg& cfg,
                                           const PerturbCfg& pcfg) {
  if (!(cfg.alpha >= 0.0)) throw std::invalid_argument("loss: alpha must be >= 0");
  LossGrads toward = toward_loss_grad(params, harmful, pcfg);
  LossGrads util = detail::nll_grad(params, utility.query, utility.y_p);
  LossGrads out;
  out.value.components.toward = toward.value.total;
  out.value.components.utility = util.value.total;
  out.value.components.perturb_objective = toward.value.components.perturb_objective;
  out.value.total = toward.value.total + cfg.alpha * util.value.total;
  out.grads = toward.grads;
  axpy(out.grads, util.grads, cfg.alpha);
  return out;
}

inline LossValue adversarial_ref_loss(const ToyVlmParams& params, const PreferenceExample& harmful,
                                      const PreferenceExample& utility, const LossCfg& cfg,
                                      const PerturbCfg& pcfg) {
  return adversarial_ref_loss_grad(params, harmful, utility, cfg, pcfg).value;
}

namespace detail {

inline LossGrads dpo_loss_impl(const ToyVlmParams& params, const ToyVlmParams& ref,
                               const PreferenceExample& ex, const LossCfg& cfg,
                               const Perturbation* delta, bool with_grads) {
  cfg.validate();
  bool wants = variant_uses_perturbation(cfg.variant);
  if (wants && !delta)
    throw std::invalid_argument("dpo_loss: variant " + to_string(cfg.variant) +
                                " requires a perturbation");
  if (!wants && delta)
    throw std::invalid_argument("dpo_loss: variant " + to_string(cfg.variant) +
                                " takes no perturbation");
  if (ex.y_r.empty()) throw std::invalid_argument("dpo_loss: example has no rejected response");

  // Reference likelihoods on clean inputs, treated as constants.
  double lp_ref_p = loglik(ref, ex.query, ex.y_p);
  double lp_ref_r = loglik(ref, ex.query, ex.y_r);

  GradGraph g;
  ParamNodes pn = add_params(g, params, with_grads);
  NodeId latent;
  if (delta && cfg.perturb_space == LossSpace::image) {
    if (delta->space != Space::image)
      throw std::invalid_argument("dpo_loss: perturbation space does not match cfg");
    Query attacked{apply_image_delta(ex.query.image, delta->delta), ex.query.text};
    validate_query(params.dims, attacked);
    latent = build_latent(g, pn, params.dims, g.constant(Tensor::column(attacked.image)),
                          attacked.text);
  } else {
    validate_query(params.dims, ex.query);
    latent = build_latent(g, pn, params.dims, g.constant(Tensor::column(ex.query.image)),
                          ex.query.text);
    if (delta && cfg.perturb_space == LossSpace::latent) {
      if (delta->space != Space::latent)
        throw std::invalid_argument("dpo_loss: perturbation space does not match cfg");
      latent = g.add(latent, g.constant(delta->delta));
    }
  }
  NodeId lp_p = build_response_loglik(g, pn, params.dims, latent, ex.y_p);
  NodeId lp_r = build_response_loglik(g, pn, params.dims, latent, ex.y_r);
  NodeId margin = g.sub(g.sub(lp_p, g.constant(Tensor::scalar(lp_ref_p))),
                        g.sub(lp_r, g.constant(Tensor::scalar(lp_ref_r))));
  NodeId argument = g.scale(margin, cfg.beta);
  NodeId total = g.softplus(g.scale(argument, -1.0));

  LossGrads out;
  out.value.total = g.value(total).v[0];
  out.value.components.dpo_argument = g.value(argument).v[0];
  if (delta) out.value.components.perturb_objective = delta->achieved_objective;
  if (with_grads) out.grads = collect_param_grads(g.backward(total), pn);
  return out;
}

}  // namespace detail

inline LossValue dpo_loss(const ToyVlmParams& params, const ToyVlmParams& ref,
                          const PreferenceExample& ex, const LossCfg& cfg,
                          const Perturbation* delta = nullptr) {
  return detail::dpo_loss_impl(params, ref, ex, cfg, delta, false).value;
}

inline LossGrads dpo_loss_grad(const ToyVlmParams& params, const ToyVlmParams& ref,
                               const PreferenceExample& ex, const LossCfg& cfg,
                               const Perturbation* delta = nullptr) {
  return detail::dpo_loss_impl(params, ref, ex, cfg, delta, true);
}

}  // namespace adpo
