#pragma once

// Worst-case perturbation search. Sign-PGD (or normalized-gradient PGD for
// l2) maximizes the log-likelihood of a target response, starting from
// delta = 0 and tracking the best iterate, so the returned objective can
// never fall below the clean one. Projections are exact: after every call
// the norm constraint holds with no tolerance, and in image space every
// perturbed pixel lies in [0,1] under plain double addition.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "adpo/model.hpp"

namespace adpo {

enum class Norm { infinity, l2 };
enum class Space { image, latent };

inline std::string to_string(Norm n) { return n == Norm::infinity ? "infinity" : "l2"; }
inline std::string to_string(Space s) { return s == Space::image ? "image" : "latent"; }

inline Norm norm_from_string(const std::string& s) {
  if (s == "infinity" || s == "inf") return Norm::infinity;
  if (s == "l2") return Norm::l2;
  throw std::invalid_argument("unknown norm '" + s + "' (expected infinity|l2)");
}

inline Space space_from_string(const std::string& s) {
  if (s == "image") return Space::image;
  if (s == "latent") return Space::latent;
  throw std::invalid_argument("unknown space '" + s + "' (expected image|latent)");
}

struct PerturbCfg {
  double epsilon = 0.1;
  double step_size = 0.02;
  int iters = 10;
  Norm norm = Norm::infinity;
  Space space = Space::image;
  std::uint64_t seed = 0;

  void validate() const {
    if (epsilon < 0.0) throw std::invalid_argument("perturb: epsilon must be >= 0");
    if (step_size <= 0.0) throw std::invalid_argument("perturb: step_size must be > 0");
    if (iters < 0) throw std::invalid_argument("perturb: iters must be >= 0");
  }
};

struct Perturbation {
  Space space = Space::image;
  Norm norm = Norm::infinity;
  double epsilon = 0.0;
  Tensor delta;
  double achieved_objective = 0.0;
  double clean_objective = 0.0;
  std::vector<double> iterate_trace;
};

namespace detail {

// Shrink delta until ||delta||_2 <= radius holds exactly under the same
// floating-point norm computation a checker would use.
inline void clamp_l2(Tensor& delta, double radius) {
  double n = ten::norm2(delta);
  if (n <= radius || n == 0.0) return;
  double s = radius / n;
  for (double& x : delta.v) x *= s;
  while (ten::norm2(delta) > radius)
    for (double& x : delta.v) x = std::nextafter(x, 0.0);
}

inline void clamp_inf(Tensor& delta, double radius) {
  for (double& x : delta.v) x = std::min(std::max(x, -radius), radius);
}

// Norm ball first, then the per-coordinate box [lo, hi] (which contains 0).
// nextafter fix-ups guarantee pixel + delta lands in [0,1] under plain
// addition; they only move coordinates toward zero, so the norm bound is
// preserved.
inline void project_image(Tensor& delta, const std::vector<double>& lo,
                          const std::vector<double>& hi,
                          const std::vector<const std::vector<double>*>& images, double epsilon,
                          Norm norm) {
  if (norm == Norm::infinity)
    clamp_inf(delta, epsilon);
  else
    clamp_l2(delta, epsilon);
  for (int j = 0; j < delta.size(); ++j)
    delta.v[j] = std::min(std::max(delta.v[j], lo[j]), hi[j]);
  for (const auto* img : images) {
    for (int j = 0; j < delta.size(); ++j) {
      while ((*img)[j] + delta.v[j] > 1.0) delta.v[j] = std::nextafter(delta.v[j], -2.0);
      while ((*img)[j] + delta.v[j] < 0.0) delta.v[j] = std::nextafter(delta.v[j], 2.0);
    }
  }
  if (norm == Norm::l2) clamp_l2(delta, epsilon);
}

inline void ascend(Tensor& delta, const Tensor& grad, double step, Norm norm) {
  if (norm == Norm::infinity) {
    for (int i = 0; i < delta.size(); ++i) {
      double g = grad.v[i];
      delta.v[i] += step * (g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0));
    }
  } else {
    double n = ten::norm2(grad);
    if (n > 0.0)
      for (int i = 0; i < delta.size(); ++i) delta.v[i] += step * grad.v[i] / n;
  }
}

inline void require_finite_step(const Tensor& grad, double objective, int iter) {
  if (!std::isfinite(objective))
    throw std::runtime_error("pgd: non-finite objective at iteration " + std::to_string(iter));
  if (!grad.all_finite())
    throw std::runtime_error("pgd: non-finite gradient at iteration " + std::to_string(iter));
}

}  // namespace detail

// Effective l2 radius for a latent perturbation: the configured epsilon is
// interpreted per-coordinate and scaled to the sequence size.
inline double latent_radius(const PerturbCfg& cfg, int rows, int cols) {
  if (cfg.norm == Norm::l2) return cfg.epsilon * std::sqrt(static_cast<double>(rows) * cols);
  return cfg.epsilon;
}

inline Perturbation pgd_image(const ToyVlmParams& params, const Query& query,
                              const Response& target, const PerturbCfg& cfg) {
  cfg.validate();
  if (cfg.space != Space::image)
    throw std::invalid_argument("pgd_image: cfg.space must be image");
  validate_query(params.dims, query);
  validate_response(params.dims, target);

  const int p = params.dims.pixels;
  std::vector<double> lo(p), hi(p);
  for (int j = 0; j < p; ++j) {
    lo[j] = -query.image[j];
    hi[j] = 1.0 - query.image[j];
  }

  auto eval = [&](const Tensor& delta, Tensor* grad_out) {
    GradGraph g;
    ParamNodes pn = add_params(g, params, false);
    std::vector<double> perturbed(query.image);
    for (int j = 0; j < p; ++j) perturbed[j] += delta.v[j];
    NodeId image = g.leaf(Tensor::column(perturbed));
    NodeId latent = build_latent(g, pn, params.dims, image, query.text);
    NodeId lp = build_response_loglik(g, pn, params.dims, latent, target);
    double value = g.value(lp).v[0];
    if (grad_out) *grad_out = g.backward(lp).at(image);
    return value;
  };

  Perturbation res;
  res.space = Space::image;
  res.norm = cfg.norm;
  res.epsilon = cfg.epsilon;
  res.delta = Tensor(p, 1);

  Tensor delta(p, 1);
  Tensor grad;
  double value = eval(delta, &grad);
  detail::require_finite_step(grad, value, 0);
  res.clean_objective = value;
  res.achieved_objective = value;
  res.iterate_trace.push_back(value);

  for (int t = 1; t <= cfg.iters; ++t) {
    detail::ascend(delta, grad, cfg.step_size, cfg.norm);
    detail::project_image(delta, lo, hi, {&query.image}, cfg.epsilon, cfg.norm);
    bool need_grad = t < cfg.iters;
    value = eval(delta, need_grad ? &grad : nullptr);
    if (need_grad) detail::require_finite_step(grad, value, t);
    if (!std::isfinite(value))
      throw std::runtime_error("pgd: non-finite objective at iteration " + std::to_string(t));
    res.iterate_trace.push_back(value);
    if (value > res.achieved_objective) {
      res.achieved_objective = value;
      res.delta = delta;
    }
  }
  return res;
}

inline Perturbation pgd_latent(const ToyVlmParams& params, const Query& query,
                               const Response& target, const PerturbCfg& cfg) {
  cfg.validate();
  if (cfg.space != Space::latent)
    throw std::invalid_argument("pgd_latent: cfg.space must be latent");
  validate_response(params.dims, target);

  const Tensor latent0 = encode(params, query);
  const double radius = latent_radius(cfg, latent0.rows, latent0.cols);

  auto eval = [&](const Tensor& delta, Tensor* grad_out) {
    GradGraph g;
    ParamNodes pn = add_params(g, params, false);
    NodeId latent = g.leaf(ten::add(latent0, delta));
    NodeId lp = build_response_loglik(g, pn, params.dims, latent, target);
    double value = g.value(lp).v[0];
    if (grad_out) *grad_out = g.backward(lp).at(latent);
    return value;
  };

  Perturbation res;
  res.space = Space::latent;
  res.norm = cfg.norm;
  res.epsilon = cfg.epsilon;
  res.delta = Tensor(latent0.rows, latent0.cols);

  Tensor delta(latent0.rows, latent0.cols);
  Tensor grad;
  double value = eval(delta, &grad);
  detail::require_finite_step(grad, value, 0);
  res.clean_objective = value;
  res.achieved_objective = value;
  res.iterate_trace.push_back(value);

  for (int t = 1; t <= cfg.iters; ++t) {
    detail::ascend(delta, grad, cfg.step_size, cfg.norm);
    if (cfg.norm == Norm::infinity)
      detail::clamp_inf(delta, radius);
    else
      detail::clamp_l2(delta, radius);
    bool need_grad = t < cfg.iters;
    value = eval(delta, need_grad ? &grad : nullptr);
    if (need_grad) detail::require_finite_step(grad, value, t);
    if (!std::isfinite(value))
      throw std::runtime_error("pgd: non-finite objective at iteration " + std::to_string(t));
    res.iterate_trace.push_back(value);
    if (value > res.achieved_objective) {
      res.achieved_objective = value;
      res.delta = delta;
    }
  }
  return res;
}

// One shared pattern maximizing the mean target log-likelihood over a set of
// queries. The box projection uses the tightest bounds valid for every query.
inline Perturbation universal_pgd(const ToyVlmParams& params, const std::vector<Query>& queries,
                                  const std::vector<Response>& targets, const PerturbCfg& cfg) {
  cfg.validate();
  if (cfg.space != Space::image)
    throw std::invalid_argument("universal_pgd: cfg.space must be image");
  if (queries.empty()) throw std::invalid_argument("universal_pgd: empty query set");
  if (queries.size() != targets.size())
    throw std::invalid_argument("universal_pgd: " + std::to_string(queries.size()) +
                                " queries vs " + std::to_string(targets.size()) + " targets");
  const int p = params.dims.pixels;
  std::vector<const std::vector<double>*> images;
  for (const Query& q : queries) {
    validate_query(params.dims, q);
    images.push_back(&q.image);
  }
  for (const Response& r : targets) validate_response(params.dims, r);

  std::vector<double> lo(p), hi(p);
  for (int j = 0; j < p; ++j) {
    double l = -queries[0].image[j], h = 1.0 - queries[0].image[j];
    for (const Query& q : queries) {
      l = std::max(l, -q.image[j]);
      h = std::min(h, 1.0 - q.image[j]);
    }
    lo[j] = l;
    hi[j] = h;
  }

  const double inv_n = 1.0 / static_cast<double>(queries.size());
  auto eval = [&](const Tensor& delta, Tensor* grad_out) {
    GradGraph g;
    ParamNodes pn = add_params(g, params, false);
    std::vector<NodeId> image_leaves;
    NodeId total = -1;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      std::vector<double> perturbed(queries[i].image);
      for (int j = 0; j < p; ++j) perturbed[j] += delta.v[j];
      NodeId image = g.leaf(Tensor::column(perturbed));
      image_leaves.push_back(image);
      NodeId latent = build_latent(g, pn, params.dims, image, queries[i].text);
      NodeId lp = build_response_loglik(g, pn, params.dims, latent, targets[i]);
      total = (total < 0) ? lp : g.add(total, lp);
    }
    NodeId objective = g.scale(total, inv_n);
    double value = g.value(objective).v[0];
    if (grad_out) {
      GradResult back = g.backward(objective);
      Tensor acc(p, 1);
      for (NodeId leafid : image_leaves) {
        const Tensor& gi = back.at(leafid);
        for (int j = 0; j < p; ++j) acc.v[j] += gi.v[j];
      }
      *grad_out = acc;
    }
    return value;
  };

  Perturbation res;
  res.space = Space::image;
  res.norm = cfg.norm;
  res.epsilon = cfg.epsilon;
  res.delta = Tensor(p, 1);

  Tensor delta(p, 1);
  Tensor grad;
  double value = eval(delta, &grad);
  detail::require_finite_step(grad, value, 0);
  res.clean_objective = value;
  res.achieved_objective = value;
  res.iterate_trace.push_back(value);

  for (int t = 1; t <= cfg.iters; ++t) {
    detail::ascend(delta, grad, cfg.step_size, cfg.norm);
    detail::project_image(delta, lo, hi, images, cfg.epsilon, cfg.norm);
    bool need_grad = t < cfg.iters;
    value = eval(delta, need_grad ? &grad : nullptr);
    if (need_grad) detail::require_finite_step(grad, value, t);
    if (!std::isfinite(value))
      throw std::runtime_error("pgd: non-finite objective at iteration " + std::to_string(t));
    res.iterate_trace.push_back(value);
    if (value > res.achieved_objective) {
      res.achieved_objective = value;
      res.delta = delta;
    }
  }
  return res;
}

inline std::vector<double> apply_image_delta(const std::vector<double>& image, const Tensor& delta) {
  if (static_cast<int>(image.size()) != delta.size())
    throw std::invalid_argument("apply_image_delta: image size " + std::to_string(image.size()) +
                                " vs delta " + delta.shape_str());
  std::vector<double> out(image);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += delta.v[j];
  return out;
}

inline nlohmann::json perturbation_to_json(const Perturbation& p) {
  return nlohmann::json{{"space", to_string(p.space)},
                        {"norm", to_string(p.norm)},
                        {"epsilon", p.epsilon},
                        {"rows", p.delta.rows},
                        {"cols", p.delta.cols},
                        {"delta", p.delta.v},
                        {"achieved_objective", p.achieved_objective},
                        {"clean_objective", p.clean_objective},
                        {"iterate_trace", p.iterate_trace}};
}

inline Perturbation perturbation_from_json(const nlohmann::json& j) {
  Perturbation p;
  p.space = space_from_string(j.at("space").get<std::string>());
  p.norm = norm_from_string(j.at("norm").get<std::string>());
  p.epsilon = j.at("epsilon").get<double>();
  p.delta.rows = j.at("rows").get<int>();
  p.delta.cols = j.at("cols").get<int>();
  p.delta.v = j.at("delta").get<std::vector<double>>();
  if (static_cast<int>(p.delta.v.size()) != p.delta.rows * p.delta.cols)
    throw std::invalid_argument("perturbation: delta size does not match shape");
  p.achieved_objective = j.at("achieved_objective").get<double>();
  p.clean_objective = j.at("clean_objective").get<double>();
  if (j.contains("iterate_trace")) p.iterate_trace = j.at("iterate_trace").get<std::vector<double>>();
  return p;
}

}  // namespace adpo
