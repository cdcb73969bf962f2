#pragma once

// Representation analysis: pooled context vectors for labelled query groups,
// top-2 PCA by power iteration with deflation, and cluster geometry in the
// projected plane. The basis is fit on the anchor groups only; evaluation
// groups are projected into that fixed frame.

#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adpo/errors.hpp"
#include "adpo/model.hpp"
#include "adpo/rng.hpp"
#include "adpo/trainer.hpp"

namespace adpo {

enum class QueryGroup { harmful_anchor, harmless_anchor, eval_clean, eval_attacked };

constexpr std::array<QueryGroup, 4> kAllGroups{QueryGroup::harmful_anchor,
                                               QueryGroup::harmless_anchor,
                                               QueryGroup::eval_clean, QueryGroup::eval_attacked};

inline std::string to_string(QueryGroup g) {
  switch (g) {
    case QueryGroup::harmful_anchor: return "harmful-anchor";
    case QueryGroup::harmless_anchor: return "harmless-anchor";
    case QueryGroup::eval_clean: return "eval-clean";
    case QueryGroup::eval_attacked: return "eval-attacked";
  }
  return "?";
}

struct HiddenMatrix {
  Tensor rows;  // n x d pooled context vectors
  std::vector<QueryGroup> labels;
};

inline HiddenMatrix collect_hidden(const ToyVlmParams& params, const std::vector<Query>& queries,
                                   const std::vector<QueryGroup>& labels) {
  if (queries.empty() || queries.size() != labels.size())
    throw std::invalid_argument("collect_hidden: need equally many queries and labels (>= 1)");
  HiddenMatrix out;
  out.rows = Tensor(static_cast<int>(queries.size()), params.dims.embed);
  out.labels = labels;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    Tensor context;
    try {
      context = ten::mean_rows(encode(params, queries[i]));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("collect_hidden: query " + std::to_string(i) + ": " + e.what());
    }
    for (int j = 0; j < params.dims.embed; ++j) out.rows.at(static_cast<int>(i), j) = context.v[j];
  }
  return out;
}

struct PcaResult {
  Tensor mean;         // d x 1
  Tensor pc1, pc2;     // d x 1, unit norm, orthogonal
  Tensor projections;  // n x 2 for the rows the basis was fit on
  double ratio1 = 0.0, ratio2 = 0.0;
};

namespace detail {

inline void fix_sign(Tensor& v) {
  for (double x : v.v) {
    if (x != 0.0) {
      if (x < 0.0)
        for (double& y : v.v) y = -y;
      return;
    }
  }
}

inline void orthogonalize(Tensor& v, const Tensor& against) {
  double d = ten::dot(v, against);
  for (int i = 0; i < v.size(); ++i) v.v[i] -= d * against.v[i];
}

// Largest eigenpair of the symmetric matrix `cov`, orthogonal to `against`
// when given. Deterministic seeded start.
inline std::pair<double, Tensor> power_iterate(const Tensor& cov, const Tensor* against,
                                               double tol, int max_iters) {
  int d = cov.rows;
  Rng rng(derive_seed(0x50CA, "pca-power"));
  Tensor v(d, 1);
  for (double& x : v.v) x = rng.uniform(-1.0, 1.0);
  if (against) orthogonalize(v, *against);
  double n = ten::norm2(v);
  if (n < 1e-12) {
    // Start vector collapsed onto the excluded direction: complete the basis
    // from the axis least aligned with it.
    int best = 0;
    for (int i = 1; i < d; ++i)
      if (std::abs(against->v[i]) < std::abs(against->v[best])) best = i;
    v = Tensor(d, 1);
    v.v[best] = 1.0;
    orthogonalize(v, *against);
    n = ten::norm2(v);
  }
  for (double& x : v.v) x /= n;

  double residual = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Tensor w = ten::matvec(cov, v);
    if (against) orthogonalize(w, *against);
    double wn = ten::norm2(w);
    if (wn < 1e-300) return {0.0, v};  // deflated matrix vanished in this subspace
    for (double& x : w.v) x /= wn;
    residual = 0.0;
    for (int i = 0; i < d; ++i) residual = std::max(residual, std::abs(w.v[i] - v.v[i]));
    v = std::move(w);
    if (residual <= tol) {
      Tensor cv = ten::matvec(cov, v);
      return {ten::dot(v, cv), v};
    }
  }
  throw AnalysisError("pca: power iteration did not converge (residual " +
                      format_double(residual) + " after " + std::to_string(max_iters) +
                      " iterations)");
}

}  // namespace detail

inline Tensor pca_project(const PcaResult& pca, const Tensor& rows) {
  if (rows.cols != pca.mean.rows)
    throw std::invalid_argument("pca_project: rows have " + std::to_string(rows.cols) +
                                " columns, basis has " + std::to_string(pca.mean.rows));
  Tensor out(rows.rows, 2);
  for (int i = 0; i < rows.rows; ++i) {
    double p1 = 0.0, p2 = 0.0;
    for (int j = 0; j < rows.cols; ++j) {
      double c = rows.at(i, j) - pca.mean.v[j];
      p1 += c * pca.pc1.v[j];
      p2 += c * pca.pc2.v[j];
    }
    out.at(i, 0) = p1;
    out.at(i, 1) = p2;
  }
  return out;
}

inline PcaResult pca_top2(const Tensor& rows, double tol = 1e-10, int max_iters = 10000) {
  if (rows.rows < 3) throw std::invalid_argument("pca_top2: need at least 3 rows");
  if (rows.cols < 2) throw std::invalid_argument("pca_top2: need at least 2 columns");
  const int n = rows.rows, d = rows.cols;

  PcaResult res;
  res.mean = Tensor(d, 1);
  for (int j = 0; j < d; ++j) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += rows.at(i, j);
    res.mean.v[j] = acc / n;
  }

  Tensor centered(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) centered.at(i, j) = rows.at(i, j) - res.mean.v[j];

  // Sample covariance.
  Tensor cov(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += centered.at(i, a) * centered.at(i, b);
      acc /= (n - 1);
      cov.at(a, b) = acc;
      cov.at(b, a) = acc;
    }

  double total = 0.0;
  for (int a = 0; a < d; ++a) total += cov.at(a, a);
  if (total == 0.0) throw AnalysisError("pca: zero variance (all rows identical)");

  auto [l1, v1] = detail::power_iterate(cov, nullptr, tol, max_iters);
  auto [l2, v2] = detail::power_iterate(cov, &v1, tol, max_iters);
  detail::fix_sign(v1);
  detail::fix_sign(v2);
  res.pc1 = std::move(v1);
  res.pc2 = std::move(v2);
  res.ratio1 = std::max(0.0, l1) / total;
  res.ratio2 = std::max(0.0, l2) / total;
  res.projections = pca_project(res, rows);
  return res;
}

struct ClusterGeometry {
  std::array<std::array<double, 2>, 4> centroids{};          // indexed by kAllGroups order
  std::array<std::array<double, 4>, 4> distances{};          // pairwise centroid distances
  double key_scalar = 0.0;  // d(attacked, harmful-anchor) - d(attacked, harmless-anchor)
};

inline ClusterGeometry cluster_geometry(const Tensor& projections,
                                        const std::vector<QueryGroup>& labels) {
  if (projections.rows != static_cast<int>(labels.size()) || projections.cols != 2)
    throw std::invalid_argument("cluster_geometry: projections must be n x 2 with n labels");
  ClusterGeometry out;
  std::array<int, 4> counts{};
  for (int i = 0; i < projections.rows; ++i) {
    auto g = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
    out.centroids[g][0] += projections.at(i, 0);
    out.centroids[g][1] += projections.at(i, 1);
    ++counts[g];
  }
  for (std::size_t g = 0; g < 4; ++g) {
    if (counts[g] == 0)
      throw std::invalid_argument("cluster_geometry: empty group '" +
                                  to_string(kAllGroups[g]) + "'");
    out.centroids[g][0] /= counts[g];
    out.centroids[g][1] /= counts[g];
  }
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b)
      out.distances[a][b] = std::hypot(out.centroids[a][0] - out.centroids[b][0],
                                       out.centroids[a][1] - out.centroids[b][1]);
  auto idx = [](QueryGroup g) { return static_cast<std::size_t>(g); };
  out.key_scalar = out.distances[idx(QueryGroup::eval_attacked)][idx(QueryGroup::harmful_anchor)] -
                   out.distances[idx(QueryGroup::eval_attacked)][idx(QueryGroup::harmless_anchor)];
  return out;
}

inline void write_pca_csv(const Tensor& projections, const std::vector<QueryGroup>& labels,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("pca: cannot open '" + path + "' for writing");
  out << "label,pc1,pc2\n";
  for (int i = 0; i < projections.rows; ++i)
    out << to_string(labels[static_cast<std::size_t>(i)]) << ","
        << format_double(projections.at(i, 0)) << "," << format_double(projections.at(i, 1))
        << "\n";
}

inline nlohmann::json cluster_geometry_to_json(const ClusterGeometry& geo) {
  nlohmann::json centroids, distances;
  for (std::size_t g = 0; g < 4; ++g) {
    centroids[to_string(kAllGroups[g])] = {geo.centroids[g][0], geo.centroids[g][1]};
    nlohmann::json row;
    for (std::size_t h = 0; h < 4; ++h) row[to_string(kAllGroups[h])] = geo.distances[g][h];
    distances[to_string(kAllGroups[g])] = row;
  }
  return nlohmann::json{
      {"centroids", centroids}, {"distances", distances}, {"key_scalar", geo.key_scalar}};
}

}  // namespace adpo
