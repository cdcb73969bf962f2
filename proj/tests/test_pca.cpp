#include <catch2/catch_amalgamated.hpp>

#include "adpo/pca.hpp"
#include "common.hpp"
#include "oracles.hpp"

using namespace adpo;

namespace {

Tensor rows_from(const std::vector<std::vector<double>>& data) {
  Tensor t(static_cast<int>(data.size()), static_cast<int>(data[0].size()));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < data[i].size(); ++j)
      t.at(static_cast<int>(i), static_cast<int>(j)) = data[i][j];
  return t;
}

Tensor sample_covariance(const Tensor& rows) {
  int n = rows.rows, d = rows.cols;
  std::vector<double> mean(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[j] += rows.at(i, j) / n;
  Tensor cov(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += (rows.at(i, a) - mean[a]) * (rows.at(i, b) - mean[b]);
      cov.at(a, b) = acc / (n - 1);
    }
  return cov;
}

}  // namespace

TEST_CASE("collect_hidden shapes and purity", "[pca]") {
  Dims d = testing_util::small_dims();
  ToyVlmParams p = init_params(60, d);
  Rng rng(61);

  SECTION("one query gives a 1 x d matrix") {
    Query q = testing_util::random_query(rng, d, 2);
    HiddenMatrix h = collect_hidden(p, {q}, {QueryGroup::eval_clean});
    REQUIRE(h.rows.rows == 1);
    REQUIRE(h.rows.cols == d.embed);
  }

  SECTION("duplicate queries give identical rows") {
    Query q = testing_util::random_query(rng, d, 2);
    HiddenMatrix h =
        collect_hidden(p, {q, q}, {QueryGroup::eval_clean, QueryGroup::eval_attacked});
    for (int j = 0; j < d.embed; ++j) REQUIRE(h.rows.at(0, j) == h.rows.at(1, j));
  }

  SECTION("zero image and empty text give a zero row") {
    Query q;
    q.image.assign(d.pixels, 0.0);
    HiddenMatrix h = collect_hidden(p, {q}, {QueryGroup::harmless_anchor});
    for (int j = 0; j < d.embed; ++j) REQUIRE(h.rows.at(0, j) == 0.0);
  }

  SECTION("invalid query is rejected with its index") {
    Query good = testing_util::random_query(rng, d, 1);
    Query bad = good;
    bad.image[0] = 2.0;
    REQUIRE_THROWS_WITH(
        collect_hidden(p, {good, bad}, {QueryGroup::eval_clean, QueryGroup::eval_clean}),
        Catch::Matchers::ContainsSubstring("query 1"));
  }
}

TEST_CASE("pca analytic cases", "[pca]") {
  SECTION("collinear data along (1,1)") {
    double s = 1.0 / std::sqrt(2.0);
    Tensor rows = rows_from({{-s, -s}, {0.0, 0.0}, {s, s}, {2 * s, 2 * s}});
    PcaResult res = pca_top2(rows);
    REQUIRE_THAT(res.pc1.v[0], Catch::Matchers::WithinAbs(s, 1e-10));
    REQUIRE_THAT(res.pc1.v[1], Catch::Matchers::WithinAbs(s, 1e-10));
    REQUIRE_THAT(res.ratio1, Catch::Matchers::WithinAbs(1.0, 1e-10));
    REQUIRE_THAT(res.ratio2, Catch::Matchers::WithinAbs(0.0, 1e-12));
  }

  SECTION("axis-aligned symmetric points") {
    Tensor rows = rows_from({{1.0, 0.0}, {-1.0, 0.0}, {1.0, 0.0}, {-1.0, 0.0}});
    PcaResult res = pca_top2(rows);
    REQUIRE_THAT(res.pc1.v[0], Catch::Matchers::WithinAbs(1.0, 1e-10));
    REQUIRE_THAT(res.pc1.v[1], Catch::Matchers::WithinAbs(0.0, 1e-10));
    REQUIRE_THAT(res.pc2.v[0], Catch::Matchers::WithinAbs(0.0, 1e-10));
    REQUIRE_THAT(res.pc2.v[1], Catch::Matchers::WithinAbs(1.0, 1e-10));
  }

  SECTION("identical rows are rejected as zero variance") {
    Tensor rows = rows_from({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}});
    REQUIRE_THROWS_WITH(pca_top2(rows), Catch::Matchers::ContainsSubstring("zero variance"));
  }

  SECTION("preconditions") {
    REQUIRE_THROWS_AS(pca_top2(rows_from({{1.0, 2.0}, {3.0, 4.0}})), std::invalid_argument);
    REQUIRE_THROWS_AS(pca_top2(rows_from({{1.0}, {2.0}, {3.0}})), std::invalid_argument);
  }
}

TEST_CASE("power iteration matches the closed-form 3x3 eigenvalues", "[pca][oracle]") {
  Rng rng(62);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor rows(8, 3);
    for (double& x : rows.v) x = rng.uniform(-2.0, 2.0);
    PcaResult res = pca_top2(rows);
    Tensor cov = sample_covariance(rows);
    auto eig = oracles::sym3x3_eigenvalues(cov);
    double total = cov.at(0, 0) + cov.at(1, 1) + cov.at(2, 2);
    REQUIRE_THAT(res.ratio1, Catch::Matchers::WithinAbs(eig[0] / total, 1e-8));
    REQUIRE_THAT(res.ratio2, Catch::Matchers::WithinAbs(eig[1] / total, 1e-8));
    REQUIRE(res.ratio1 >= res.ratio2);
  }
}

TEST_CASE("pca structural invariants", "[pca]") {
  Rng rng(63);
  Tensor rows(20, 5);
  for (double& x : rows.v) x = rng.uniform(-1.0, 1.0);
  PcaResult res = pca_top2(rows);

  SECTION("components are orthonormal") {
    REQUIRE_THAT(ten::norm2(res.pc1), Catch::Matchers::WithinAbs(1.0, 1e-8));
    REQUIRE_THAT(ten::norm2(res.pc2), Catch::Matchers::WithinAbs(1.0, 1e-8));
    REQUIRE_THAT(ten::dot(res.pc1, res.pc2), Catch::Matchers::WithinAbs(0.0, 1e-8));
  }

  SECTION("projections of the fitted rows are centered") {
    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < res.projections.rows; ++i) {
      m1 += res.projections.at(i, 0);
      m2 += res.projections.at(i, 1);
    }
    REQUIRE_THAT(m1 / res.projections.rows, Catch::Matchers::WithinAbs(0.0, 1e-9));
    REQUIRE_THAT(m2 / res.projections.rows, Catch::Matchers::WithinAbs(0.0, 1e-9));
  }

  SECTION("variance along PC1 dominates PC2") {
    double v1 = 0.0, v2 = 0.0;
    for (int i = 0; i < res.projections.rows; ++i) {
      v1 += res.projections.at(i, 0) * res.projections.at(i, 0);
      v2 += res.projections.at(i, 1) * res.projections.at(i, 1);
    }
    REQUIRE(v1 >= v2);
  }

  SECTION("explained-variance ratios are rotation equivariant") {
    // fixed rotation: Givens in (0,1) then (2,4)
    double c1 = std::cos(0.7), s1 = std::sin(0.7), c2 = std::cos(-1.2), s2 = std::sin(-1.2);
    Tensor rotated = rows;
    for (int i = 0; i < rows.rows; ++i) {
      double a = rows.at(i, 0), b = rows.at(i, 1);
      rotated.at(i, 0) = c1 * a - s1 * b;
      rotated.at(i, 1) = s1 * a + c1 * b;
      double e = rotated.at(i, 2), f = rotated.at(i, 4);
      rotated.at(i, 2) = c2 * e - s2 * f;
      rotated.at(i, 4) = s2 * e + c2 * f;
    }
    PcaResult rot = pca_top2(rotated);
    REQUIRE_THAT(rot.ratio1, Catch::Matchers::WithinAbs(res.ratio1, 1e-8));
    REQUIRE_THAT(rot.ratio2, Catch::Matchers::WithinAbs(res.ratio2, 1e-8));
  }

  SECTION("external rows project into the fitted frame") {
    Tensor extra(4, 5);
    for (double& x : extra.v) x = rng.uniform(-1.0, 1.0);
    Tensor proj = pca_project(res, extra);
    REQUIRE(proj.rows == 4);
    REQUIRE(proj.cols == 2);
    for (int i = 0; i < 4; ++i) {
      double want1 = 0.0, want2 = 0.0;
      for (int j = 0; j < 5; ++j) {
        want1 += (extra.at(i, j) - res.mean.v[j]) * res.pc1.v[j];
        want2 += (extra.at(i, j) - res.mean.v[j]) * res.pc2.v[j];
      }
      REQUIRE_THAT(proj.at(i, 0), Catch::Matchers::WithinAbs(want1, 1e-12));
      REQUIRE_THAT(proj.at(i, 1), Catch::Matchers::WithinAbs(want2, 1e-12));
    }
  }
}

TEST_CASE("cluster geometry", "[pca]") {
  using G = QueryGroup;

  SECTION("one shared point collapses every distance") {
    Tensor proj = rows_from({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}});
    ClusterGeometry geo = cluster_geometry(
        proj, {G::harmful_anchor, G::harmless_anchor, G::eval_clean, G::eval_attacked});
    for (const auto& row : geo.distances)
      for (double x : row) REQUIRE(x == 0.0);
    REQUIRE(geo.key_scalar == 0.0);
  }

  SECTION("hand-placed centroids match Euclidean arithmetic") {
    Tensor proj = rows_from({{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}});
    ClusterGeometry geo = cluster_geometry(
        proj, {G::harmful_anchor, G::harmless_anchor, G::eval_clean, G::eval_attacked});
    auto idx = [](G g) { return static_cast<std::size_t>(g); };
    REQUIRE_THAT(geo.distances[idx(G::harmful_anchor)][idx(G::harmless_anchor)],
                 Catch::Matchers::WithinAbs(1.0, 1e-15));
    REQUIRE_THAT(geo.distances[idx(G::harmful_anchor)][idx(G::eval_attacked)],
                 Catch::Matchers::WithinAbs(std::sqrt(2.0), 1e-15));
    REQUIRE_THAT(geo.distances[idx(G::eval_clean)][idx(G::eval_attacked)],
                 Catch::Matchers::WithinAbs(1.0, 1e-15));
    // key scalar: d(attacked, harmful) - d(attacked, harmless)
    REQUIRE_THAT(geo.key_scalar, Catch::Matchers::WithinAbs(std::sqrt(2.0) - 1.0, 1e-15));
  }

  SECTION("attacked centroid on the harmful anchor gives minus the anchor gap") {
    Tensor proj = rows_from({{2.0, 3.0}, {-1.0, 0.5}, {0.0, 0.0}, {2.0, 3.0}});
    ClusterGeometry geo = cluster_geometry(
        proj, {G::harmful_anchor, G::harmless_anchor, G::eval_clean, G::eval_attacked});
    auto idx = [](G g) { return static_cast<std::size_t>(g); };
    REQUIRE(geo.key_scalar ==
            -geo.distances[idx(G::harmful_anchor)][idx(G::harmless_anchor)]);
  }

  SECTION("an empty group is named in the error") {
    Tensor proj = rows_from({{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}});
    REQUIRE_THROWS_WITH(
        cluster_geometry(proj, {G::harmful_anchor, G::harmless_anchor, G::eval_clean}),
        Catch::Matchers::ContainsSubstring("eval-attacked"));
  }
}
