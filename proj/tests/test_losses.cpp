#include <catch2/catch_amalgamated.hpp>

#include "adpo/losses.hpp"
#include "common.hpp"

using namespace adpo;
using testing_util::bits_equal;

namespace {

PreferenceExample random_harmful(Rng& rng, const Dims& d) {
  PreferenceExample e;
  e.harmful = true;
  e.query = testing_util::random_query(rng, d, 2);
  e.y_p = {kRefuseId, kEosId};
  e.y_r = {kComplyId, kContentBase + rng.below(d.vocab - kContentBase), kEosId};
  return e;
}

PreferenceExample random_benign(Rng& rng, const Dims& d) {
  PreferenceExample e;
  e.query = testing_util::random_query(rng, d, 2);
  e.y_p = echo_answer(e.query.text, d.vocab);
  return e;
}

bool grads_bits_equal(const ParamGrads& a, const ParamGrads& b) {
  return bits_equal(a.embedding.v, b.embedding.v) && bits_equal(a.enc_w.v, b.enc_w.v) &&
         bits_equal(a.enc_b.v, b.enc_b.v) && bits_equal(a.dec_w.v, b.dec_w.v) &&
         bits_equal(a.dec_b.v, b.dec_b.v) && bits_equal(a.out_w.v, b.out_w.v) &&
         bits_equal(a.out_b.v, b.out_b.v);
}

LossCfg cfg_for(Variant v, double beta = 0.1, LossSpace space = LossSpace::none) {
  LossCfg c;
  c.variant = v;
  c.beta = beta;
  c.perturb_space = space;
  return c;
}

PerturbCfg attack_cfg(double eps, Space space = Space::image) {
  PerturbCfg c;
  c.epsilon = eps;
  c.step_size = 0.02;
  c.iters = 5;
  c.norm = space == Space::latent ? Norm::l2 : Norm::infinity;
  c.space = space;
  return c;
}

}  // namespace

TEST_CASE("sft loss equals the negative preferred log-likelihood", "[losses]") {
  Dims d;  // V = 32
  ToyVlmParams p = init_params(70, d);
  Rng rng(71);

  SECTION("uniform logits give |Y| ln V") {
    ToyVlmParams uniform = p;
    for (double& x : uniform.out_w.v) x = 0.0;
    PreferenceExample e;
    e.query = testing_util::random_query(rng, d, 1);
    e.y_p = {5, 9};
    REQUIRE_THAT(sft_loss(uniform, e).total,
                 Catch::Matchers::WithinAbs(2.0 * std::log(32.0), 1e-9));
  }

  SECTION("non-negative and bit-equal to an independent recomputation") {
    for (int trial = 0; trial < 10; ++trial) {
      PreferenceExample e = random_benign(rng, d);
      LossValue v = sft_loss(p, e);
      REQUIRE(v.total >= 0.0);
      REQUIRE(v.total == -loglik(p, e.query, e.y_p));
    }
  }
}

TEST_CASE("adversarial reference loss composition", "[losses]") {
  Dims d = testing_util::small_dims();
  ToyVlmParams p = init_params(72, d);
  Rng rng(73);
  PreferenceExample harmful = random_harmful(rng, d);
  PreferenceExample utility = random_benign(rng, d);

  SECTION("alpha 0 leaves only the toward term") {
    LossCfg lc = cfg_for(Variant::sft);
    lc.alpha = 0.0;
    LossValue v = adversarial_ref_loss(p, harmful, utility, lc, attack_cfg(0.05));
    REQUIRE(v.total == v.components.toward);
  }

  SECTION("epsilon 0 reduces toward to the clean preferred NLL") {
    LossCfg lc = cfg_for(Variant::sft);
    LossValue v = adversarial_ref_loss(p, harmful, utility, lc, attack_cfg(0.0));
    REQUIRE(v.components.toward == -loglik(p, harmful.query, harmful.y_p));
  }

  SECTION("total recombines bit-exactly from the components") {
    LossCfg lc = cfg_for(Variant::sft);
    lc.alpha = 30.0;
    LossValue v = adversarial_ref_loss(p, harmful, utility, lc, attack_cfg(0.05));
    REQUIRE(v.total == v.components.toward + lc.alpha * v.components.utility);
    REQUIRE(v.components.utility == -loglik(p, utility.query, utility.y_p));
  }

  SECTION("latent-space toward term moves gradients through the encoder") {
    LossCfg lc = cfg_for(Variant::sft);
    LossGrads g =
        adversarial_ref_loss_grad(p, harmful, utility, lc, attack_cfg(0.05, Space::latent));
    REQUIRE(std::isfinite(g.value.total));
    double enc_norm = 0.0;
    for (double x : g.grads.enc_w.v) enc_norm += std::abs(x);
    REQUIRE(enc_norm > 0.0);
  }
}

TEST_CASE("preference loss analytic cases", "[losses]") {
  SECTION("hand-computed argument and loss") {
    double a = dpo_argument(-1.0, -2.0, -3.0, -2.0, 0.1);
    REQUIRE_THAT(a, Catch::Matchers::WithinAbs(0.2, 1e-15));
    REQUIRE_THAT(neg_log_sigmoid(a), Catch::Matchers::WithinAbs(0.5981389, 1e-6));
    REQUIRE_THAT(neg_log_sigmoid(a),
                 Catch::Matchers::WithinAbs(std::log1p(std::exp(-0.2)), 1e-15));
  }

  SECTION("policy equal to reference gives ln 2") {
    Dims d = testing_util::small_dims();
    ToyVlmParams p = init_params(74, d);
    Rng rng(75);
    PreferenceExample e = random_harmful(rng, d);
    LossValue v = dpo_loss(p, p, e, cfg_for(Variant::dpo));
    REQUIRE(v.components.dpo_argument == 0.0);
    REQUIRE_THAT(v.total, Catch::Matchers::WithinAbs(std::log(2.0), 1e-9));
  }

  SECTION("-log sigmoid is positive and decreasing on a grid") {
    double prev = neg_log_sigmoid(-5.0);
    REQUIRE(prev > 0.0);
    for (double a = -4.5; a <= 5.0; a += 0.5) {
      double cur = neg_log_sigmoid(a);
      REQUIRE(cur > 0.0);
      REQUIRE(cur < prev);
      prev = cur;
    }
  }
}

TEST_CASE("preference loss properties on model instances", "[losses]") {
  Dims d = testing_util::small_dims();
  ToyVlmParams p = init_params(76, d);
  ToyVlmParams ref = init_params(77, d);
  Rng rng(78);

  SECTION("beta scaling multiplies the argument") {
    for (int trial = 0; trial < 10; ++trial) {
      PreferenceExample e = random_harmful(rng, d);
      double a1 = dpo_loss(p, ref, e, cfg_for(Variant::dpo, 0.1)).components.dpo_argument;
      double a3 = dpo_loss(p, ref, e, cfg_for(Variant::dpo, 0.3)).components.dpo_argument;
      REQUIRE_THAT(a3, Catch::Matchers::WithinAbs(3.0 * a1, 1e-12 * std::max(1.0, std::abs(a1))));
    }
  }

  SECTION("swapping preferred and rejected negates the argument exactly") {
    for (int trial = 0; trial < 10; ++trial) {
      PreferenceExample e = random_harmful(rng, d);
      PreferenceExample swapped = e;
      std::swap(swapped.y_p, swapped.y_r);
      double a = dpo_loss(p, ref, e, cfg_for(Variant::dpo)).components.dpo_argument;
      double b = dpo_loss(p, ref, swapped, cfg_for(Variant::dpo)).components.dpo_argument;
      REQUIRE(a == -b);
    }
  }

  SECTION("loss pushes preferred up and rejected down") {
    // Rebuild the argument with the policy log-likelihoods as scalar leaves.
    for (int trial = 0; trial < 10; ++trial) {
      GradGraph g;
      NodeId lp_p = g.leaf(Tensor::scalar(rng.uniform(-6, -0.5)));
      NodeId lp_r = g.leaf(Tensor::scalar(rng.uniform(-6, -0.5)));
      NodeId margin = g.sub(g.sub(lp_p, g.constant(Tensor::scalar(rng.uniform(-6, -0.5)))),
                            g.sub(lp_r, g.constant(Tensor::scalar(rng.uniform(-6, -0.5)))));
      NodeId total = g.softplus(g.scale(g.scale(margin, 0.1), -1.0));
      GradResult back = g.backward(total);
      REQUIRE(back.at(lp_p).v[0] < 0.0);
      REQUIRE(back.at(lp_r).v[0] > 0.0);
    }
  }

  SECTION("totals are positive for every variant") {
    PreferenceExample e = random_harmful(rng, d);
    REQUIRE(dpo_loss(p, ref, e, cfg_for(Variant::dpo)).total > 0.0);
    Perturbation delta = attack_example(p, e, attack_cfg(0.1));
    REQUIRE(dpo_loss(p, ref, e, cfg_for(Variant::at_dpo, 0.1, LossSpace::image), &delta).total >
            0.0);
  }

  SECTION("perturbation presence must match the variant") {
    PreferenceExample e = random_harmful(rng, d);
    Perturbation delta = attack_example(p, e, attack_cfg(0.1));
    REQUIRE_THROWS_AS(dpo_loss(p, ref, e, cfg_for(Variant::at_dpo, 0.1, LossSpace::image)),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(dpo_loss(p, ref, e, cfg_for(Variant::dpo), &delta), std::invalid_argument);
    REQUIRE_THROWS_AS(cfg_for(Variant::dpo, 0.1, LossSpace::image).validate(),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(cfg_for(Variant::adpo, 0.1, LossSpace::none).validate(),
                      std::invalid_argument);
  }
}

TEST_CASE("reduction lattice is bit-exact", "[losses]") {
  Dims d = testing_util::small_dims();
  Rng rng(79);

  for (int trial = 0; trial < 50; ++trial) {
    ToyVlmParams p = init_params(derive_seed(500, "policy", trial), d);
    ToyVlmParams vanilla = init_params(derive_seed(500, "vanilla", trial), d);
    ToyVlmParams adv_ref = init_params(derive_seed(500, "advref", trial), d);
    PreferenceExample e = random_harmful(rng, d);
    bool latent = trial % 2 == 1;
    Space space = latent ? Space::latent : Space::image;
    LossSpace lspace = latent ? LossSpace::latent : LossSpace::image;
    Perturbation zero = attack_example(p, e, attack_cfg(0.0, space));

    // adpo with a zero perturbation == ar-dpo
    LossGrads adpo_v = dpo_loss_grad(p, adv_ref, e, cfg_for(Variant::adpo, 0.01, lspace), &zero);
    LossGrads ar_v = dpo_loss_grad(p, adv_ref, e, cfg_for(Variant::ar_dpo, 0.01));
    REQUIRE(adpo_v.value.total == ar_v.value.total);
    REQUIRE(grads_bits_equal(adpo_v.grads, ar_v.grads));

    // at-dpo with a zero perturbation == dpo
    LossGrads at_v = dpo_loss_grad(p, vanilla, e, cfg_for(Variant::at_dpo, 0.1, lspace), &zero);
    LossGrads dpo_v = dpo_loss_grad(p, vanilla, e, cfg_for(Variant::dpo, 0.1));
    REQUIRE(at_v.value.total == dpo_v.value.total);
    REQUIRE(grads_bits_equal(at_v.grads, dpo_v.grads));

    // ar-dpo with the vanilla reference == dpo
    LossGrads ar_vanilla = dpo_loss_grad(p, vanilla, e, cfg_for(Variant::ar_dpo, 0.1));
    REQUIRE(ar_vanilla.value.total == dpo_v.value.total);
    REQUIRE(grads_bits_equal(ar_vanilla.grads, dpo_v.grads));
  }
}
