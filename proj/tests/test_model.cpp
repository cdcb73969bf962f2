#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "adpo/checkpoint.hpp"
#include "adpo/model.hpp"
#include "common.hpp"
#include "oracles.hpp"

using namespace adpo;
using testing_util::bits_equal;
using testing_util::params_bits_equal;

TEST_CASE("init_params is deterministic with the documented shapes", "[model]") {
  Dims d;  // defaults: V=32 d=16 p=64 k=4 m=32
  ToyVlmParams a = init_params(7, d);
  ToyVlmParams b = init_params(7, d);
  REQUIRE(params_bits_equal(a, b));

  REQUIRE(a.embedding.rows == 32);
  REQUIRE(a.embedding.cols == 16);
  REQUIRE(a.enc_w.rows == 64);
  REQUIRE(a.enc_w.cols == 64);
  REQUIRE(a.dec_w.rows == 32);
  REQUIRE(a.dec_w.cols == 32);

  for (double x : a.enc_b.v) REQUIRE(x == 0.0);
  for (double x : a.dec_b.v) REQUIRE(x == 0.0);
  for (double x : a.out_b.v) REQUIRE(x == 0.0);

  ToyVlmParams c = init_params(8, d);
  REQUIRE_FALSE(params_bits_equal(a, c));

  Dims bad = d;
  bad.embed = 0;
  REQUIRE_THROWS_AS(init_params(7, bad), std::invalid_argument);
}

TEST_CASE("encode layout and purity", "[model]") {
  Dims d = testing_util::small_dims();
  ToyVlmParams p = init_params(3, d);

  SECTION("zero image with zero bias gives zero image rows") {
    Query q;
    q.image.assign(d.pixels, 0.0);
    Tensor latent = encode(p, q);  // enc_b is zero from init
    REQUIRE(latent.rows == d.image_tokens);
    REQUIRE(latent.cols == d.embed);
    for (double x : latent.v) REQUIRE(x == 0.0);
  }

  SECTION("row count is image tokens plus text length") {
    Rng rng(1);
    Query q = testing_util::random_query(rng, d, 3);
    Tensor latent = encode(p, q);
    REQUIRE(latent.rows == d.image_tokens + 3);
    REQUIRE(latent.cols == d.embed);
    REQUIRE(latent.all_finite());
    // image rows live in the tanh range
    for (int i = 0; i < d.image_tokens; ++i)
      for (int j = 0; j < d.embed; ++j) {
        REQUIRE(latent.at(i, j) > -1.0);
        REQUIRE(latent.at(i, j) < 1.0);
      }
  }

  SECTION("repeated tokens produce identical rows") {
    Rng rng(2);
    Query q = testing_util::random_query(rng, d, 0);
    q.text = {5, 5};
    Tensor latent = encode(p, q);
    int k = d.image_tokens;
    for (int j = 0; j < d.embed; ++j) REQUIRE(latent.at(k, j) == latent.at(k + 1, j));
  }

  SECTION("invalid queries are rejected") {
    Query q;
    q.image.assign(d.pixels, 0.5);
    q.image[0] = 1.5;
    REQUIRE_THROWS_AS(encode(p, q), std::invalid_argument);
    q.image[0] = 0.5;
    q.text = {d.vocab};
    REQUIRE_THROWS_AS(encode(p, q), std::invalid_argument);
  }
}

TEST_CASE("decode_loglik analytic cases", "[model]") {
  Dims d;  // V=32
  ToyVlmParams p = init_params(11, d);

  SECTION("uniform logits give -ln V per token") {
    ToyVlmParams uniform = p;
    for (double& x : uniform.out_w.v) x = 0.0;
    Rng rng(4);
    Query q = testing_util::random_query(rng, d, 2);
    REQUIRE_THAT(loglik(uniform, q, {7}), Catch::Matchers::WithinAbs(-std::log(32.0), 1e-9));
    REQUIRE_THAT(loglik(uniform, q, {7, 9}),
                 Catch::Matchers::WithinAbs(-2.0 * std::log(32.0), 1e-9));
  }

  SECTION("two-token response equals the sum of per-step conditionals") {
    Rng rng(5);
    Query q = testing_util::random_query(rng, d, 2);
    Tensor latent = encode(p, q);
    double both = decode_loglik(p, latent, {6, 9});
    // step 1: p(6 | BOS); step 2: p(9 | prev=6), isolated via the chain rule
    double first = decode_loglik(p, latent, {6});
    GradGraph g;
    ParamNodes pn = add_params(g, p, false);
    NodeId context = g.mean_rows(g.constant(latent));
    NodeId logits = build_step_logits(g, pn, context, 6);
    double second = g.value(g.pick(g.log_softmax(logits), 9)).v[0];
    REQUIRE_THAT(both, Catch::Matchers::WithinAbs(first + second, 1e-12));
  }

  SECTION("log-probabilities are never positive") {
    Rng rng(6);
    for (int t = 0; t < 20; ++t) {
      Query q = testing_util::random_query(rng, d, 1 + rng.below(3));
      Response r = testing_util::random_response(rng, d, 1 + rng.below(4));
      REQUIRE(loglik(p, q, r) <= 0.0);
    }
  }

  SECTION("latent row width is checked") {
    Tensor bad(3, d.embed + 1);
    REQUIRE_THROWS_AS(decode_loglik(p, bad, {5}), std::invalid_argument);
  }
}

TEST_CASE("loglik is exactly decode after encode", "[model]") {
  Dims d = testing_util::small_dims();
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    ToyVlmParams p = init_params(derive_seed(100, "case", trial), d);
    Query q = testing_util::random_query(rng, d, rng.below(4));
    Response r = testing_util::random_response(rng, d, 1 + rng.below(4));
    double direct = loglik(p, q, r);
    double split = decode_loglik(p, encode(p, q), r);
    REQUIRE(direct == split);  // bit-exact
  }
}

TEST_CASE("single-token likelihoods normalize", "[model]") {
  Dims d = testing_util::small_dims();
  ToyVlmParams p = init_params(21, d);
  Rng rng(22);
  Query q = testing_util::random_query(rng, d, 2);
  double total = 0.0;
  for (int y = 0; y < d.vocab; ++y) total += std::exp(loglik(p, q, {y}));
  REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-9));
}

TEST_CASE("loglik gradient w.r.t. the image matches finite differences", "[model][oracle]") {
  Dims d = testing_util::small_dims();
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    ToyVlmParams p = init_params(derive_seed(200, "img", trial), d);
    Query q = testing_util::random_query(rng, d, 2);
    Response r = testing_util::random_response(rng, d, 2);

    GradGraph g;
    ParamNodes pn = add_params(g, p, false);
    NodeId image = g.leaf(Tensor::column(q.image));
    NodeId lp = build_response_loglik(g, pn, p.dims, build_latent(g, pn, p.dims, image, q.text), r);
    GradResult back = g.backward(lp);
    const Tensor& tape = back.at(image);

    auto fd = oracles::finite_diff(
        [&](const std::vector<double>& px) {
          Query probe{px, q.text};
          return loglik(p, probe, r);
        },
        q.image);
    REQUIRE(oracles::max_rel_err(tape.v, fd) < 1e-4);
  }
}

TEST_CASE("adding a zero latent perturbation changes nothing", "[model]") {
  Dims d = testing_util::small_dims();
  ToyVlmParams p = init_params(41, d);
  Rng rng(42);
  Query q = testing_util::random_query(rng, d, 2);
  Response r = testing_util::random_response(rng, d, 3);
  Tensor latent = encode(p, q);
  Tensor zero(latent.rows, latent.cols);
  REQUIRE(decode_loglik(p, ten::add(latent, zero), r) == decode_loglik(p, latent, r));
}

TEST_CASE("greedy generation", "[model]") {
  Dims d = testing_util::small_dims();

  SECTION("all-equal logits emit token 0 up to max_len") {
    ToyVlmParams p = init_params(51, d);
    for (double& x : p.out_w.v) x = 0.0;
    Rng rng(52);
    Query q = testing_util::random_query(rng, d, 1);
    Response r = generate(p, q, 5);
    REQUIRE(r == Response{0, 0, 0, 0, 0});  // token 0 is not EOS, so no early stop
  }

  SECTION("every emitted token is the argmax of its step, rechecked post hoc") {
    ToyVlmParams p = init_params(53, d);
    Rng rng(54);
    Query q = testing_util::random_query(rng, d, 2);
    Response r = generate(p, q, 6);
    REQUIRE(!r.empty());
    Tensor latent = encode(p, q);
    GradGraph g;
    ParamNodes pn = add_params(g, p, false);
    NodeId context = g.mean_rows(g.constant(latent));
    int prev = kBosId;
    for (int tok : r) {
      const Tensor& logits = g.value(build_step_logits(g, pn, context, prev));
      int best = 0;
      for (int i = 1; i < logits.rows; ++i)
        if (logits.v[i] > logits.v[best]) best = i;
      REQUIRE(tok == best);
      prev = tok;
    }
  }

  SECTION("generation is deterministic") {
    ToyVlmParams p = init_params(55, d);
    Rng rng(56);
    Query q = testing_util::random_query(rng, d, 2);
    Response first = generate(p, q, 8);
    for (int i = 0; i < 9; ++i) REQUIRE(generate(p, q, 8) == first);
  }

  SECTION("max_len must be positive") {
    ToyVlmParams p = init_params(57, d);
    Query q;
    q.image.assign(d.pixels, 0.5);
    REQUIRE_THROWS_AS(generate(p, q, 0), std::invalid_argument);
  }
}

TEST_CASE("checkpoint round-trip and error contracts", "[model][checkpoint]") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "adpo_ckpt_test";
  fs::create_directories(dir);
  Dims d = testing_util::small_dims();

  SECTION("round-trip preserves every bit") {
    Checkpoint c{init_params(61, d), 61, "unit-test"};
    std::string path = (dir / "roundtrip.json").string();
    save_checkpoint(c, path);
    Checkpoint back = load_checkpoint(path);
    REQUIRE(params_bits_equal(c.params, back.params));
    REQUIRE(back.seed == 61);
    REQUIRE(back.provenance == "unit-test");
    REQUIRE(back.params.dims == d);
  }

  SECTION("truncated file reports the parse position") {
    Checkpoint c{init_params(62, d), 62, "unit-test"};
    std::string path = (dir / "trunc.json").string();
    save_checkpoint(c, path);
    std::string text;
    {
      std::ifstream in(path);
      text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    {
      std::ofstream out(path, std::ios::trunc);
      out << text.substr(0, text.size() / 2);
    }
    REQUIRE_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("byte"));
  }

  SECTION("schema version mismatch is explicit") {
    Checkpoint c{init_params(63, d), 63, "unit-test"};
    nlohmann::json j = checkpoint_to_json(c);
    j["schema_version"] = 999;
    std::string path = (dir / "version.json").string();
    {
      std::ofstream out(path);
      out << j.dump();
    }
    REQUIRE_THROWS_WITH(load_checkpoint(path),
                        Catch::Matchers::ContainsSubstring("schema_version"));
  }

  SECTION("missing file is rejected") {
    REQUIRE_THROWS_AS(load_checkpoint((dir / "nope.json").string()), ParseError);
  }
}
