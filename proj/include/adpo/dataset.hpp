#pragma once

// Synthetic preference data.
//
// Query images come from a three-parameter family of clamped planar ramps,
// so the model cannot memorize pixels and must read the real signals. Query
// texts are three tokens everywhere (no length shortcut). Harmfulness is
// carried by construction through three sub-populations:
//   image-borne: checkerboard poison pattern stamped on a ramp, neutral text
//   text-borne:  a harmful token in the text, featureless near-black image
//   mixed:       both signals
// The checkerboard (adjacent extreme values) cannot be produced by a smooth
// ramp, so the pattern is unambiguous on clean inputs while still living
// within attack reach of the pixel budget.
//
// Benign queries define the echo task: the answer is each text token shifted
// by one inside the content range. The token space is partitioned so task
// vocabulary and compliance payloads do not collide: echo tokens sit in
// [4, V/2), payload tokens in [V/2, V-4), harmful markers in [V-4, V).
// Splits are 75/25 per sub-population and all records are pairwise distinct.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "adpo/errors.hpp"
#include "adpo/model.hpp"
#include "adpo/rng.hpp"

namespace adpo {

struct PreferenceExample {
  Query query;
  Response y_p;  // preferred: refusal for harmful, task answer for benign
  Response y_r;  // rejected: compliance for harmful, empty for benign
  bool harmful = false;

  bool operator==(const PreferenceExample&) const = default;
};

struct PoisonPattern {
  // pixel index -> stamped value; default: top-left 2x2 checkerboard
  std::vector<std::pair<int, double>> stamps{{0, 0.85}, {1, 0.15}, {8, 0.15}, {9, 0.85}};

  void apply(std::vector<double>& image) const {
    for (const auto& [px, value] : stamps) image[static_cast<std::size_t>(px)] = value;
  }
};

struct SyntheticSpec {
  int n_harmful = 192;
  int n_benign = 200;
  std::uint64_t seed = 0;
  PoisonPattern pattern;
  std::vector<int> harmful_tokens;  // defaults to the top four content ids
  int payload_len = 2;              // content tokens in a compliance response
  Dims dims;

  std::vector<int> effective_harmful_tokens() const {
    if (!harmful_tokens.empty()) return harmful_tokens;
    return {dims.vocab - 4, dims.vocab - 3, dims.vocab - 2, dims.vocab - 1};
  }

  int echo_token_end() const { return dims.vocab / 2; }     // echo text in [4, V/2)
  int payload_token_end() const { return dims.vocab - 4; }  // payload in [V/2, V-4)

  void validate() const {
    dims.validate();
    if (n_harmful < 0 || n_benign < 0) throw std::invalid_argument("synthetic: counts must be >= 0");
    if (payload_len < 0) throw std::invalid_argument("synthetic: payload_len must be >= 0");
    if (echo_token_end() - kContentBase < 3)
      throw std::invalid_argument("synthetic: vocabulary too small for echo triples");
    for (const auto& [px, value] : pattern.stamps) {
      if (px < 0 || px >= dims.pixels)
        throw std::invalid_argument("synthetic: pattern pixel " + std::to_string(px) +
                                    " outside image of " + std::to_string(dims.pixels));
      if (!(value >= 0.0 && value <= 1.0))
        throw std::invalid_argument("synthetic: pattern value outside [0,1]");
    }
    for (int t : effective_harmful_tokens())
      if (t < kContentBase || t >= dims.vocab)
        throw std::invalid_argument("synthetic: harmful token " + std::to_string(t) +
                                    " outside content range");
  }
};

struct SyntheticData {
  std::vector<PreferenceExample> harmful_train, harmful_eval, benign_train, benign_eval;
};

// Shift a content token by one, wrapping within [kContentBase, vocab).
inline int echo_shift(int token, int vocab) {
  int span = vocab - kContentBase;
  return kContentBase + ((token - kContentBase + 1) % span);
}

inline Response echo_answer(const std::vector<int>& text, int vocab) {
  Response out;
  for (int t : text) out.push_back(echo_shift(t, vocab));
  out.push_back(kEosId);
  return out;
}

// Clamped planar ramp a + b*(row-mid) + c*(col-mid); three free parameters.
inline std::vector<double> ramp_image(Rng& rng, int pixels) {
  int side = static_cast<int>(std::llround(std::sqrt(static_cast<double>(pixels))));
  bool square = side > 1 && side * side == pixels;
  double a = rng.uniform();
  double b = rng.uniform(-1.0, 1.0);
  double c = rng.uniform(-1.0, 1.0);
  std::vector<double> img(static_cast<std::size_t>(pixels));
  for (int i = 0; i < pixels; ++i) {
    double u, v;
    if (square) {
      u = (i / side) / static_cast<double>(side - 1);
      v = (i % side) / static_cast<double>(side - 1);
    } else {
      u = pixels > 1 ? i / static_cast<double>(pixels - 1) : 0.0;
      v = 0.0;
    }
    img[static_cast<std::size_t>(i)] =
        std::min(1.0, std::max(0.0, a + b * (u - 0.5) + c * (v - 0.5)));
  }
  return img;
}

// Featureless "blank" image: constant low exposure.
constexpr double kBlankExposureMax = 0.2;

namespace detail {

inline std::string record_key(const PreferenceExample& e) {
  std::string key;
  for (int t : e.query.text) key += std::to_string(t) + ",";
  key += "|";
  for (double px : e.query.image) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(px));
    std::memcpy(&bits, &px, sizeof(bits));
    key += std::to_string(bits) + ",";
  }
  return key;
}

}  // namespace detail

inline SyntheticData make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Dims& dims = spec.dims;
  const std::vector<int> harmful_tokens = spec.effective_harmful_tokens();
  const int echo_end = spec.echo_token_end();
  const int payload_end = spec.payload_token_end();
  const int neutral_end = dims.vocab - static_cast<int>(harmful_tokens.size());

  Rng rng(derive_seed(spec.seed, "data"));
  std::set<std::string> seen;

  auto fresh = [&](auto make_one) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      PreferenceExample e = make_one();
      if (seen.insert(detail::record_key(e)).second) return e;
    }
    throw std::invalid_argument(
        "synthetic: requested counts exceed the representable distinct examples");
  };

  auto echo_triple = [&]() {
    int t = kContentBase + rng.below(echo_end - kContentBase - 2);
    return std::vector<int>{t, t + 1, t + 2};
  };
  auto harmful_text = [&]() {
    int n1 = kContentBase + rng.below(neutral_end - kContentBase);
    int n2;
    do {
      n2 = kContentBase + rng.below(neutral_end - kContentBase);
    } while (n2 == n1);
    if (n1 > n2) std::swap(n1, n2);
    int h = harmful_tokens[static_cast<std::size_t>(rng.below(static_cast<int>(harmful_tokens.size())))];
    return std::vector<int>{n1, n2, h};
  };
  auto payload_token = [&]() {
    return echo_end + rng.below(payload_end - echo_end);
  };
  auto refusal = [&]() { return Response{kRefuseId, payload_token(), kEosId}; };
  auto compliance = [&]() {
    Response r{kComplyId};
    for (int i = 0; i < spec.payload_len; ++i) r.push_back(payload_token());
    r.push_back(kEosId);
    return r;
  };

  auto make_harmful = [&](int pop) {
    return fresh([&]() {
      PreferenceExample e;
      e.harmful = true;
      if (pop == 0) {  // image-borne: pattern on a ramp, neutral echo-style text
        e.query.image = ramp_image(rng, dims.pixels);
        spec.pattern.apply(e.query.image);
        e.query.text = echo_triple();
      } else if (pop == 1) {  // text-borne: harmful token, blank image
        e.query.image.assign(static_cast<std::size_t>(dims.pixels),
                             rng.uniform(0.0, kBlankExposureMax));
        e.query.text = harmful_text();
      } else {  // mixed
        e.query.image = ramp_image(rng, dims.pixels);
        spec.pattern.apply(e.query.image);
        e.query.text = harmful_text();
      }
      e.y_p = refusal();
      e.y_r = compliance();
      return e;
    });
  };

  int pop_counts[3];
  int pop_base = spec.n_harmful / 3, rem = spec.n_harmful % 3;
  for (int i = 0; i < 3; ++i) pop_counts[i] = pop_base + (i < rem ? 1 : 0);

  SyntheticData out;
  for (int pop = 0; pop < 3; ++pop) {
    int n = pop_counts[pop];
    int n_train = n >= 2 ? (n * 3) / 4 : n;
    for (int i = 0; i < n; ++i) {
      PreferenceExample e = make_harmful(pop);
      (i < n_train ? out.harmful_train : out.harmful_eval).push_back(std::move(e));
    }
  }

  {
    int n = spec.n_benign;
    int n_train = n >= 2 ? (n * 3) / 4 : n;
    for (int i = 0; i < n; ++i) {
      PreferenceExample e = fresh([&]() {
        PreferenceExample b;
        b.harmful = false;
        b.query.image = ramp_image(rng, dims.pixels);
        b.query.text = echo_triple();
        b.y_p = echo_answer(b.query.text, dims.vocab);
        return b;
      });
      (i < n_train ? out.benign_train : out.benign_eval).push_back(std::move(e));
    }
  }
  return out;
}

// Pretraining view: the undefended model answers benign queries and complies
// with harmful ones, so compliance (not refusal) is its trained behavior.
inline std::vector<PreferenceExample> compliance_corpus(
    const std::vector<PreferenceExample>& benign, const std::vector<PreferenceExample>& harmful) {
  std::vector<PreferenceExample> out = benign;
  for (PreferenceExample e : harmful) {
    e.y_p = e.y_r;
    e.y_r.clear();
    out.push_back(std::move(e));
  }
  return out;
}

inline nlohmann::json example_to_json(const PreferenceExample& e) {
  return nlohmann::json{{"image", e.query.image},
                        {"text", e.query.text},
                        {"y_p", e.y_p},
                        {"y_r", e.y_r},
                        {"harmful", e.harmful}};
}

inline PreferenceExample example_from_json(const nlohmann::json& j) {
  PreferenceExample e;
  e.query.image = j.at("image").get<std::vector<double>>();
  e.query.text = j.at("text").get<std::vector<int>>();
  e.y_p = j.at("y_p").get<Response>();
  e.y_r = j.at("y_r").get<Response>();
  e.harmful = j.at("harmful").get<bool>();
  return e;
}

inline void write_jsonl(const std::vector<PreferenceExample>& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("dataset: cannot open '" + path + "' for writing");
  for (const PreferenceExample& e : data) out << example_to_json(e).dump() << "\n";
  if (!out) throw ParseError("dataset: write to '" + path + "' failed");
}

inline std::vector<PreferenceExample> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("dataset: cannot open '" + path + "'");
  std::vector<PreferenceExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dataset: '" + path + "' line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
  nlohmann::json stamps = nlohmann::json::array();
  for (const auto& [px, value] : s.pattern.stamps) stamps.push_back({{"pixel", px}, {"value", value}});
  return nlohmann::json{{"n_harmful", s.n_harmful},
                        {"n_benign", s.n_benign},
                        {"seed", s.seed},
                        {"pattern", stamps},
                        {"harmful_tokens", s.harmful_tokens},
                        {"payload_len", s.payload_len},
                        {"dims", nlohmann::json{{"vocab", s.dims.vocab},
                                                {"embed", s.dims.embed},
                                                {"pixels", s.dims.pixels},
                                                {"image_tokens", s.dims.image_tokens},
                                                {"hidden", s.dims.hidden}}}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  if (j.contains("n_harmful")) s.n_harmful = j.at("n_harmful").get<int>();
  if (j.contains("n_benign")) s.n_benign = j.at("n_benign").get<int>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("pattern")) {
    s.pattern.stamps.clear();
    for (const auto& st : j.at("pattern"))
      s.pattern.stamps.emplace_back(st.at("pixel").get<int>(), st.at("value").get<double>());
  }
  if (j.contains("harmful_tokens")) s.harmful_tokens = j.at("harmful_tokens").get<std::vector<int>>();
  if (j.contains("payload_len")) s.payload_len = j.at("payload_len").get<int>();
  if (j.contains("dims")) {
    const auto& d = j.at("dims");
    s.dims.vocab = d.at("vocab").get<int>();
    s.dims.embed = d.at("embed").get<int>();
    s.dims.pixels = d.at("pixels").get<int>();
    s.dims.image_tokens = d.at("image_tokens").get<int>();
    s.dims.hidden = d.at("hidden").get<int>();
  }
  s.validate();
  return s;
}

}  // namespace adpo
