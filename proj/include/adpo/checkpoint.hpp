#pragma once

// Checkpoint files: one JSON document holding dims, flat row-major parameter
// arrays, the originating seed and a provenance string. nlohmann::json emits
// shortest round-trip decimals, so save/load is value-exact.

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "adpo/errors.hpp"
#include "adpo/model.hpp"

namespace adpo {

constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  ToyVlmParams params;
  std::uint64_t seed = 0;
  std::string provenance;
};

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return nlohmann::json{{"rows", t.rows}, {"cols", t.cols}, {"data", t.v}};
}

inline Tensor tensor_from_json(const nlohmann::json& j, const std::string& name) {
  Tensor t;
  t.rows = j.at("rows").get<int>();
  t.cols = j.at("cols").get<int>();
  t.v = j.at("data").get<std::vector<double>>();
  if (t.rows < 0 || t.cols < 0 || static_cast<int>(t.v.size()) != t.rows * t.cols)
    throw ParseError("checkpoint: tensor '" + name + "' has inconsistent shape");
  if (!t.all_finite()) throw ParseError("checkpoint: tensor '" + name + "' has non-finite entries");
  return t;
}

}  // namespace detail

inline nlohmann::json dims_to_json(const Dims& d) {
  return nlohmann::json{{"vocab", d.vocab},
                        {"embed", d.embed},
                        {"pixels", d.pixels},
                        {"image_tokens", d.image_tokens},
                        {"hidden", d.hidden}};
}

inline Dims dims_from_json(const nlohmann::json& j) {
  Dims d;
  d.vocab = j.at("vocab").get<int>();
  d.embed = j.at("embed").get<int>();
  d.pixels = j.at("pixels").get<int>();
  d.image_tokens = j.at("image_tokens").get<int>();
  d.hidden = j.at("hidden").get<int>();
  d.validate();
  return d;
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json tensors;
  tensors["embedding"] = detail::tensor_to_json(c.params.embedding);
  tensors["enc_w"] = detail::tensor_to_json(c.params.enc_w);
  tensors["enc_b"] = detail::tensor_to_json(c.params.enc_b);
  tensors["dec_w"] = detail::tensor_to_json(c.params.dec_w);
  tensors["dec_b"] = detail::tensor_to_json(c.params.dec_b);
  tensors["out_w"] = detail::tensor_to_json(c.params.out_w);
  tensors["out_b"] = detail::tensor_to_json(c.params.out_b);
  return nlohmann::json{{"schema_version", kCheckpointSchemaVersion},
                        {"dims", dims_to_json(c.params.dims)},
                        {"seed", c.seed},
                        {"provenance", c.provenance},
                        {"tensors", tensors}};
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("checkpoint: cannot open '" + path + "' for writing");
  out << checkpoint_to_json(c).dump(2) << "\n";
  if (!out) throw ParseError("checkpoint: write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("checkpoint: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("checkpoint: '" + path + "' is not valid JSON near byte " +
                     std::to_string(e.byte) + ": " + e.what());
  }
  try {
    int version = j.at("schema_version").get<int>();
    if (version != kCheckpointSchemaVersion)
      throw ParseError("checkpoint: '" + path + "' has schema_version " +
                       std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointSchemaVersion));
    Checkpoint c;
    c.params.dims = dims_from_json(j.at("dims"));
    c.seed = j.at("seed").get<std::uint64_t>();
    c.provenance = j.at("provenance").get<std::string>();
    const auto& tensors = j.at("tensors");
    c.params.embedding = detail::tensor_from_json(tensors.at("embedding"), "embedding");
    c.params.enc_w = detail::tensor_from_json(tensors.at("enc_w"), "enc_w");
    c.params.enc_b = detail::tensor_from_json(tensors.at("enc_b"), "enc_b");
    c.params.dec_w = detail::tensor_from_json(tensors.at("dec_w"), "dec_w");
    c.params.dec_b = detail::tensor_from_json(tensors.at("dec_b"), "dec_b");
    c.params.out_w = detail::tensor_from_json(tensors.at("out_w"), "out_w");
    c.params.out_b = detail::tensor_from_json(tensors.at("out_b"), "out_b");

    const Dims& d = c.params.dims;
    auto expect = [](const Tensor& t, int r, int cc, const char* name) {
      if (t.rows != r || t.cols != cc)
        throw ParseError(std::string("checkpoint: tensor '") + name + "' is " + t.shape_str() +
                         ", expected " + std::to_string(r) + "x" + std::to_string(cc));
    };
    expect(c.params.embedding, d.vocab, d.embed, "embedding");
    expect(c.params.enc_w, d.image_tokens * d.embed, d.pixels, "enc_w");
    expect(c.params.enc_b, d.image_tokens * d.embed, 1, "enc_b");
    expect(c.params.dec_w, d.hidden, 2 * d.embed, "dec_w");
    expect(c.params.dec_b, d.hidden, 1, "dec_b");
    expect(c.params.out_w, d.vocab, d.hidden, "out_w");
    expect(c.params.out_b, d.vocab, 1, "out_b");
    return c;
  } catch (const ParseError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint: '" + path + "' is malformed: " + e.what());
  }
}

}  // namespace adpo
