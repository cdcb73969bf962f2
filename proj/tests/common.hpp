#pragma once

// Shared helpers for the unit suites.

#include <cstring>
#include <vector>

#include "adpo/model.hpp"
#include "adpo/rng.hpp"

namespace testing_util {

inline adpo::Dims small_dims() {
  adpo::Dims d;
  d.vocab = 16;
  d.embed = 6;
  d.pixels = 9;
  d.image_tokens = 2;
  d.hidden = 10;
  return d;
}

// Pixels stay in the interior so finite differences cannot leave [0,1].
inline adpo::Query random_query(adpo::Rng& rng, const adpo::Dims& dims, int text_len,
                                double px_lo = 0.1, double px_hi = 0.9) {
  adpo::Query q;
  q.image.resize(dims.pixels);
  for (double& px : q.image) px = rng.uniform(px_lo, px_hi);
  for (int i = 0; i < text_len; ++i)
    q.text.push_back(adpo::kContentBase + rng.below(dims.vocab - adpo::kContentBase));
  return q;
}

inline adpo::Response random_response(adpo::Rng& rng, const adpo::Dims& dims, int len) {
  adpo::Response r;
  for (int i = 0; i < len; ++i)
    r.push_back(adpo::kContentBase + rng.below(dims.vocab - adpo::kContentBase));
  return r;
}

inline bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

inline bool params_bits_equal(const adpo::ToyVlmParams& a, const adpo::ToyVlmParams& b) {
  return bits_equal(a.embedding.v, b.embedding.v) && bits_equal(a.enc_w.v, b.enc_w.v) &&
         bits_equal(a.enc_b.v, b.enc_b.v) && bits_equal(a.dec_w.v, b.dec_w.v) &&
         bits_equal(a.dec_b.v, b.dec_b.v) && bits_equal(a.out_w.v, b.out_w.v) &&
         bits_equal(a.out_b.v, b.out_b.v);
}

}  // namespace testing_util
