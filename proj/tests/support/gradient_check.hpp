#ifndef SCHEMA_FORGE_TESTS_GRADIENT_CHECK_HPP
#define SCHEMA_FORGE_TESTS_GRADIENT_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "schema_forge/cnn_encoder.hpp"

namespace sf_test {

// |a - n| / max(floor, |a|, |n|): relative where the gradient is visible,
// absolute (scaled by 1/floor) where both sides are numerically zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({floor, std::abs(analytic), std::abs(numeric)});
}

struct GradientCheck {
  double max_relative_error = 0;
  std::size_t parameters = 0;
};

/// Central differences over every parameter of the encoder.
inline GradientCheck check_gradient(schema_forge::SubwordCnnEncoder& enc, const schema_forge::CnnExample& ex,
                                    double h = 1e-5) {
  std::vector<double> analytic;
  enc.loss_and_gradient(ex, analytic);
  auto& p = enc.parameters();
  GradientCheck out;
  out.parameters = p.size();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    double up = enc.loss(ex);
    p[i] = saved - h;
    double down = enc.loss(ex);
    p[i] = saved;
    out.max_relative_error = std::max(out.max_relative_error, relative_error(analytic[i], (up - down) / (2 * h)));
  }
  return out;
}

/// A small encoder with random parameters and a random example over it.
inline std::pair<schema_forge::SubwordCnnEncoder, schema_forge::CnnExample> random_cnn_case(std::mt19937_64& rng) {
  schema_forge::CnnConfig cfg;
  cfg.widths.clear();
  for (int w = 1; w <= 4; ++w)
    if (rng() % 2 || cfg.widths.empty()) cfg.widths.push_back(w);
  cfg.feature_maps = 1 + static_cast<int>(rng() % 4);
  cfg.d_in = 1 + rng() % 5;
  cfg.max_len = 6;
  std::size_t vocab = 2 + rng() % 6, rows = 2 + rng() % 6;
  std::vector<std::string> words;
  for (std::size_t i = 0; i < vocab; ++i) words.push_back("w" + std::to_string(i));
  schema_forge::SubwordCnnEncoder enc(cfg, words, rows);
  std::normal_distribution<double> g(0.0, 0.7);
  for (auto& x : enc.parameters()) x = g(rng);
  schema_forge::CnnExample ex;
  std::size_t len = 1 + rng() % 6;
  for (std::size_t i = 0; i < len; ++i) ex.subwords.push_back(static_cast<int>(rng() % vocab));
  ex.context = rng() % rows;
  std::size_t negs = rng() % 4;
  for (std::size_t i = 0; i < negs; ++i) ex.negatives.push_back(rng() % rows);
  return {std::move(enc), std::move(ex)};
}

}  // namespace sf_test

#endif
