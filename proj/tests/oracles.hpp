#pragma once

// Brute-force reference implementations used to check the LUT-driven paths.
// These deliberately avoid the library's lookup tables and selection code.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "fb4/formatbook.hpp"
#include "fb4/rng.hpp"

namespace oracle {

// Nearest magnitude by linear scan; ties at exact half-distance go away from
// zero (the larger magnitude).
inline int nearest_code(const fb4::Dialect& d, double v) {
  int best = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int c = 0; c < 8; ++c) {
    const double dist = std::abs(v - d.magnitudes[static_cast<std::size_t>(c)]);
    if (dist < best_dist ||
        (dist == best_dist &&
         d.magnitudes[static_cast<std::size_t>(c)] >
             d.magnitudes[static_cast<std::size_t>(best)])) {
      best = c;
      best_dist = dist;
    }
  }
  return best;
}

inline double exact_sse(const fb4::Dialect& d, std::span<const double> values) {
  double sse = 0.0;
  for (double v : values) {
    const double err = v - d.magnitudes[static_cast<std::size_t>(nearest_code(d, v))];
    sse += err * err;
  }
  return sse;
}

// Exhaustive exact-MSE argmin over a DID list; ties keep the lowest DID.
inline int best_dialect_exact(const fb4::Formatbook& fb,
                              std::span<const int> dids,
                              std::span<const double> values,
                              double* best_sse_out = nullptr) {
  int best = dids[0];
  double best_sse = std::numeric_limits<double>::infinity();
  for (int d : dids) {
    const double sse = exact_sse(fb.dialect(d), values);
    if (sse < best_sse) {
      best_sse = sse;
      best = d;
    }
  }
  if (best_sse_out) *best_sse_out = best_sse;
  return best;
}

// Gaussian block with a fraction of 10x outliers; the synthetic suite used
// for selection-quality and baseline-comparison fixtures.
inline std::vector<float> gaussian_outlier_block(fb4::Rng& rng, int n,
                                                 double outlier_rate = 0.05,
                                                 double outlier_scale = 10.0,
                                                 double sigma = 1.0) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) {
    double g = rng.gaussian(0.0, sigma);
    if (rng.uniform() < outlier_rate) g *= outlier_scale;
    x = static_cast<float>(g);
  }
  return v;
}

} // namespace oracle
