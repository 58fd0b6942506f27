#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "fb4/formatbook.hpp"

namespace fb4 {

inline constexpr int kNumBins = 32; // half-unit bins over [0,16)

// Per-dialect tables: Qvalue maps a bin to the exact nearest 3-bit code,
// Qerror to the squared error at the bin midpoint. All decision boundaries
// between integer magnitudes fall on integer or half-integer points, so no
// 0.5-wide bin straddles a boundary and Qvalue is exact for the whole bin.
struct LutSet {
  std::array<std::array<std::uint8_t, kNumBins>, kNumDialects> qvalue{};
  std::array<std::array<double, kNumBins>, kNumDialects> qerror{};
  std::uint64_t formatbook_hash = 0;
};

// floor(2v) for v in [0,16).
inline int bin_index(double v) {
  if (!(v >= 0.0 && v < 16.0))
    throw std::invalid_argument("bin_index: value " + std::to_string(v) +
                                " outside [0,16)");
  return static_cast<int>(v * 2.0);
}

namespace detail {

// Nearest magnitude by code, ties at exact half-distance resolve away from
// zero (the larger magnitude wins).
inline int nearest_code(const Dialect& d, double v) {
  int best = 0;
  double best_dist = std::abs(v - d.magnitudes[0]);
  for (int c = 1; c < 8; ++c) {
    const double dist = std::abs(v - d.magnitudes[static_cast<std::size_t>(c)]);
    if (dist <= best_dist) { // magnitudes ascend, so <= implements away-from-zero
      best = c;
      best_dist = dist;
    }
  }
  return best;
}

} // namespace detail

inline LutSet build_luts(const Formatbook& fb) {
  LutSet luts;
  luts.formatbook_hash = fb.hash();
  for (const Dialect& d : fb.dialects()) {
    for (int b = 0; b < kNumBins; ++b) {
      const double mid = b * 0.5 + 0.25;
      const int code = detail::nearest_code(d, mid);
      const double err = mid - d.magnitudes[static_cast<std::size_t>(code)];
      luts.qvalue[static_cast<std::size_t>(d.did)][static_cast<std::size_t>(b)] =
          static_cast<std::uint8_t>(code);
      luts.qerror[static_cast<std::size_t>(d.did)][static_cast<std::size_t>(b)] =
          err * err;
    }
  }
  return luts;
}

struct LookupResult {
  int code = 0;
  double approx_sqerr = 0.0;
};

inline LookupResult lookup(const LutSet& luts, int did, double v) {
  if (did < 0 || did >= kNumDialects)
    throw std::invalid_argument("lookup: unknown dialect id " +
                                std::to_string(did));
  const int b = bin_index(v);
  return LookupResult{
      luts.qvalue[static_cast<std::size_t>(did)][static_cast<std::size_t>(b)],
      luts.qerror[static_cast<std::size_t>(did)][static_cast<std::size_t>(b)]};
}

namespace detail {

// Quantization path: values at or above 16 (possible only when the shared
// exponent clamped) saturate into the top bin.
inline int bin_index_clamped(double v) {
  if (v >= 16.0) return kNumBins - 1;
  if (v < 0.0) return 0;
  return static_cast<int>(v * 2.0);
}

} // namespace detail

} // namespace fb4
