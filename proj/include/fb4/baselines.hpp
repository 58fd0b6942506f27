#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace fb4 {

// E2M1 representable magnitudes, code 0..7.
inline constexpr std::array<double, 8> kE2m1Values = {0.0, 0.5, 1.0, 1.5,
                                                      2.0, 3.0, 4.0, 6.0};

enum class Fp4Scheme { Mxfp4, Nvfp4 };

// Single-format FP4 baseline block: power-of-two scaling (MXFP4-style) or
// E4M3 block scale plus per-tensor scale (NVFP4-style).
struct Fp4Block {
  Fp4Scheme scheme = Fp4Scheme::Mxfp4;
  int exponent = 0;          // mxfp4 shared exponent
  std::uint8_t e4m3_bits = 0; // nvfp4 block scale encoding
  double tensor_scale = 1.0;  // nvfp4 per-tensor scale
  bool zero = false;
  std::vector<std::uint8_t> signs;
  std::vector<std::uint8_t> codes; // E2M1 index 0..7
};

namespace detail {

// Round-to-nearest-even over the E2M1 magnitude set; values above 6 saturate.
inline int e2m1_nearest_even(double v) {
  if (v <= 0.0) return 0;
  if (v >= 6.0) return 7;
  int lo = 0;
  while (lo < 7 && kE2m1Values[static_cast<std::size_t>(lo + 1)] <= v) ++lo;
  const double a = kE2m1Values[static_cast<std::size_t>(lo)];
  const double b = kE2m1Values[static_cast<std::size_t>(lo + 1)];
  const double mid = 0.5 * (a + b);
  if (v < mid) return lo;
  if (v > mid) return lo + 1;
  return (lo % 2 == 0) ? lo : lo + 1; // tie: even code (even mantissa bit)
}

// All non-negative finite E4M3 values (4-bit exponent bias 7, 3-bit
// mantissa, max 448), ascending, paired with their bit patterns.
struct E4m3Entry {
  double value;
  std::uint8_t bits;
};

inline const std::vector<E4m3Entry>& e4m3_table() {
  static const std::vector<E4m3Entry> table = [] {
    std::vector<E4m3Entry> t;
    for (int e = 0; e < 16; ++e) {
      for (int m = 0; m < 8; ++m) {
        if (e == 15 && m == 7) continue; // NaN
        const double v = e == 0 ? std::ldexp(m / 8.0, -6)
                                : std::ldexp(1.0 + m / 8.0, e - 7);
        t.push_back({v, static_cast<std::uint8_t>((e << 3) | m)});
      }
    }
    return t;
  }();
  return table;
}

// Nearest E4M3 value with ties to even mantissa; saturates at 448.
inline E4m3Entry e4m3_round(double v) {
  const auto& t = e4m3_table();
  if (v <= 0.0) return t.front();
  if (v >= t.back().value) return t.back();
  std::size_t lo = 0, hi = t.size() - 1;
  while (lo + 1 < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (t[mid].value <= v)
      lo = mid;
    else
      hi = mid;
  }
  const double gap_mid = 0.5 * (t[lo].value + t[hi].value);
  if (v < gap_mid) return t[lo];
  if (v > gap_mid) return t[hi];
  return (t[lo].bits & 1) == 0 ? t[lo] : t[hi];
}

inline double checked_amax(std::span<const float> values) {
  double amax = 0.0;
  for (float v : values) {
    if (!std::isfinite(v))
      throw std::invalid_argument("fp4 baseline: non-finite input");
    amax = std::max(amax, std::abs(static_cast<double>(v)));
  }
  return amax;
}

} // namespace detail

// MXFP4-style: shared exponent floor(log2(amax)) - 2 aligns amax near
// E2M1's max of 6; elements round to nearest even.
inline Fp4Block quantize_mxfp4(std::span<const float> values) {
  Fp4Block b;
  b.scheme = Fp4Scheme::Mxfp4;
  b.signs.resize(values.size());
  b.codes.assign(values.size(), 0);
  const double amax = detail::checked_amax(values);
  for (std::size_t i = 0; i < values.size(); ++i)
    b.signs[i] = values[i] < 0.0f ? 1 : 0;
  if (amax == 0.0) {
    b.zero = true;
    return b;
  }
  b.exponent = std::ilogb(amax) - 2;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double scaled =
        std::ldexp(std::abs(static_cast<double>(values[i])), -b.exponent);
    b.codes[i] = static_cast<std::uint8_t>(detail::e2m1_nearest_even(scaled));
  }
  return b;
}

inline std::vector<float> dequantize_mxfp4(const Fp4Block& b) {
  std::vector<float> out(b.codes.size(), 0.0f);
  if (b.zero) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mag =
        std::ldexp(kE2m1Values[b.codes[i]], b.exponent);
    out[i] = static_cast<float>(b.signs[i] ? -mag : mag);
  }
  return out;
}

// NVFP4-style: per-tensor scale amax/(6*448), E4M3 block scale, RNE E2M1
// elements. Details follow public vendor descriptions.
inline Fp4Block quantize_nvfp4(std::span<const float> values,
                               double tensor_amax) {
  Fp4Block b;
  b.scheme = Fp4Scheme::Nvfp4;
  b.signs.resize(values.size());
  b.codes.assign(values.size(), 0);
  const double amax = detail::checked_amax(values);
  for (std::size_t i = 0; i < values.size(); ++i)
    b.signs[i] = values[i] < 0.0f ? 1 : 0;
  b.tensor_scale = tensor_amax > 0.0 ? tensor_amax / (6.0 * 448.0) : 1.0;
  if (amax == 0.0) {
    b.zero = true;
    return b;
  }
  const detail::E4m3Entry scale =
      detail::e4m3_round(amax / (6.0 * b.tensor_scale));
  b.e4m3_bits = scale.bits;
  const double denom = scale.value * b.tensor_scale;
  if (denom == 0.0) {
    b.zero = true;
    return b;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double scaled = std::abs(static_cast<double>(values[i])) / denom;
    b.codes[i] = static_cast<std::uint8_t>(detail::e2m1_nearest_even(scaled));
  }
  return b;
}

inline std::vector<float> dequantize_nvfp4(const Fp4Block& b) {
  std::vector<float> out(b.codes.size(), 0.0f);
  if (b.zero) return out;
  const auto& table = detail::e4m3_table();
  double scale_value = 0.0;
  for (const auto& e : table)
    if (e.bits == b.e4m3_bits) scale_value = e.value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mag = kE2m1Values[b.codes[i]] * scale_value * b.tensor_scale;
    out[i] = static_cast<float>(b.signs[i] ? -mag : mag);
  }
  return out;
}

} // namespace fb4
