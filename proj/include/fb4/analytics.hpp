#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fb4/quant.hpp"
#include "fb4/tensor.hpp"

namespace fb4 {

struct MetricsReport {
  double mse = 0.0;
  double sse = 0.0;
  double sqnr_db = 0.0; // 10*log10(signal power / error power)
  double max_abs_err = 0.0;
  double cosine = 1.0;
  std::uint64_t elements = 0;

  std::string csv() const {
    std::ostringstream out;
    out.precision(12);
    out << "metric,value\n";
    out << "elements," << elements << '\n';
    out << "mse," << mse << '\n';
    out << "sse," << sse << '\n';
    out << "sqnr_db," << sqnr_db << '\n';
    out << "max_abs_err," << max_abs_err << '\n';
    out << "cosine," << cosine << '\n';
    return out.str();
  }
};

inline MetricsReport compare(const Tensor& reference, const Tensor& reconstructed) {
  if (!reference.same_shape(reconstructed))
    throw std::invalid_argument("compare: shape mismatch");
  MetricsReport r;
  r.elements = reference.element_count();
  double sse = 0.0, signal = 0.0, dot = 0.0, norm_b = 0.0, max_err = 0.0;
  for (std::size_t i = 0; i < reference.data.size(); ++i) {
    const double a = reference.data[i];
    const double b = reconstructed.data[i];
    const double e = a - b;
    sse += e * e;
    signal += a * a;
    dot += a * b;
    norm_b += b * b;
    max_err = std::max(max_err, std::abs(e));
  }
  r.sse = sse;
  r.mse = r.elements ? sse / static_cast<double>(r.elements) : 0.0;
  r.max_abs_err = max_err;
  if (signal == 0.0 && norm_b == 0.0)
    r.cosine = 1.0; // both zero: identical
  else if (signal == 0.0 || norm_b == 0.0)
    r.cosine = 0.0;
  else
    r.cosine = dot / (std::sqrt(signal) * std::sqrt(norm_b));
  r.sqnr_db = sse == 0.0 ? std::numeric_limits<double>::infinity()
                         : 10.0 * std::log10(signal / sse);
  return r;
}

inline std::array<std::uint64_t, kNumDialects> dialect_usage(
    const QuantizedTensor& qt) {
  std::array<std::uint64_t, kNumDialects> counts{};
  for (const QuantizedBlock& b : qt.blocks) ++counts[b.did];
  return counts;
}

enum class BitScheme { Fb4, Mxfp4Acct5, Mxfp4Acct8, Nvfp4 };

// Two-decimal table rendering with halves rounded away from zero, the
// convention the comparison tables use (4.625 -> "4.63").
inline std::string format_bits(double bits) {
  const double rounded = std::round(bits * 100.0) / 100.0;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", rounded);
  return buf;
}

// Amortized bits per element. The FB4 term doubles on the decomposed
// fraction f; MXFP4 is reported under both the 5-bit scale accounting used
// in the comparison tables and the 8-bit shared exponent of the OCP MX format.
inline double effective_bits(const BlockLayout& layout, BitScheme scheme,
                             double decomposed_fraction = 0.0) {
  layout.check();
  if (decomposed_fraction < 0.0 || decomposed_fraction > 1.0)
    throw std::invalid_argument("effective_bits: fraction outside [0,1]");
  const double B = layout.block_size;
  switch (scheme) {
    case BitScheme::Fb4:
      return (4.0 + 10.0 / B) * (1.0 + decomposed_fraction);
    case BitScheme::Mxfp4Acct5:
      return 4.0 + 5.0 / B;
    case BitScheme::Mxfp4Acct8:
      return 4.0 + 8.0 / B;
    case BitScheme::Nvfp4:
      return 4.0 + 8.0 / B; // per-tensor scale amortizes to ~0
  }
  throw std::invalid_argument("effective_bits: unknown scheme");
}

} // namespace fb4
