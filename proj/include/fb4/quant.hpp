#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fb4/formatbook.hpp"
#include "fb4/lut.hpp"
#include "fb4/parallel.hpp"
#include "fb4/tensor.hpp"

namespace fb4 {

inline constexpr int kMinExponent = -16;
inline constexpr int kMaxExponent = 15;

struct BlockLayout {
  int block_size = 32;
  int num_groups = 8;

  void check() const {
    if (block_size < 1 || num_groups < 1 || block_size % num_groups != 0)
      throw std::invalid_argument("layout: num_groups must divide block_size");
  }
};

// 10 bits of metadata (5-bit DID, 5-bit shared exponent) plus one sign bit
// and a 3-bit magnitude code per element.
struct QuantizedBlock {
  std::uint8_t did = 0;
  std::int8_t exponent = kMinExponent;
  std::vector<std::uint8_t> signs; // 1 = negative
  std::vector<std::uint8_t> codes; // 0..7

  bool operator==(const QuantizedBlock&) const = default;
};

// Per-block diagnostics that are not part of the packed format.
struct BlockDiagnostics {
  bool exponent_clamped = false; // shared exponent hit [-16,15]
  bool degenerate = false;       // normalized max outside [8,16)
};

struct ScaledBlock {
  std::int8_t exponent = kMinExponent;
  std::vector<double> normalized; // |v| / 2^exponent
  std::vector<std::uint8_t> signs;
  bool all_zero = false;
  bool clamped = false;
};

// Shared power-of-two scale: s = floor(log2(amax)) - 3, so the normalized
// maximum lands in [8,16) and magnitudes encode as 4-bit unsigned integers.
inline ScaledBlock block_scale(std::span<const float> values) {
  ScaledBlock out;
  out.normalized.resize(values.size());
  out.signs.resize(values.size());
  double amax = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values[i];
    if (!std::isfinite(v))
      throw std::invalid_argument("block_scale: non-finite input at element " +
                                  std::to_string(i));
    out.signs[i] = v < 0.0f ? 1 : 0; // sign of zero is +
    amax = std::max(amax, std::abs(static_cast<double>(v)));
  }
  if (amax == 0.0) {
    out.exponent = kMinExponent;
    out.all_zero = true;
    return out;
  }
  const int e = std::ilogb(amax);
  const int s = std::clamp(e - 3, kMinExponent, kMaxExponent);
  out.exponent = static_cast<std::int8_t>(s);
  out.clamped = s != e - 3;
  for (std::size_t i = 0; i < values.size(); ++i)
    out.normalized[i] = std::ldexp(std::abs(static_cast<double>(values[i])), -s);
  return out;
}

namespace detail {

// Dynamic range matched to the block: floor of the normalized maximum,
// capped at 15 (overscaled blocks) and at least 8 (degenerate blocks that
// only arise when the exponent clamped).
inline int block_range(std::span<const double> normalized, bool* degenerate) {
  double mx = 0.0;
  for (double v : normalized) mx = std::max(mx, v);
  int m = static_cast<int>(mx);
  bool degen = false;
  if (m < kMinRange) {
    m = kMinRange;
    degen = true;
  } else if (m > kMaxRange) {
    m = kMaxRange;
    degen = true;
  }
  if (degenerate) *degenerate = degen;
  return m;
}

inline double exact_block_sse(std::span<const double> normalized,
                              const Dialect& d) {
  double sse = 0.0;
  for (double v : normalized) {
    const int c = nearest_code(d, v);
    const double err = v - d.magnitudes[static_cast<std::size_t>(c)];
    sse += err * err;
  }
  return sse;
}

} // namespace detail

// Stage-2 selection over group-wise maxima: partition the block into
// num_groups contiguous groups, keep each group's maximum, and score every
// candidate dialect by summing Qerror over those maxima.
inline int select_dialect_grouped(std::span<const double> normalized,
                                  const BlockLayout& layout,
                                  const Formatbook& fb, const LutSet& luts,
                                  bool* degenerate = nullptr) {
  layout.check();
  if (static_cast<int>(normalized.size()) != layout.block_size)
    throw std::invalid_argument("select_dialect_grouped: size != block_size");
  const int m_block = detail::block_range(normalized, degenerate);
  const RangeSpan span = fb.range_span(m_block);

  const int group_len = layout.block_size / layout.num_groups;
  std::array<int, 64> max_bins{}; // bins of the group maxima
  const int groups = layout.num_groups;
  if (groups > static_cast<int>(max_bins.size()))
    throw std::invalid_argument("select_dialect_grouped: too many groups");
  for (int gi = 0; gi < groups; ++gi) {
    double mx = 0.0;
    for (int j = 0; j < group_len; ++j)
      mx = std::max(mx, normalized[static_cast<std::size_t>(gi * group_len + j)]);
    max_bins[static_cast<std::size_t>(gi)] = detail::bin_index_clamped(mx);
  }

  int best = span.first;
  double best_score = std::numeric_limits<double>::infinity();
  for (int d = span.first; d < span.first + span.count; ++d) {
    double score = 0.0;
    for (int gi = 0; gi < groups; ++gi)
      score += luts.qerror[static_cast<std::size_t>(d)]
                          [static_cast<std::size_t>(max_bins[static_cast<std::size_t>(gi)])];
    if (score < best_score) { // ties keep the lowest DID
      best_score = score;
      best = d;
    }
  }
  return best;
}

enum class SelectionScope { SubBook, FullBook };

// Exact MSE selection, no LUT midpoint approximation.
inline int select_dialect_exact(std::span<const double> normalized,
                                const Formatbook& fb, SelectionScope scope,
                                bool* degenerate = nullptr) {
  int first = 0;
  int count = kNumDialects;
  if (scope == SelectionScope::SubBook) {
    const int m_block = detail::block_range(normalized, degenerate);
    const RangeSpan span = fb.range_span(m_block);
    first = span.first;
    count = span.count;
  } else if (degenerate) {
    detail::block_range(normalized, degenerate);
  }
  int best = first;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int d = first; d < first + count; ++d) {
    const double sse = detail::exact_block_sse(normalized, fb.dialect(d));
    if (sse < best_sse) {
      best_sse = sse;
      best = d;
    }
  }
  return best;
}

enum class SelectionMode { Grouped, Exact };

namespace detail {

// Encode an already scaled block against a fixed dialect.
inline QuantizedBlock encode_scaled(const ScaledBlock& scaled, int did,
                                    const LutSet& luts) {
  QuantizedBlock bq;
  bq.did = static_cast<std::uint8_t>(did);
  bq.exponent = scaled.exponent;
  bq.signs = scaled.signs;
  bq.codes.resize(scaled.normalized.size());
  const auto& qv = luts.qvalue[static_cast<std::size_t>(did)];
  for (std::size_t i = 0; i < scaled.normalized.size(); ++i)
    bq.codes[i] = qv[static_cast<std::size_t>(bin_index_clamped(scaled.normalized[i]))];
  return bq;
}

} // namespace detail

inline QuantizedBlock quantize_block(std::span<const float> values,
                                     const BlockLayout& layout,
                                     const Formatbook& fb, const LutSet& luts,
                                     SelectionMode mode,
                                     std::optional<int> forced_did = {},
                                     BlockDiagnostics* diag = nullptr) {
  layout.check();
  if (static_cast<int>(values.size()) != layout.block_size)
    throw std::invalid_argument("quantize_block: size != block_size");
  if (forced_did && (*forced_did < 0 || *forced_did >= kNumDialects))
    throw std::invalid_argument("quantize_block: forced dialect " +
                                std::to_string(*forced_did) +
                                " not in formatbook");
  const ScaledBlock scaled = block_scale(values);
  if (diag) diag->exponent_clamped = scaled.clamped;
  if (scaled.all_zero && !forced_did) {
    QuantizedBlock bq;
    bq.did = 0;
    bq.exponent = kMinExponent;
    bq.signs = scaled.signs;
    bq.codes.assign(values.size(), 0);
    return bq;
  }
  int did;
  if (forced_did) {
    did = *forced_did;
  } else if (mode == SelectionMode::Grouped) {
    bool degen = false;
    did = select_dialect_grouped(scaled.normalized, layout, fb, luts, &degen);
    if (diag) diag->degenerate = degen;
  } else {
    bool degen = false;
    did = select_dialect_exact(scaled.normalized, fb, SelectionScope::SubBook,
                               &degen);
    if (diag) diag->degenerate = degen;
  }
  return detail::encode_scaled(scaled, did, luts);
}

// value_i = sign_i * magnitudes[did][code_i] * 2^s; exact in binary floating
// point since every value is an integer times a power of two.
inline std::vector<float> dequantize_block(const QuantizedBlock& bq,
                                           const Formatbook& fb) {
  const Dialect& d = fb.dialect(bq.did);
  std::vector<float> out(bq.codes.size());
  for (std::size_t i = 0; i < bq.codes.size(); ++i) {
    const float mag = static_cast<float>(
        std::ldexp(static_cast<double>(
                       d.magnitudes[static_cast<std::size_t>(bq.codes[i])]),
                   bq.exponent));
    out[i] = bq.signs[i] ? -mag : mag;
  }
  return out;
}

struct QuantizedTensor {
  std::vector<std::uint64_t> shape;
  BlockLayout layout;
  std::uint64_t formatbook_hash = 0;
  std::vector<QuantizedBlock> blocks;
  std::uint64_t clamped_blocks = 0; // diagnostic only, never serialized

  std::uint64_t rows() const {
    if (shape.empty()) return 0;
    std::uint64_t r = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
    return r;
  }
  std::uint64_t inner() const { return shape.empty() ? 0 : shape.back(); }
  std::uint64_t blocks_per_row() const {
    const std::uint64_t B = static_cast<std::uint64_t>(layout.block_size);
    return (inner() + B - 1) / B;
  }
};

namespace detail {

// Copy one block's worth of row data, zero-padding past the row end.
inline void gather_block(const Tensor& t, std::uint64_t row,
                         std::uint64_t block_in_row, int block_size,
                         std::vector<float>& buf) {
  buf.assign(static_cast<std::size_t>(block_size), 0.0f);
  const std::uint64_t inner = t.inner();
  const std::uint64_t start = block_in_row * static_cast<std::uint64_t>(block_size);
  const std::uint64_t len =
      start >= inner ? 0
                     : std::min<std::uint64_t>(static_cast<std::uint64_t>(block_size),
                                               inner - start);
  const float* src = t.data.data() + row * inner + start;
  std::copy(src, src + len, buf.begin());
}

} // namespace detail

// Blocks run along the innermost axis and never straddle rows; each row's
// trailing partial block is zero-padded.
inline QuantizedTensor quantize_tensor(const Tensor& t,
                                       const BlockLayout& layout,
                                       const Formatbook& fb,
                                       const LutSet& luts, SelectionMode mode) {
  layout.check();
  if (t.shape.empty())
    throw std::invalid_argument("quantize_tensor: rank must be >= 1");
  QuantizedTensor qt;
  qt.shape = t.shape;
  qt.layout = layout;
  qt.formatbook_hash = luts.formatbook_hash;
  const std::uint64_t bpr = qt.blocks_per_row();
  const std::uint64_t n_blocks = qt.rows() * bpr;
  qt.blocks.resize(static_cast<std::size_t>(n_blocks));
  std::vector<std::uint64_t> clamped_per_block(
      static_cast<std::size_t>(n_blocks), 0);
  detail::parallel_for(static_cast<std::size_t>(n_blocks), [&](std::size_t bi) {
    thread_local std::vector<float> buf;
    const std::uint64_t row = bi / bpr;
    const std::uint64_t col = bi % bpr;
    detail::gather_block(t, row, col, layout.block_size, buf);
    BlockDiagnostics diag;
    try {
      qt.blocks[bi] = quantize_block(buf, layout, fb, luts, mode, {}, &diag);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("block " + std::to_string(bi) + ": " +
                                  e.what());
    }
    clamped_per_block[bi] = diag.exponent_clamped ? 1 : 0;
  });
  for (auto c : clamped_per_block) qt.clamped_blocks += c;
  return qt;
}

inline Tensor dequantize_tensor(const QuantizedTensor& qt,
                                const Formatbook& fb) {
  if (qt.formatbook_hash != fb.hash())
    throw std::runtime_error(
        "dequantize_tensor: formatbook hash mismatch (tensor was quantized "
        "against a different book)");
  Tensor t = Tensor::zeros(qt.shape);
  const std::uint64_t bpr = qt.blocks_per_row();
  const std::uint64_t inner = qt.inner();
  detail::parallel_for(qt.blocks.size(), [&](std::size_t bi) {
    const std::uint64_t row = bi / bpr;
    const std::uint64_t start =
        (bi % bpr) * static_cast<std::uint64_t>(qt.layout.block_size);
    const std::vector<float> vals = dequantize_block(qt.blocks[bi], fb);
    const std::uint64_t len =
        start >= inner
            ? 0
            : std::min<std::uint64_t>(vals.size(), inner - start);
    std::copy(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(len),
              t.data.begin() + static_cast<std::ptrdiff_t>(row * inner + start));
  });
  return t;
}

// Integer multiply-accumulate: 2^(sa+sb) * sum of signed magnitude products.
// Matches the floating dot product of the dequantized blocks exactly.
inline double int_dot(const QuantizedBlock& a, const QuantizedBlock& b,
                      const Formatbook& fb) {
  if (a.codes.size() != b.codes.size())
    throw std::invalid_argument("int_dot: block length mismatch");
  const Dialect& da = fb.dialect(a.did);
  const Dialect& db = fb.dialect(b.did);
  std::int64_t acc = 0;
  for (std::size_t i = 0; i < a.codes.size(); ++i) {
    const int ma = da.magnitudes[static_cast<std::size_t>(a.codes[i])];
    const int mb = db.magnitudes[static_cast<std::size_t>(b.codes[i])];
    const int sign = (a.signs[i] ^ b.signs[i]) ? -1 : 1;
    acc += static_cast<std::int64_t>(sign) * ma * mb;
  }
  return std::ldexp(static_cast<double>(acc), a.exponent + b.exponent);
}

} // namespace fb4
