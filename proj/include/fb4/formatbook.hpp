#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fb4 {

// One 4-bit format: eight representable integer magnitudes plus a sign bit.
// magnitudes[0] is always 0 and magnitudes[7] is always the dynamic range m,
// so zero and the block maximum are representable in every dialect.
struct Dialect {
  int did = 0;               // 0..31, position in the formatbook
  int range_max = 0;         // m, 8..15
  double density_exponent = 0.0; // p, shapes how densely small values are covered
  std::array<int, 8> magnitudes{};
};

struct RangeSpan {
  int first = 0;
  int count = 0;
};

inline constexpr int kNumDialects = 32;
inline constexpr int kMinRange = 8;
inline constexpr int kMaxRange = 15;
inline constexpr int kNumRanges = kMaxRange - kMinRange + 1;

// The 32-dialect formatbook, ordered by (range_max asc, density_exponent asc).
// Immutable after construction; DIDs are storage indices.
class Formatbook {
public:
  Formatbook() = default;
  explicit Formatbook(std::vector<Dialect> dialects)
      : dialects_(std::move(dialects)) {
    rebuild_index();
  }

  std::span<const Dialect> dialects() const { return dialects_; }

  const Dialect& dialect(int did) const {
    if (did < 0 || did >= static_cast<int>(dialects_.size()))
      throw std::invalid_argument("formatbook: dialect id " +
                                  std::to_string(did) + " out of range");
    return dialects_[static_cast<std::size_t>(did)];
  }

  RangeSpan range_span(int range_max) const {
    if (range_max < kMinRange || range_max > kMaxRange)
      throw std::invalid_argument("formatbook: range_max " +
                                  std::to_string(range_max) +
                                  " outside [8,15]");
    return spans_[static_cast<std::size_t>(range_max - kMinRange)];
  }

  // Canonical listing, one dialect per line: did, m, p, 8 magnitudes.
  // This text is what the container hash commits to.
  std::string serialize() const {
    std::string out;
    char line[128];
    for (const Dialect& d : dialects_) {
      std::snprintf(line, sizeof(line), "%d %d %g %d %d %d %d %d %d %d %d\n",
                    d.did, d.range_max, d.density_exponent, d.magnitudes[0],
                    d.magnitudes[1], d.magnitudes[2], d.magnitudes[3],
                    d.magnitudes[4], d.magnitudes[5], d.magnitudes[6],
                    d.magnitudes[7]);
      out += line;
    }
    return out;
  }

  // FNV-1a over the canonical listing.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : serialize()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

private:
  void rebuild_index() {
    spans_.fill(RangeSpan{0, 0});
    for (std::size_t i = 0; i < dialects_.size(); ++i) {
      const int m = dialects_[i].range_max;
      if (m < kMinRange || m > kMaxRange) continue;
      RangeSpan& s = spans_[static_cast<std::size_t>(m - kMinRange)];
      if (s.count == 0) s.first = static_cast<int>(i);
      ++s.count;
    }
  }

  std::vector<Dialect> dialects_;
  std::array<RangeSpan, kNumRanges> spans_{};
};

// Dialects sharing one dynamic range (stage-1 selection scope).
struct SubFormatbook {
  std::vector<int> dids;
};

namespace detail {

inline const std::vector<double>& exponent_list(int range_max) {
  static const std::array<std::vector<double>, kNumRanges> lists = {{
      {1.0, 2.0},                       // m=8
      {1.0, 1.5, 2.5},                  // m=9
      {1.0, 1.5, 2.5},                  // m=10
      {0.75, 1.0, 1.5, 2.5},            // m=11
      {0.75, 1.0, 1.5, 2.5},            // m=12
      {0.6, 0.75, 1.0, 1.5, 2.5},       // m=13
      {0.6, 0.75, 1.0, 1.5, 2.5},       // m=14
      {0.5, 0.6, 0.75, 1.0, 1.5, 2.5},  // m=15
  }};
  return lists[static_cast<std::size_t>(range_max - kMinRange)];
}

// Quantile construction: interior magnitudes v_i = round(m*(i/7)^p), made
// strictly ascending by a forward fix-up and a backward cap that keeps room
// below m. p > 1 densifies small magnitudes, p < 1 preserves large ones.
inline Dialect make_dialect(int did, int range_max, double p) {
  std::array<int, 7> v{}; // v[0] = 0 sentinel
  for (int i = 1; i <= 6; ++i) {
    v[static_cast<std::size_t>(i)] = static_cast<int>(
        std::lround(range_max * std::pow(static_cast<double>(i) / 7.0, p)));
  }
  for (int i = 1; i <= 6; ++i) {
    auto& vi = v[static_cast<std::size_t>(i)];
    vi = std::max(vi, v[static_cast<std::size_t>(i - 1)] + 1);
  }
  for (int i = 6; i >= 1; --i) {
    auto& vi = v[static_cast<std::size_t>(i)];
    vi = std::min(vi, range_max - 1 - (6 - i));
  }
  Dialect d;
  d.did = did;
  d.range_max = range_max;
  d.density_exponent = p;
  d.magnitudes[0] = 0;
  for (int i = 1; i <= 6; ++i)
    d.magnitudes[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
  d.magnitudes[7] = range_max;
  return d;
}

} // namespace detail

// The canonical 32-dialect book. Deterministic and parameter-free.
inline Formatbook build_formatbook() {
  std::vector<Dialect> dialects;
  dialects.reserve(kNumDialects);
  int did = 0;
  for (int m = kMinRange; m <= kMaxRange; ++m)
    for (double p : detail::exponent_list(m))
      dialects.push_back(detail::make_dialect(did++, m, p));
  return Formatbook(std::move(dialects));
}

// All dialects whose range_max matches the block maximum.
inline SubFormatbook stage1_subbook(const Formatbook& fb, int m_block) {
  const RangeSpan span = fb.range_span(m_block); // throws on bad m_block
  SubFormatbook sub;
  sub.dids.reserve(static_cast<std::size_t>(span.count));
  for (int i = 0; i < span.count; ++i) sub.dids.push_back(span.first + i);
  return sub;
}

// Every invariant violation found, as data. Empty on the canonical book.
inline std::vector<std::string> validate(const Formatbook& fb) {
  std::vector<std::string> violations;
  const auto dialects = fb.dialects();
  if (dialects.size() != kNumDialects)
    violations.push_back("count != 32 (got " +
                         std::to_string(dialects.size()) + ")");

  std::array<int, kNumRanges> per_range{};
  int prev_m = kMinRange;
  for (std::size_t i = 0; i < dialects.size(); ++i) {
    const Dialect& d = dialects[i];
    const std::string tag = "dialect " + std::to_string(i) + ": ";
    if (d.did != static_cast<int>(i))
      violations.push_back(tag + "did != storage order");
    if (d.range_max < kMinRange || d.range_max > kMaxRange) {
      violations.push_back(tag + "range_max outside [8,15]");
      continue;
    }
    if (d.range_max < prev_m)
      violations.push_back(tag + "ranges not ascending");
    prev_m = d.range_max;
    ++per_range[static_cast<std::size_t>(d.range_max - kMinRange)];
    if (d.magnitudes[0] != 0)
      violations.push_back(tag + "zero not representable");
    if (d.magnitudes[7] != d.range_max)
      violations.push_back(tag + "range max not representable");
    for (int k = 1; k < 8; ++k) {
      if (d.magnitudes[static_cast<std::size_t>(k)] <=
          d.magnitudes[static_cast<std::size_t>(k - 1)]) {
        violations.push_back(tag + "magnitudes not strictly ascending");
        break;
      }
    }
    if (d.magnitudes[7] > 15)
      violations.push_back(tag + "magnitude above 15");
  }

  static constexpr std::array<int, kNumRanges> expected_counts = {2, 3, 3, 4,
                                                                  4, 5, 5, 6};
  if (dialects.size() == kNumDialects) {
    for (int r = 0; r < kNumRanges; ++r) {
      if (per_range[static_cast<std::size_t>(r)] == 0)
        violations.push_back("range m=" + std::to_string(r + kMinRange) +
                             " has no dialect");
      if (per_range[static_cast<std::size_t>(r)] !=
          expected_counts[static_cast<std::size_t>(r)])
        violations.push_back(
            "range m=" + std::to_string(r + kMinRange) + " count " +
            std::to_string(per_range[static_cast<std::size_t>(r)]) +
            " != " + std::to_string(expected_counts[static_cast<std::size_t>(r)]));
    }
  }
  return violations;
}

} // namespace fb4
