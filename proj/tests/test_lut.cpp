#include <gtest/gtest.h>

#include "fb4/lut.hpp"
#include "fb4/rng.hpp"
#include "oracles.hpp"

using namespace fb4;

namespace {
const Formatbook& book() {
  static const Formatbook fb = build_formatbook();
  return fb;
}
const LutSet& luts() {
  static const LutSet l = build_luts(book());
  return l;
}
} // namespace

TEST(Lut, BinIndexShiftTruncate) {
  EXPECT_EQ(bin_index(0.0), 0);
  EXPECT_EQ(bin_index(7.8), 15);
  EXPECT_EQ(bin_index(15.999), 31);
  EXPECT_THROW(bin_index(16.0), std::invalid_argument);
  EXPECT_THROW(bin_index(-0.001), std::invalid_argument);
}

TEST(Lut, KnownValuesForDialect31) {
  // magnitudes {0,1,2,3,4,6,10,15}
  const LookupResult r1 = lookup(luts(), 31, 12.0); // bin [12.0,12.5)
  EXPECT_EQ(r1.code, 6);
  const LookupResult r2 = lookup(luts(), 31, 7.5); // bin [7.5,8.0)
  EXPECT_DOUBLE_EQ(r2.approx_sqerr, 3.0625);
  const LookupResult r3 = lookup(luts(), 31, 4.0); // bin [4.0,4.5)
  EXPECT_EQ(r3.code, 4);
  EXPECT_DOUBLE_EQ(r3.approx_sqerr, 0.0625);
  EXPECT_EQ(lookup(luts(), 31, 12.3).code, 6);
  const LookupResult r4 = lookup(luts(), 31, 6.0);
  EXPECT_EQ(r4.code, 5);
  EXPECT_DOUBLE_EQ(r4.approx_sqerr, 0.0625);
  EXPECT_EQ(lookup(luts(), 31, 0.1).code, 0);
  EXPECT_THROW(lookup(luts(), 32, 1.0), std::invalid_argument);
  EXPECT_THROW(lookup(luts(), -1, 1.0), std::invalid_argument);
}

TEST(Lut, TableShapeInvariants) {
  for (int d = 0; d < kNumDialects; ++d) {
    const Dialect& dd = book().dialect(d);
    for (int b = 0; b < kNumBins; ++b) {
      const int code = luts().qvalue[d][b];
      ASSERT_GE(code, 0);
      ASSERT_LE(code, 7);
      const double mid = b * 0.5 + 0.25;
      const double err = mid - dd.magnitudes[static_cast<std::size_t>(code)];
      EXPECT_DOUBLE_EQ(luts().qerror[d][b], err * err);
      EXPECT_GE(luts().qerror[d][b], 0.0);
    }
  }
}

// Exactness against the brute-force nearest-magnitude oracle. The full 10^6
// per dialect run lives in the acceptance suite; this is a fast spot check.
TEST(Lut, MatchesBruteForceOracle) {
  Rng rng(0x5eed);
  for (int d = 0; d < kNumDialects; ++d) {
    const Dialect& dd = book().dialect(d);
    for (int i = 0; i < 20000; ++i) {
      const double v = rng.uniform(0.0, 16.0);
      EXPECT_EQ(lookup(luts(), d, v).code, oracle::nearest_code(dd, v))
          << "did=" << d << " v=" << v;
    }
  }
}

// Half-integer boundary ties resolve away from zero in both paths.
TEST(Lut, TieRuleAwayFromZero) {
  const Dialect& d31 = book().dialect(31); // {0,1,2,3,4,6,10,15}
  EXPECT_EQ(lookup(luts(), 31, 0.5).code, 1);   // tie 0 vs 1
  EXPECT_EQ(lookup(luts(), 31, 5.0).code, 5);   // tie 4 vs 6
  EXPECT_EQ(lookup(luts(), 31, 12.5).code, 7);  // tie 10 vs 15
  EXPECT_EQ(oracle::nearest_code(d31, 0.5), 1);
  EXPECT_EQ(oracle::nearest_code(d31, 5.0), 5);
  EXPECT_EQ(oracle::nearest_code(d31, 12.5), 7);
}

// Within one decision region qvalue is constant across consecutive bins.
TEST(Lut, MonotoneBinsWithinDecisionRegions) {
  for (int d = 0; d < kNumDialects; ++d) {
    const Dialect& dd = book().dialect(d);
    int transitions = 0;
    for (int b = 1; b < kNumBins; ++b) {
      const int prev = luts().qvalue[d][b - 1];
      const int cur = luts().qvalue[d][b];
      EXPECT_GE(cur, prev); // codes never step back as magnitude grows
      if (cur != prev) {
        ++transitions;
        EXPECT_EQ(cur, prev + 1); // regions are contiguous
      }
    }
    // every code below the top one that is reachable within [0,16) appears
    int max_code_in_range = 0;
    for (int c = 0; c < 8; ++c)
      if (dd.magnitudes[static_cast<std::size_t>(c)] < 16) max_code_in_range = c;
    EXPECT_EQ(transitions, max_code_in_range);
  }
}

// Dense sweep: the midpoint approximation stays within the stated bound.
TEST(Lut, ErrorApproximationBound) {
  for (int d = 0; d < kNumDialects; ++d) {
    const Dialect& dd = book().dialect(d);
    for (double v = 0.0; v < 16.0; v += 0.01) {
      const LookupResult r = lookup(luts(), d, v);
      const double mid = bin_index(v) * 0.5 + 0.25;
      const double nearest = dd.magnitudes[static_cast<std::size_t>(r.code)];
      const double exact = (v - nearest) * (v - nearest);
      const double dist = std::abs(mid - nearest);
      EXPECT_LE(std::abs(r.approx_sqerr - exact), 0.25 * (0.5 + 2.0 * dist))
          << "did=" << d << " v=" << v;
    }
  }
}
