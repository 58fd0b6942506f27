#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fb4/baselines.hpp"
#include "fb4/quant.hpp"
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

double block_sse(std::span<const float> values, std::span<const float> recon) {
  double sse = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double e = static_cast<double>(values[i]) - recon[i];
    sse += e * e;
  }
  return sse;
}
} // namespace

TEST(BlockScale, KnownCases) {
  // amax=12 -> e=3, s=0, normalized max 12
  std::vector<float> v{12.0f, -3.0f, 0.5f, 1.0f};
  ScaledBlock sb = block_scale(v);
  EXPECT_EQ(sb.exponent, 0);
  EXPECT_DOUBLE_EQ(sb.normalized[0], 12.0);
  EXPECT_EQ(sb.signs[1], 1);
  EXPECT_FALSE(sb.clamped);

  // amax=0.75 -> e=-1, s=-4, normalized max 12
  std::vector<float> w{0.75f, 0.25f};
  sb = block_scale(w);
  EXPECT_EQ(sb.exponent, -4);
  EXPECT_DOUBLE_EQ(sb.normalized[0], 12.0);

  // all-zero block
  std::vector<float> z{0.0f, -0.0f, 0.0f};
  sb = block_scale(z);
  EXPECT_EQ(sb.exponent, kMinExponent);
  EXPECT_TRUE(sb.all_zero);
  for (double n : sb.normalized) EXPECT_EQ(n, 0.0);
  EXPECT_EQ(sb.signs[1], 0) << "sign of zero is +";

  std::vector<float> bad{1.0f, std::numeric_limits<float>::infinity()};
  EXPECT_THROW(block_scale(bad), std::invalid_argument);
  std::vector<float> nan_in{std::nanf("")};
  EXPECT_THROW(block_scale(nan_in), std::invalid_argument);
}

TEST(BlockScale, NormalizedMaxInRangeWhenUnclamped) {
  Rng rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<float> v(16);
    const double scale = std::pow(2.0, rng.uniform(-10.0, 10.0));
    for (auto& x : v) x = static_cast<float>(rng.gaussian() * scale);
    const ScaledBlock sb = block_scale(v);
    if (sb.all_zero || sb.clamped) continue;
    double mx = 0.0;
    for (double n : sb.normalized) mx = std::max(mx, n);
    EXPECT_GE(mx, 8.0);
    EXPECT_LT(mx, 16.0);
  }
}

TEST(BlockScale, ExponentClampsWithDiagnostic) {
  std::vector<float> tiny(16, 0.0f);
  tiny[0] = 1e-9f; // e-3 far below -16
  ScaledBlock sb = block_scale(tiny);
  EXPECT_EQ(sb.exponent, kMinExponent);
  EXPECT_TRUE(sb.clamped);
  EXPECT_LT(sb.normalized[0], 8.0); // degenerate

  std::vector<float> huge(16, 0.0f);
  huge[0] = 1e12f;
  sb = block_scale(huge);
  EXPECT_EQ(sb.exponent, kMaxExponent);
  EXPECT_TRUE(sb.clamped);
}

TEST(SelectGrouped, GroupMaximaExtraction) {
  // B=8, g=2: group maxima of the magnitudes are {5, 7}
  std::vector<float> v{1.0f, -5.0f, 2.0f, 0.5f, 3.0f, -3.0f, 7.0f, -2.0f};
  const ScaledBlock sb = block_scale(v);
  const int glen = 4;
  double m0 = 0.0, m1 = 0.0;
  for (int i = 0; i < glen; ++i) {
    m0 = std::max(m0, std::abs(static_cast<double>(v[i])));
    m1 = std::max(m1, std::abs(static_cast<double>(v[i + glen])));
  }
  EXPECT_DOUBLE_EQ(m0, 5.0);
  EXPECT_DOUBLE_EQ(m1, 7.0);
  // and the selector accepts the layout
  const BlockLayout layout{8, 2};
  const int did = select_dialect_grouped(sb.normalized, layout, book(), luts());
  EXPECT_GE(did, 0);
  EXPECT_LE(did, 31);
}

TEST(SelectGrouped, ZeroErrorDominance) {
  // group maxima all exactly representable in exactly one candidate -> that
  // candidate wins with uniquely minimal score 0... the midpoint error makes
  // representable integers cost 0.0625, so craft maxima separating dialects.
  // d12 {0,3,5,6,8,9,11,12} vs d13..d15: maxima {12, 8, 6, 9, 12, 8, 6, 9}
  // are all in d12 only.
  std::vector<float> v(16, 0.0f);
  const float maxima[8] = {12, 8, 6, 9, 12, 8, 6, 9};
  for (int gi = 0; gi < 8; ++gi) v[static_cast<std::size_t>(gi * 2)] = maxima[gi];
  const ScaledBlock sb = block_scale(v);
  const int did =
      select_dialect_grouped(sb.normalized, BlockLayout{16, 8}, book(), luts());
  EXPECT_EQ(did, 12);
}

TEST(SelectGrouped, StaysInsideStage1Subbook) {
  Rng rng(11);
  for (int trial = 0; trial < 3000; ++trial) {
    const auto v = oracle::gaussian_outlier_block(rng, 32);
    const ScaledBlock sb = block_scale(v);
    if (sb.all_zero) continue;
    bool degen = false;
    const int did = select_dialect_grouped(sb.normalized, BlockLayout{32, 8},
                                           book(), luts(), &degen);
    ASSERT_FALSE(degen);
    double mx = 0.0;
    for (double n : sb.normalized) mx = std::max(mx, n);
    const int m_block = std::min(15, static_cast<int>(mx));
    EXPECT_EQ(book().dialect(did).range_max, m_block);
  }
}

TEST(SelectGrouped, DegenerateFallsBackToRange8) {
  std::vector<double> normalized(16, 0.0);
  normalized[0] = 3.0; // max < 8, only possible via clamped exponent
  bool degen = false;
  const int did = select_dialect_grouped(normalized, BlockLayout{16, 8},
                                         book(), luts(), &degen);
  EXPECT_TRUE(degen);
  EXPECT_EQ(book().dialect(did).range_max, 8);
}

TEST(SelectExact, RepresentableBlockWinsWithZeroSse) {
  // values drawn from d28 {0,3,6,8,10,12,13,15}
  std::vector<double> normalized{15, 3, 6, 8, 10, 12, 13, 0,
                                 15, 3, 6, 8, 10, 12, 13, 0};
  const int did =
      select_dialect_exact(normalized, book(), SelectionScope::SubBook);
  EXPECT_EQ(oracle::exact_sse(book().dialect(did), normalized), 0.0);
  EXPECT_EQ(did, 28);
  const int did_full =
      select_dialect_exact(normalized, book(), SelectionScope::FullBook);
  EXPECT_EQ(oracle::exact_sse(book().dialect(did_full), normalized), 0.0);
}

TEST(SelectExact, SubBookScopeMatchesBlockRange) {
  Rng rng(13);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto v = oracle::gaussian_outlier_block(rng, 16);
    const ScaledBlock sb = block_scale(v);
    if (sb.all_zero) continue;
    const int did =
        select_dialect_exact(sb.normalized, book(), SelectionScope::SubBook);
    double mx = 0.0;
    for (double n : sb.normalized) mx = std::max(mx, n);
    EXPECT_EQ(book().dialect(did).range_max,
              std::clamp(static_cast<int>(mx), 8, 15));
  }
}

// Oracle chain: full-book exact SSE <= sub-book exact SSE <= grouped pick's
// exact SSE, per block.
TEST(SelectExact, OracleChainDominance) {
  Rng rng(17);
  const BlockLayout layout{32, 8};
  for (int trial = 0; trial < 2000; ++trial) {
    const auto v = oracle::gaussian_outlier_block(rng, 32);
    const ScaledBlock sb = block_scale(v);
    if (sb.all_zero) continue;
    const int d_full =
        select_dialect_exact(sb.normalized, book(), SelectionScope::FullBook);
    const int d_sub =
        select_dialect_exact(sb.normalized, book(), SelectionScope::SubBook);
    const int d_grp =
        select_dialect_grouped(sb.normalized, layout, book(), luts());
    const double sse_full = oracle::exact_sse(book().dialect(d_full), sb.normalized);
    const double sse_sub = oracle::exact_sse(book().dialect(d_sub), sb.normalized);
    const double sse_grp = oracle::exact_sse(book().dialect(d_grp), sb.normalized);
    EXPECT_LE(sse_full, sse_sub + 1e-12);
    EXPECT_LE(sse_sub, sse_grp + 1e-12);
  }
}

TEST(QuantizeBlock, ForcedDialectKnownCase) {
  // values [12, 6, -10, 0.5, 0,0,0,0] with forced d31 {0,1,2,3,4,6,10,15}
  std::vector<float> v{12.0f, 6.0f, -10.0f, 0.5f, 0.0f, 0.0f, 0.0f, 0.0f};
  const QuantizedBlock bq = quantize_block(v, BlockLayout{8, 2}, book(), luts(),
                                           SelectionMode::Grouped, 31);
  EXPECT_EQ(bq.did, 31);
  EXPECT_EQ(bq.exponent, 0);
  EXPECT_EQ(bq.codes[0], 6); // 12 -> 10 (|12-10| < |12-15|)
  EXPECT_EQ(bq.codes[1], 5); // 6 -> 6
  EXPECT_EQ(bq.codes[2], 6); // -10 -> 10, sign 1
  EXPECT_EQ(bq.signs[2], 1);
  EXPECT_EQ(bq.codes[3], 1); // 0.5 ties away from zero -> 1
  for (int i = 4; i < 8; ++i) {
    EXPECT_EQ(bq.codes[static_cast<std::size_t>(i)], 0);
    EXPECT_EQ(bq.signs[static_cast<std::size_t>(i)], 0);
  }
}

TEST(QuantizeBlock, AllZeroBlockEncoding) {
  std::vector<float> z(16, 0.0f);
  const QuantizedBlock bq = quantize_block(z, BlockLayout{16, 8}, book(),
                                           luts(), SelectionMode::Grouped);
  EXPECT_EQ(bq.did, 0);
  EXPECT_EQ(bq.exponent, kMinExponent);
  for (auto c : bq.codes) EXPECT_EQ(c, 0);
  const auto back = dequantize_block(bq, book());
  for (float x : back) EXPECT_EQ(x, 0.0f);
}

TEST(QuantizeBlock, BadForcedDialectThrows) {
  std::vector<float> v(16, 1.0f);
  EXPECT_THROW(quantize_block(v, BlockLayout{16, 8}, book(), luts(),
                              SelectionMode::Grouped, 32),
               std::invalid_argument);
  EXPECT_THROW(quantize_block(v, BlockLayout{16, 8}, book(), luts(),
                              SelectionMode::Grouped, -1),
               std::invalid_argument);
}

TEST(DequantizeBlock, KnownCases) {
  QuantizedBlock bq;
  bq.did = 31; // m=15
  bq.exponent = 0;
  bq.signs.assign(4, 0);
  bq.codes.assign(4, 0);
  bq.codes[0] = 7;
  const auto vals = dequantize_block(bq, book());
  EXPECT_EQ(vals[0], 15.0f);
  EXPECT_EQ(vals[1], 0.0f);
}

TEST(QuantizeBlock, RoundtripIdempotence) {
  Rng rng(19);
  const BlockLayout layout{16, 8};
  for (SelectionMode mode : {SelectionMode::Grouped, SelectionMode::Exact}) {
    for (int trial = 0; trial < 1500; ++trial) {
      const auto v = oracle::gaussian_outlier_block(rng, 16);
      const QuantizedBlock b1 =
          quantize_block(v, layout, book(), luts(), mode);
      const auto v1 = dequantize_block(b1, book());
      const QuantizedBlock b2 =
          quantize_block(v1, layout, book(), luts(), mode);
      const auto v2 = dequantize_block(b2, book());
      EXPECT_EQ(v1, v2) << "mode=" << static_cast<int>(mode)
                        << " trial=" << trial;
    }
  }
}

TEST(QuantizeBlock, ExactModeDominatesGrouped) {
  Rng rng(23);
  const BlockLayout layout{32, 8};
  for (int trial = 0; trial < 1500; ++trial) {
    const auto v = oracle::gaussian_outlier_block(rng, 32);
    const auto bg =
        quantize_block(v, layout, book(), luts(), SelectionMode::Grouped);
    const auto be =
        quantize_block(v, layout, book(), luts(), SelectionMode::Exact);
    const double sse_g = block_sse(v, dequantize_block(bg, book()));
    const double sse_e = block_sse(v, dequantize_block(be, book()));
    EXPECT_LE(sse_e, sse_g + 1e-12);
  }
}

TEST(QuantizeTensor, IdentityOnRepresentableTensors) {
  // values of the form +-magnitude * 2^s where each row's max magnitude is
  // the dialect's range max, so exact selection recovers them exactly
  Rng rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const int did = static_cast<int>(rng.index(32));
    const Dialect& d = book().dialect(did);
    const int s = static_cast<int>(rng.index(16)) - 8;
    std::vector<float> data(64);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const int code = (i % 16 == 0) ? 7 : static_cast<int>(rng.index(8));
      const float mag = static_cast<float>(
          std::ldexp(static_cast<double>(d.magnitudes[static_cast<std::size_t>(code)]), s));
      data[i] = rng.uniform() < 0.5 ? -mag : mag;
    }
    const Tensor t({4, 16}, data);
    const QuantizedTensor qt = quantize_tensor(t, BlockLayout{16, 8}, book(),
                                               luts(), SelectionMode::Exact);
    const Tensor back = dequantize_tensor(qt, book());
    EXPECT_EQ(back.data, t.data) << "did=" << did << " s=" << s;
  }
}

TEST(QuantizeTensor, ElementwiseErrorBound) {
  // |x - x_hat| <= 2^s * max(G/2, 1) with G the chosen dialect's max gap
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> data(96);
    const double scale = std::pow(2.0, rng.uniform(-6.0, 6.0));
    for (auto& x : data) x = static_cast<float>(rng.gaussian() * scale);
    const Tensor t({3, 32}, data);
    const QuantizedTensor qt = quantize_tensor(t, BlockLayout{32, 8}, book(),
                                               luts(), SelectionMode::Grouped);
    const Tensor back = dequantize_tensor(qt, book());
    for (std::size_t bi = 0; bi < qt.blocks.size(); ++bi) {
      const QuantizedBlock& b = qt.blocks[bi];
      const Dialect& d = book().dialect(b.did);
      int gap = 0;
      for (int k = 1; k < 8; ++k)
        gap = std::max(gap, d.magnitudes[static_cast<std::size_t>(k)] -
                                d.magnitudes[static_cast<std::size_t>(k - 1)]);
      const double bound =
          std::ldexp(std::max(gap / 2.0, 1.0), b.exponent);
      for (int i = 0; i < 32; ++i) {
        const std::size_t idx = bi * 32 + static_cast<std::size_t>(i);
        EXPECT_LE(std::abs(static_cast<double>(t.data[idx]) - back.data[idx]),
                  bound + 1e-12);
      }
    }
  }
}

TEST(QuantizeTensor, DeterministicAndPadded) {
  Rng rng(37);
  std::vector<float> data(3 * 21);
  for (auto& x : data) x = static_cast<float>(rng.gaussian());
  const Tensor t({3, 21}, data);
  const BlockLayout layout{16, 8};
  const QuantizedTensor a =
      quantize_tensor(t, layout, book(), luts(), SelectionMode::Grouped);
  const QuantizedTensor b =
      quantize_tensor(t, layout, book(), luts(), SelectionMode::Grouped);
  EXPECT_EQ(a.blocks, b.blocks);
  EXPECT_EQ(a.blocks.size(), 3u * 2u); // ceil(21/16) = 2 blocks per row
  // padding dequantizes away: shape and prefix data preserved
  const Tensor back = dequantize_tensor(a, book());
  EXPECT_EQ(back.shape, t.shape);
  EXPECT_EQ(back.data.size(), t.data.size());
}

TEST(QuantizeTensor, ParallelPathMatchesSerial) {
  // enough blocks to trigger the threaded path; output must not depend on
  // the worker count
  Rng rng(43);
  std::vector<float> data(4096 * 32);
  for (auto& x : data) x = static_cast<float>(rng.gaussian());
  const Tensor t({4096, 32}, data);
  setenv("FB4_THREADS", "4", 1);
  const QuantizedTensor parallel =
      quantize_tensor(t, BlockLayout{32, 8}, book(), luts(), SelectionMode::Grouped);
  setenv("FB4_THREADS", "1", 1);
  const QuantizedTensor serial =
      quantize_tensor(t, BlockLayout{32, 8}, book(), luts(), SelectionMode::Grouped);
  unsetenv("FB4_THREADS");
  EXPECT_EQ(parallel.blocks, serial.blocks);
  const Tensor back = dequantize_tensor(parallel, book());
  EXPECT_EQ(back.shape, t.shape);
}

TEST(QuantizeTensor, BlockErrorsCarryBlockIndex) {
  std::vector<float> data(3 * 16, 1.0f);
  data[37] = std::numeric_limits<float>::quiet_NaN(); // row 2, block 2
  const Tensor t({3, 16}, data);
  try {
    quantize_tensor(t, BlockLayout{16, 8}, book(), luts(), SelectionMode::Grouped);
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("block 2"), std::string::npos)
        << e.what();
  }
}

TEST(QuantizeTensor, HashMismatchRejected) {
  const Tensor t({1, 16}, std::vector<float>(16, 1.0f));
  QuantizedTensor qt = quantize_tensor(t, BlockLayout{16, 8}, book(), luts(),
                                       SelectionMode::Grouped);
  qt.formatbook_hash ^= 1;
  EXPECT_THROW(dequantize_tensor(qt, book()), std::runtime_error);
}

// 1M-element Gaussian tensor: FB4 tensor MSE strictly below the
// single-format MXFP4-style baseline at B=32.
TEST(QuantizeTensor, MillionElementBeatsMxfp4) {
  Rng rng(47);
  std::vector<float> data(1u << 20);
  for (auto& x : data) {
    double g = rng.gaussian();
    if (rng.uniform() < 0.05) g *= 10.0;
    x = static_cast<float>(g);
  }
  const Tensor t({1u << 15, 32}, std::move(data));
  const QuantizedTensor qt =
      quantize_tensor(t, BlockLayout{32, 8}, book(), luts(), SelectionMode::Grouped);
  const Tensor fb4_back = dequantize_tensor(qt, book());
  double sse_fb4 = 0.0, sse_mx = 0.0;
  std::vector<float> buf(32);
  for (std::size_t b = 0; b < t.data.size() / 32; ++b) {
    std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(b * 32),
              t.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * 32),
              buf.begin());
    const auto mx = dequantize_mxfp4(quantize_mxfp4(buf));
    for (int i = 0; i < 32; ++i) {
      const std::size_t idx = b * 32 + static_cast<std::size_t>(i);
      const double e1 = static_cast<double>(t.data[idx]) - fb4_back.data[idx];
      const double e2 = static_cast<double>(buf[static_cast<std::size_t>(i)]) -
                        mx[static_cast<std::size_t>(i)];
      sse_fb4 += e1 * e1;
      sse_mx += e2 * e2;
    }
  }
  EXPECT_LT(sse_fb4, sse_mx);
  // oracle-run fixture: roughly a 35% margin at this block size
  EXPECT_LT(sse_fb4, 0.75 * sse_mx);
}

TEST(IntDot, KnownCasesAndEquivalence) {
  QuantizedBlock zero;
  zero.did = 0;
  zero.exponent = kMinExponent;
  zero.signs.assign(8, 0);
  zero.codes.assign(8, 0);
  EXPECT_EQ(int_dot(zero, zero, book()), 0.0);

  QuantizedBlock a;
  a.did = 31;
  a.exponent = 0;
  a.signs.assign(8, 0);
  a.codes.assign(8, 0);
  a.codes[3] = 6; // value 10
  EXPECT_EQ(int_dot(a, a, book()), 100.0);

  QuantizedBlock short_b = a;
  short_b.codes.resize(4);
  short_b.signs.resize(4);
  EXPECT_THROW(int_dot(a, short_b, book()), std::invalid_argument);

  // integer path == float path, zero ulp
  Rng rng(41);
  const BlockLayout layout{16, 8};
  for (int trial = 0; trial < 2000; ++trial) {
    const auto va = oracle::gaussian_outlier_block(rng, 16);
    const auto vb = oracle::gaussian_outlier_block(rng, 16);
    const auto qa =
        quantize_block(va, layout, book(), luts(), SelectionMode::Grouped);
    const auto qb =
        quantize_block(vb, layout, book(), luts(), SelectionMode::Grouped);
    const auto da = dequantize_block(qa, book());
    const auto db = dequantize_block(qb, book());
    double ref = 0.0;
    for (int i = 0; i < 16; ++i)
      ref += static_cast<double>(da[static_cast<std::size_t>(i)]) *
             static_cast<double>(db[static_cast<std::size_t>(i)]);
    EXPECT_EQ(int_dot(qa, qb, book()), ref);
  }
}
