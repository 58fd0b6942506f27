#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "fb4/container.hpp"
#include "fb4/quant.hpp"
#include "fb4/tokens.hpp"

namespace fb4 {

// Activation decomposition: quantize, form the residual delta, re-quantize
// the delta and add it back. Dequantizes to dq(primary) + dq(residual).
struct DecomposedBlock {
  QuantizedBlock primary;
  QuantizedBlock residual;
};

inline DecomposedBlock decompose_block(std::span<const float> values,
                                       const BlockLayout& layout,
                                       const Formatbook& fb, const LutSet& luts,
                                       SelectionMode mode,
                                       std::optional<int> forced_did_primary = {},
                                       std::optional<int> forced_did_residual = {}) {
  DecomposedBlock out;
  out.primary =
      quantize_block(values, layout, fb, luts, mode, forced_did_primary);
  const std::vector<float> approx = dequantize_block(out.primary, fb);
  std::vector<float> delta(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    delta[i] = values[i] - approx[i];
  out.residual =
      quantize_block(delta, layout, fb, luts, mode, forced_did_residual);
  return out;
}

inline std::vector<float> dequantize_decomposed(const DecomposedBlock& db,
                                                const Formatbook& fb) {
  std::vector<float> out = dequantize_block(db.primary, fb);
  const std::vector<float> res = dequantize_block(db.residual, fb);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += res[i];
  return out;
}

enum class BranchMode { Split, CondOnly };
enum class ScoreTransform { Raw, Relu, Abs };

// Salient-token selection plan: which attention feeds the scores, how they
// are transformed and aggregated, and how the budget is tiled.
struct SalientPlan {
  int token_tile = 4;       // 1x4 tokens in flattened order
  BranchMode branch_mode = BranchMode::Split;
  ScoreTransform transform = ScoreTransform::Abs;
  int agg_tile = 4;         // spatial aggregation tile per frame
};

namespace detail {

inline double apply_transform(double s, ScoreTransform t) {
  switch (t) {
    case ScoreTransform::Relu: return s > 0.0 ? s : 0.0;
    case ScoreTransform::Abs: return std::abs(s);
    case ScoreTransform::Raw: break;
  }
  return s;
}

} // namespace detail

// Mean transformed outgoing attention over a local spatiotemporal
// neighborhood: the agg_tile x agg_tile spatial tile containing the token,
// with temporal extent all frames.
//   Temporal attention: keys are the token's own position across frames.
//   Spatial attention:   keys are the tile members within the token's frame.
//   3D attention:        keys are the tile members across all frames.
inline std::vector<double> score_tokens(const AttentionScores& attn,
                                        const SalientPlan& plan) {
  attn.check();
  const TokenGrid& g = attn.grid;
  std::vector<double> scores(static_cast<std::size_t>(g.tokens()), 0.0);
  const int tile = std::max(1, plan.agg_tile);

  for (int t = 0; t < g.frames; ++t) {
    for (int h = 0; h < g.height; ++h) {
      for (int w = 0; w < g.width; ++w) {
        const int q = g.flat(t, h, w);
        double sum = 0.0;
        std::size_t count = 0;
        const int h0 = (h / tile) * tile;
        const int w0 = (w / tile) * tile;
        const int h1 = std::min(g.height, h0 + tile);
        const int w1 = std::min(g.width, w0 + tile);
        switch (attn.kind) {
          case AttentionKind::Temporal: {
            const Matrix& m = attn.temporal(g.pos(h, w));
            for (int k = 0; k < g.frames; ++k) {
              sum += detail::apply_transform(
                  m.at(static_cast<std::size_t>(t), static_cast<std::size_t>(k)),
                  plan.transform);
              ++count;
            }
            break;
          }
          case AttentionKind::Spatial: {
            const Matrix& m = attn.spatial(t);
            for (int kh = h0; kh < h1; ++kh) {
              for (int kw = w0; kw < w1; ++kw) {
                sum += detail::apply_transform(
                    m.at(static_cast<std::size_t>(g.pos(h, w)),
                         static_cast<std::size_t>(g.pos(kh, kw))),
                    plan.transform);
                ++count;
              }
            }
            break;
          }
          case AttentionKind::ThreeD: {
            const Matrix& m = attn.three_d();
            for (int kt = 0; kt < g.frames; ++kt) {
              for (int kh = h0; kh < h1; ++kh) {
                for (int kw = w0; kw < w1; ++kw) {
                  sum += detail::apply_transform(
                      m.at(static_cast<std::size_t>(q),
                           static_cast<std::size_t>(g.flat(kt, kh, kw))),
                      plan.transform);
                  ++count;
                }
              }
            }
            break;
          }
        }
        scores[static_cast<std::size_t>(q)] = count ? sum / static_cast<double>(count) : 0.0;
      }
    }
  }
  return scores;
}

namespace detail {

// Top-1 per consecutive run of tile_size entries of `candidates`; ties keep
// the lowest token index.
inline std::vector<std::size_t> top1_per_tile(std::span<const double> scores,
                                              std::span<const std::size_t> candidates,
                                              int tile_size) {
  std::vector<std::size_t> selected;
  for (std::size_t start = 0; start < candidates.size();
       start += static_cast<std::size_t>(tile_size)) {
    const std::size_t end =
        std::min(candidates.size(), start + static_cast<std::size_t>(tile_size));
    std::size_t best = candidates[start];
    for (std::size_t i = start + 1; i < end; ++i)
      if (scores[candidates[i]] > scores[best]) best = candidates[i];
    selected.push_back(best);
  }
  return selected;
}

} // namespace detail

// Split mode: one salient token per 1xtoken_tile tile over all tokens.
// CondOnly: the same total budget drawn from conditional tokens only, using
// half-size tiles within that branch.
inline std::vector<std::size_t> select_salient(
    std::span<const double> scores, const SalientPlan& plan,
    std::span<const BranchLabel> branches) {
  if (scores.size() != branches.size())
    throw std::invalid_argument("select_salient: scores/branches size mismatch");
  if (plan.token_tile < 1)
    throw std::invalid_argument("select_salient: bad token tile");

  if (plan.branch_mode == BranchMode::Split) {
    std::vector<std::size_t> all(scores.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return detail::top1_per_tile(scores, all, plan.token_tile);
  }

  std::vector<std::size_t> cond;
  for (std::size_t i = 0; i < branches.size(); ++i)
    if (branches[i] == BranchLabel::Cond) cond.push_back(i);
  if (cond.empty())
    throw std::invalid_argument(
        "select_salient: cond_only needs conditional tokens");
  const int tile = std::max(1, plan.token_tile / 2);
  return detail::top1_per_tile(scores, cond, tile);
}

struct DecomposedTensor {
  QuantizedTensor primary;
  ResidualSection residual; // indexed by salient token id
};

// Blocks of salient tokens are decomposed; everything else quantizes
// normally. Single-token tensors are vector activations and always fully
// decompose.
inline DecomposedTensor quantize_with_decomposition(
    const Tensor& t, const std::set<std::size_t>& salient,
    const BlockLayout& layout, const Formatbook& fb, const LutSet& luts,
    SelectionMode mode) {
  layout.check();
  if (t.shape.empty())
    throw std::invalid_argument("quantize_with_decomposition: rank >= 1");
  DecomposedTensor out;
  out.primary.shape = t.shape;
  out.primary.layout = layout;
  out.primary.formatbook_hash = luts.formatbook_hash;
  const std::uint64_t rows = t.rows();
  const std::uint64_t bpr = out.primary.blocks_per_row();
  out.primary.blocks.resize(static_cast<std::size_t>(rows * bpr));

  const bool vector_activation = rows == 1;
  std::vector<std::uint64_t> decomposed_rows;
  for (std::uint64_t r = 0; r < rows; ++r) {
    if (vector_activation || salient.count(static_cast<std::size_t>(r)))
      decomposed_rows.push_back(r);
  }
  out.residual.token_ids = decomposed_rows;
  out.residual.blocks.reserve(decomposed_rows.size() *
                              static_cast<std::size_t>(bpr));

  std::vector<float> buf;
  std::size_t next_decomposed = 0;
  for (std::uint64_t r = 0; r < rows; ++r) {
    const bool decompose = next_decomposed < decomposed_rows.size() &&
                           decomposed_rows[next_decomposed] == r;
    for (std::uint64_t c = 0; c < bpr; ++c) {
      detail::gather_block(t, r, c, layout.block_size, buf);
      const std::size_t bi = static_cast<std::size_t>(r * bpr + c);
      if (decompose) {
        DecomposedBlock db = decompose_block(buf, layout, fb, luts, mode);
        out.primary.blocks[bi] = std::move(db.primary);
        out.residual.blocks.push_back(std::move(db.residual));
      } else {
        out.primary.blocks[bi] = quantize_block(buf, layout, fb, luts, mode);
      }
    }
    if (decompose) ++next_decomposed;
  }
  return out;
}

// Reconstruction including the residual side-stream.
inline Tensor dequantize_decomposed_tensor(const DecomposedTensor& dt,
                                           const Formatbook& fb) {
  Tensor t = dequantize_tensor(dt.primary, fb);
  const std::uint64_t bpr = dt.primary.blocks_per_row();
  const std::uint64_t inner = dt.primary.inner();
  const int B = dt.primary.layout.block_size;
  for (std::size_t ti = 0; ti < dt.residual.token_ids.size(); ++ti) {
    const std::uint64_t row = dt.residual.token_ids[ti];
    for (std::uint64_t c = 0; c < bpr; ++c) {
      const QuantizedBlock& rb = dt.residual.blocks[ti * bpr + c];
      const std::vector<float> vals = dequantize_block(rb, fb);
      const std::uint64_t start = c * static_cast<std::uint64_t>(B);
      const std::uint64_t len =
          start >= inner ? 0 : std::min<std::uint64_t>(vals.size(), inner - start);
      for (std::uint64_t i = 0; i < len; ++i)
        t.data[static_cast<std::size_t>(row * inner + start + i)] +=
            vals[static_cast<std::size_t>(i)];
    }
  }
  return t;
}

} // namespace fb4
