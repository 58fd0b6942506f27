#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fb4/container.hpp"
#include "fb4/decomp.hpp"
#include "fb4/quant.hpp"
#include "fb4/tokens.hpp"

namespace fb4 {

struct Anchor {
  int tile_id = 0;
  int t = 0, h = 0, w = 0;
  std::vector<std::uint8_t> frame_mask; // factorized case; empty for 3D
};

// Anchors plus the tokens they own. Overlapping window claims resolve to the
// later anchor; edge tokens are never anchors.
struct AnchorSet {
  TokenGrid grid;
  int tile = 4;
  std::vector<Anchor> anchors;
  std::map<int, int> correlated; // token flat index -> owning anchor index

  bool constrains(int token) const {
    if (correlated.count(token)) return true;
    for (const Anchor& a : anchors)
      if (grid.flat(a.t, a.h, a.w) == token) return true;
    return false;
  }

  std::vector<std::uint8_t> constrained_mask() const {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(grid.tokens()), 0);
    for (const Anchor& a : anchors)
      mask[static_cast<std::size_t>(grid.flat(a.t, a.h, a.w))] = 1;
    for (const auto& [token, owner] : correlated)
      mask[static_cast<std::size_t>(token)] = 1;
    return mask;
  }
};

// One dialect per dynamic range, shared by semantically correlated tokens.
struct SedaBook {
  std::array<int, kNumRanges> did_for_range{}; // index m - 8

  int did(int range_max) const {
    if (range_max < kMinRange || range_max > kMaxRange)
      throw std::invalid_argument("sedabook: range out of [8,15]");
    return did_for_range[static_cast<std::size_t>(range_max - kMinRange)];
  }
};

namespace detail {

struct TileRect {
  int h0, w0, h1, w1; // [h0,h1) x [w0,w1)
};

inline TileRect tile_rect(const TokenGrid& g, int tile, int tile_id) {
  const int tiles_w = (g.width + tile - 1) / tile;
  const int th = tile_id / tiles_w;
  const int tw = tile_id % tiles_w;
  return TileRect{th * tile, tw * tile, std::min(g.height, (th + 1) * tile),
                  std::min(g.width, (tw + 1) * tile)};
}

inline int tile_count(const TokenGrid& g, int tile) {
  const int tiles_h = (g.height + tile - 1) / tile;
  const int tiles_w = (g.width + tile - 1) / tile;
  return tiles_h * tiles_w;
}

} // namespace detail

// Factorized attention: per tile, (1) per-frame candidates by mean
// outgoing spatial score (abs transform) within the tile, (2) main anchor by
// highest raw temporal mean, dropping frames whose candidate attends to the
// anchor's frame below tau_temporal, (3) correlated tokens from the local
// window on retained frames with raw spatial score from the anchor position
// above tau_spatial.
inline AnchorSet select_anchors_factorized(const AttentionScores& spatial_attn,
                                           const AttentionScores& temporal_attn,
                                           int tile = 4,
                                           double tau_spatial = 8.0,
                                           double tau_temporal = 3.0,
                                           int window = 5) {
  spatial_attn.check();
  temporal_attn.check();
  if (spatial_attn.kind != AttentionKind::Spatial ||
      temporal_attn.kind != AttentionKind::Temporal)
    throw std::invalid_argument("select_anchors_factorized: wrong attention kinds");
  if (spatial_attn.grid != temporal_attn.grid)
    throw std::invalid_argument("select_anchors_factorized: grid mismatch");
  const TokenGrid& g = spatial_attn.grid;
  if (tile < 1 || tile > g.height || tile > g.width)
    throw std::invalid_argument("select_anchors_factorized: tile larger than frame");

  SalientPlan spatial_plan;
  spatial_plan.transform = ScoreTransform::Abs;
  spatial_plan.agg_tile = tile;
  const std::vector<double> spatial_score = score_tokens(spatial_attn, spatial_plan);

  AnchorSet out;
  out.grid = g;
  out.tile = tile;

  const int n_tiles = detail::tile_count(g, tile);
  for (int tid = 0; tid < n_tiles; ++tid) {
    const detail::TileRect rect = detail::tile_rect(g, tile, tid);

    // (1) one candidate per frame
    struct Candidate { int t, h, w; bool valid; };
    std::vector<Candidate> cands(static_cast<std::size_t>(g.frames),
                                 Candidate{0, 0, 0, false});
    for (int t = 0; t < g.frames; ++t) {
      double best = -std::numeric_limits<double>::infinity();
      for (int h = rect.h0; h < rect.h1; ++h) {
        for (int w = rect.w0; w < rect.w1; ++w) {
          if (g.is_edge(h, w)) continue;
          const double s = spatial_score[static_cast<std::size_t>(g.flat(t, h, w))];
          if (s > best) {
            best = s;
            cands[static_cast<std::size_t>(t)] = Candidate{t, h, w, true};
          }
        }
      }
    }

    // (2) main anchor by raw temporal mean
    int main_frame = -1;
    double best_temporal = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < g.frames; ++t) {
      const Candidate& c = cands[static_cast<std::size_t>(t)];
      if (!c.valid) continue;
      const Matrix& tm = temporal_attn.temporal(g.pos(c.h, c.w));
      double mean = 0.0;
      for (int k = 0; k < g.frames; ++k)
        mean += tm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(k));
      mean /= static_cast<double>(g.frames);
      if (mean > best_temporal) {
        best_temporal = mean;
        main_frame = t;
      }
    }
    if (main_frame < 0) continue; // tile has no non-edge tokens

    const Candidate& main = cands[static_cast<std::size_t>(main_frame)];
    Anchor anchor;
    anchor.tile_id = tid;
    anchor.t = main.t;
    anchor.h = main.h;
    anchor.w = main.w;
    anchor.frame_mask.assign(static_cast<std::size_t>(g.frames), 0);
    anchor.frame_mask[static_cast<std::size_t>(main.t)] = 1; // own frame stays
    for (int t = 0; t < g.frames; ++t) {
      if (t == main.t) continue;
      const Candidate& c = cands[static_cast<std::size_t>(t)];
      if (!c.valid) continue;
      const Matrix& tm = temporal_attn.temporal(g.pos(c.h, c.w));
      const double to_anchor =
          tm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(main.t));
      if (to_anchor >= tau_temporal)
        anchor.frame_mask[static_cast<std::size_t>(t)] = 1;
    }
    out.anchors.push_back(std::move(anchor));
  }

  // (3) correlated tokens; later anchors overwrite overlapping claims
  const int half = window / 2;
  for (std::size_t ai = 0; ai < out.anchors.size(); ++ai) {
    const Anchor& a = out.anchors[ai];
    for (int f = 0; f < g.frames; ++f) {
      if (!a.frame_mask[static_cast<std::size_t>(f)]) continue;
      const Matrix& sm = spatial_attn.spatial(f);
      const std::size_t anchor_pos = static_cast<std::size_t>(g.pos(a.h, a.w));
      for (int h = std::max(0, a.h - half); h <= std::min(g.height - 1, a.h + half); ++h) {
        for (int w = std::max(0, a.w - half); w <= std::min(g.width - 1, a.w + half); ++w) {
          const int token = g.flat(f, h, w);
          if (f == a.t && h == a.h && w == a.w) continue; // the anchor itself
          if (sm.at(anchor_pos, static_cast<std::size_t>(g.pos(h, w))) > tau_spatial)
            out.correlated[token] = static_cast<int>(ai);
        }
      }
    }
  }
  // anchors are never demoted to correlated tokens
  for (const Anchor& a : out.anchors)
    out.correlated.erase(g.flat(a.t, a.h, a.w));
  return out;
}

// 3D attention: the main anchor is the token with the highest raw mean
// outgoing score over its k x k x N region; correlated tokens come from a
// local cuboid window around it.
inline AnchorSet select_anchors_3d(const AttentionScores& attn, int tile = 4,
                                   int window = 5, int temporal_window = 3,
                                   double tau = 5.0) {
  attn.check();
  if (attn.kind != AttentionKind::ThreeD)
    throw std::invalid_argument("select_anchors_3d: expected 3D attention");
  const TokenGrid& g = attn.grid;
  if (tile < 1 || tile > g.height || tile > g.width)
    throw std::invalid_argument("select_anchors_3d: tile larger than frame");

  SalientPlan plan;
  plan.transform = ScoreTransform::Raw;
  plan.agg_tile = tile;
  const std::vector<double> region_score = score_tokens(attn, plan);

  AnchorSet out;
  out.grid = g;
  out.tile = tile;

  const int n_tiles = detail::tile_count(g, tile);
  for (int tid = 0; tid < n_tiles; ++tid) {
    const detail::TileRect rect = detail::tile_rect(g, tile, tid);
    int bt = -1, bh = 0, bw = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < g.frames; ++t) {
      for (int h = rect.h0; h < rect.h1; ++h) {
        for (int w = rect.w0; w < rect.w1; ++w) {
          if (g.is_edge(h, w)) continue;
          const double s = region_score[static_cast<std::size_t>(g.flat(t, h, w))];
          if (s > best) {
            best = s;
            bt = t; bh = h; bw = w;
          }
        }
      }
    }
    if (bt < 0) continue;
    Anchor anchor;
    anchor.tile_id = tid;
    anchor.t = bt;
    anchor.h = bh;
    anchor.w = bw;
    out.anchors.push_back(anchor);
  }

  const Matrix& m3 = attn.three_d();
  const int half = window / 2;
  const int thalf = temporal_window / 2;
  for (std::size_t ai = 0; ai < out.anchors.size(); ++ai) {
    const Anchor& a = out.anchors[ai];
    const std::size_t aq = static_cast<std::size_t>(g.flat(a.t, a.h, a.w));
    for (int t = std::max(0, a.t - thalf); t <= std::min(g.frames - 1, a.t + thalf); ++t) {
      for (int h = std::max(0, a.h - half); h <= std::min(g.height - 1, a.h + half); ++h) {
        for (int w = std::max(0, a.w - half); w <= std::min(g.width - 1, a.w + half); ++w) {
          const int token = g.flat(t, h, w);
          if (token == static_cast<int>(aq)) continue;
          if (m3.at(aq, static_cast<std::size_t>(token)) > tau)
            out.correlated[token] = static_cast<int>(ai);
        }
      }
    }
  }
  for (const Anchor& a : out.anchors)
    out.correlated.erase(g.flat(a.t, a.h, a.w));
  return out;
}

// Bin-count profiling over anchor-token blocks quantized with the normal
// two-stage path: per dynamic range, the most frequently selected dialect.
// Ties keep the lowest DID; ranges never observed fall back to the range's
// lowest DID.
inline SedaBook profile_sedabook(const Tensor& activations,
                                 const AnchorSet& anchors,
                                 const BlockLayout& layout,
                                 const Formatbook& fb, const LutSet& luts,
                                 SelectionMode mode = SelectionMode::Grouped) {
  layout.check();
  if (anchors.anchors.empty())
    throw std::invalid_argument("profile_sedabook: empty anchor set");
  if (activations.rows() != static_cast<std::uint64_t>(anchors.grid.tokens()))
    throw std::invalid_argument("profile_sedabook: token count mismatch");

  std::array<std::array<std::uint64_t, kNumDialects>, kNumRanges> counts{};
  const std::uint64_t bpr =
      (activations.inner() + static_cast<std::uint64_t>(layout.block_size) - 1) /
      static_cast<std::uint64_t>(layout.block_size);
  std::vector<float> buf;
  for (const Anchor& a : anchors.anchors) {
    const std::uint64_t row =
        static_cast<std::uint64_t>(anchors.grid.flat(a.t, a.h, a.w));
    for (std::uint64_t c = 0; c < bpr; ++c) {
      detail::gather_block(activations, row, c, layout.block_size, buf);
      const QuantizedBlock bq = quantize_block(buf, layout, fb, luts, mode);
      const int m = fb.dialect(bq.did).range_max;
      ++counts[static_cast<std::size_t>(m - kMinRange)][bq.did];
    }
  }

  SedaBook book;
  for (int r = 0; r < kNumRanges; ++r) {
    const RangeSpan span = fb.range_span(r + kMinRange);
    int best = span.first; // fallback: lowest DID of the range
    std::uint64_t best_count = 0;
    for (int d = span.first; d < span.first + span.count; ++d) {
      const std::uint64_t c = counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(d)];
      if (c > best_count) {
        best_count = c;
        best = d;
      }
    }
    book.did_for_range[static_cast<std::size_t>(r)] = best;
  }
  return book;
}

// Constrained quantization: blocks of anchor/correlated tokens skip stage-2
// selection and take the SedaBook dialect for their dynamic range. With
// decompose_also, the residual is forced the same way against its own range.
inline QuantizedTensor seda_quantize(const Tensor& t, const AnchorSet& anchors,
                                     const SedaBook& book,
                                     const BlockLayout& layout,
                                     const Formatbook& fb, const LutSet& luts,
                                     SelectionMode mode,
                                     bool decompose_also = false,
                                     ResidualSection* residual_out = nullptr) {
  layout.check();
  if (t.rows() != static_cast<std::uint64_t>(anchors.grid.tokens()) &&
      !(anchors.anchors.empty() && anchors.correlated.empty()))
    throw std::invalid_argument("seda_quantize: token count mismatch");

  QuantizedTensor qt;
  qt.shape = t.shape;
  qt.layout = layout;
  qt.formatbook_hash = luts.formatbook_hash;
  const std::uint64_t rows = t.rows();
  const std::uint64_t bpr = qt.blocks_per_row();
  qt.blocks.resize(static_cast<std::size_t>(rows * bpr));

  std::vector<std::uint8_t> mask;
  if (!anchors.anchors.empty() || !anchors.correlated.empty())
    mask = anchors.constrained_mask();

  if (residual_out) {
    residual_out->token_ids.clear();
    residual_out->blocks.clear();
  }

  std::vector<float> buf;
  for (std::uint64_t r = 0; r < rows; ++r) {
    const bool constrained = r < mask.size() && mask[static_cast<std::size_t>(r)];
    for (std::uint64_t c = 0; c < bpr; ++c) {
      detail::gather_block(t, r, c, layout.block_size, buf);
      const std::size_t bi = static_cast<std::size_t>(r * bpr + c);
      if (!constrained) {
        qt.blocks[bi] = quantize_block(buf, layout, fb, luts, mode);
        continue;
      }
      const ScaledBlock scaled = block_scale(buf);
      const int m_block = detail::block_range(scaled.normalized, nullptr);
      const int forced = book.did(m_block);
      QuantizedBlock primary = detail::encode_scaled(scaled, forced, luts);
      if (!decompose_also) {
        qt.blocks[bi] = std::move(primary);
        continue;
      }
      // residual forced through the book against its own dynamic range
      const std::vector<float> approx = dequantize_block(primary, fb);
      std::vector<float> delta(buf.size());
      for (std::size_t i = 0; i < buf.size(); ++i) delta[i] = buf[i] - approx[i];
      const ScaledBlock rscaled = block_scale(delta);
      const int rm = detail::block_range(rscaled.normalized, nullptr);
      QuantizedBlock residual = detail::encode_scaled(rscaled, book.did(rm), luts);
      qt.blocks[bi] = std::move(primary);
      if (residual_out) {
        if (residual_out->token_ids.empty() ||
            residual_out->token_ids.back() != r)
          residual_out->token_ids.push_back(r);
        residual_out->blocks.push_back(std::move(residual));
      }
    }
  }
  return qt;
}

// ---------------------------------------------------------------------------
// Timestep scheduling
// ---------------------------------------------------------------------------

struct SedaSchedule {
  int total_steps = 100;
  double skip_fraction = 0.2;  // unstable early region: SeDA off
  int update_period = 10;     // mid-run token refresh interval
  double final_fraction = 0.1; // detail region: per-step updates

  void check() const {
    if (total_steps < 1 || update_period < 1)
      throw std::invalid_argument("schedule: steps and period must be >= 1");
    if (skip_fraction < 0.0 || final_fraction < 0.0 ||
        skip_fraction + final_fraction > 1.0)
      throw std::invalid_argument("schedule: fractions outside [0,1]");
  }

  int skip_steps() const {
    return static_cast<int>(std::ceil(skip_fraction * total_steps));
  }
  int final_steps() const {
    return static_cast<int>(std::ceil(final_fraction * total_steps));
  }
};

enum class ScheduleAction { Inactive, Reuse, Update };

inline ScheduleAction schedule_action(int t, const SedaSchedule& sched) {
  sched.check();
  if (t < 0 || t >= sched.total_steps)
    throw std::invalid_argument("schedule_action: step " + std::to_string(t) +
                                " outside [0," +
                                std::to_string(sched.total_steps) + ")");
  const int t_skip = sched.skip_steps();
  if (t < t_skip) return ScheduleAction::Inactive;
  if (t >= sched.total_steps - sched.final_steps()) return ScheduleAction::Update;
  return (t - t_skip) % sched.update_period == 0 ? ScheduleAction::Update
                                                 : ScheduleAction::Reuse;
}

// Mean Euclidean displacement between same-tile anchors, in token units.
inline double anchor_movement(const AnchorSet& prev, const AnchorSet& cur) {
  if (prev.grid != cur.grid || prev.tile != cur.tile)
    throw std::invalid_argument("anchor_movement: tiling mismatch");
  std::map<int, const Anchor*> prev_by_tile;
  for (const Anchor& a : prev.anchors) prev_by_tile[a.tile_id] = &a;
  double sum = 0.0;
  std::size_t matched = 0;
  for (const Anchor& a : cur.anchors) {
    const auto it = prev_by_tile.find(a.tile_id);
    if (it == prev_by_tile.end()) continue;
    const Anchor& p = *it->second;
    const double dt = a.t - p.t;
    const double dh = a.h - p.h;
    const double dw = a.w - p.w;
    sum += std::sqrt(dt * dt + dh * dh + dw * dw);
    ++matched;
  }
  return matched ? sum / static_cast<double>(matched) : 0.0;
}

// ---------------------------------------------------------------------------
// Text sidecar (anchors + correlated tokens + SedaBook) for reproducibility
// ---------------------------------------------------------------------------

inline std::string serialize_sidecar(const AnchorSet& anchors,
                                     const SedaBook& book) {
  std::ostringstream out;
  out << "seda-sidecar v1\n";
  out << "grid " << anchors.grid.frames << ' ' << anchors.grid.height << ' '
      << anchors.grid.width << '\n';
  out << "tile " << anchors.tile << '\n';
  out << "sedabook";
  for (int d : book.did_for_range) out << ' ' << d;
  out << '\n';
  for (const Anchor& a : anchors.anchors) {
    out << "anchor " << a.tile_id << ' ' << a.t << ' ' << a.h << ' ' << a.w
        << " frames";
    if (a.frame_mask.empty()) {
      out << " -";
    } else {
      out << ' ';
      for (std::uint8_t b : a.frame_mask) out << (b ? '1' : '0');
    }
    out << '\n';
  }
  for (const auto& [token, owner] : anchors.correlated)
    out << "corr " << token << ' ' << owner << '\n';
  return out.str();
}

inline std::pair<AnchorSet, SedaBook> parse_sidecar(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "seda-sidecar v1")
    throw std::runtime_error("sidecar: bad header");
  AnchorSet anchors;
  SedaBook book;
  bool saw_grid = false, saw_book = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "grid") {
      ls >> anchors.grid.frames >> anchors.grid.height >> anchors.grid.width;
      saw_grid = true;
    } else if (tag == "tile") {
      ls >> anchors.tile;
    } else if (tag == "sedabook") {
      for (int& d : book.did_for_range) ls >> d;
      saw_book = true;
    } else if (tag == "anchor") {
      Anchor a;
      std::string frames_kw, mask;
      ls >> a.tile_id >> a.t >> a.h >> a.w >> frames_kw >> mask;
      if (frames_kw != "frames") throw std::runtime_error("sidecar: bad anchor line");
      if (mask != "-")
        for (char c : mask) a.frame_mask.push_back(c == '1' ? 1 : 0);
      anchors.anchors.push_back(std::move(a));
    } else if (tag == "corr") {
      int token = 0, owner = 0;
      ls >> token >> owner;
      anchors.correlated[token] = owner;
    } else {
      throw std::runtime_error("sidecar: unknown line tag '" + tag + "'");
    }
    if (!ls && !ls.eof()) throw std::runtime_error("sidecar: parse error: " + line);
  }
  if (!saw_grid || !saw_book)
    throw std::runtime_error("sidecar: missing grid or sedabook");
  anchors.grid.check();
  if (anchors.tile < 1) throw std::runtime_error("sidecar: bad tile");
  for (int r = 0; r < kNumRanges; ++r) {
    const int d = book.did_for_range[static_cast<std::size_t>(r)];
    if (d < 0 || d >= kNumDialects)
      throw std::runtime_error("sidecar: sedabook dialect id out of range");
  }
  for (const Anchor& a : anchors.anchors) {
    if (a.t < 0 || a.t >= anchors.grid.frames || a.h < 0 ||
        a.h >= anchors.grid.height || a.w < 0 || a.w >= anchors.grid.width)
      throw std::runtime_error("sidecar: anchor coordinates out of grid");
    if (!a.frame_mask.empty() &&
        a.frame_mask.size() != static_cast<std::size_t>(anchors.grid.frames))
      throw std::runtime_error("sidecar: frame mask length mismatch");
  }
  for (const auto& [token, owner] : anchors.correlated) {
    if (token < 0 || token >= anchors.grid.tokens())
      throw std::runtime_error("sidecar: correlated token out of grid");
    if (owner < 0 || owner >= static_cast<int>(anchors.anchors.size()))
      throw std::runtime_error("sidecar: correlated owner out of range");
  }
  return {std::move(anchors), std::move(book)};
}

} // namespace fb4
