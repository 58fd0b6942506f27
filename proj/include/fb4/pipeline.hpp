#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fb4/decomp.hpp"
#include "fb4/quant.hpp"
#include "fb4/rng.hpp"
#include "fb4/seda.hpp"
#include "fb4/tokens.hpp"

namespace fb4 {

// Synthetic stand-in for a video DiT step: mixture-of-Gaussians token
// activations with heavy-tailed outliers, and low-rank Q.K^T attention whose
// cluster structure is planted so anchor recovery is checkable.
struct SceneConfig {
  int frames = 8;
  int height = 16;
  int width = 16;
  int feature_dim = 64;
  int clusters = 3;
  double outlier_rate = 0.05;
  double outlier_scale = 10.0;
  double branch_split = 0.5; // leading fraction of tokens labeled Cond
  bool factorized = true;    // factorized spatial/temporal vs full 3D attention

  // attention synthesis knobs
  double query_gain_base = 1.0;
  double query_gain_peak = 4.0;
  double query_gain_radius = 1.5; // tokens
  double centroid_boost = 1.5;    // planted dominance of each cluster centroid
  double embed_noise = 0.02;
  double attn_gain = 4.0;

  void check() const {
    TokenGrid{frames, height, width}.check();
    if (feature_dim < 1) throw std::invalid_argument("scene: feature_dim >= 1");
    if (clusters < 1) throw std::invalid_argument("scene: clusters >= 1");
    if (outlier_rate < 0.0 || outlier_rate > 1.0)
      throw std::invalid_argument("scene: outlier_rate in [0,1]");
    if (branch_split < 0.0 || branch_split > 1.0)
      throw std::invalid_argument("scene: branch_split in [0,1]");
  }
};

struct Scene {
  TokenTensor tokens;
  std::optional<AttentionScores> spatial;
  std::optional<AttentionScores> temporal;
  std::optional<AttentionScores> three_d;
  std::vector<int> cluster_centroids; // flat token index nearest each seed
};

namespace detail {

inline constexpr int kEmbedRank = 8;
inline constexpr double kTemporalDistanceWeight = 0.25;

struct SeedPoint {
  double t, h, w;
};

// Cluster seeds live in the non-edge interior so planted structure is
// recoverable by anchor selection.
inline std::vector<SeedPoint> init_seeds(const SceneConfig& cfg, Rng& rng) {
  std::vector<SeedPoint> seeds(static_cast<std::size_t>(cfg.clusters));
  for (auto& s : seeds) {
    s.t = rng.uniform(0.0, cfg.frames - 1.0);
    s.h = rng.uniform(1.0, std::max(1.0, cfg.height - 2.0));
    s.w = rng.uniform(1.0, std::max(1.0, cfg.width - 2.0));
  }
  return seeds;
}

inline void clamp_seed(const SceneConfig& cfg, SeedPoint& s) {
  s.t = std::clamp(s.t, 0.0, cfg.frames - 1.0);
  s.h = std::clamp(s.h, 1.0, std::max(1.0, cfg.height - 2.0));
  s.w = std::clamp(s.w, 1.0, std::max(1.0, cfg.width - 2.0));
}

inline double seed_distance_sq(const SeedPoint& s, int t, int h, int w) {
  const double dt = s.t - t;
  const double dh = s.h - h;
  const double dw = s.w - w;
  return kTemporalDistanceWeight * dt * dt + dh * dh + dw * dw;
}

struct SceneEmbedding {
  std::vector<int> cluster_of;              // per token
  std::vector<std::array<double, kEmbedRank>> u; // key embedding per token
  std::vector<double> query_gain;           // alpha per token
};

inline SceneEmbedding embed_tokens(const SceneConfig& cfg,
                                   const std::vector<SeedPoint>& seeds,
                                   Rng& rng) {
  const TokenGrid grid{cfg.frames, cfg.height, cfg.width};
  SceneEmbedding emb;
  const std::size_t n = static_cast<std::size_t>(grid.tokens());
  emb.cluster_of.resize(n);
  emb.u.resize(n);
  emb.query_gain.resize(n);
  for (int t = 0; t < cfg.frames; ++t) {
    for (int h = 0; h < cfg.height; ++h) {
      for (int w = 0; w < cfg.width; ++w) {
        const std::size_t q = static_cast<std::size_t>(grid.flat(t, h, w));
        int best = 0;
        double best_d = seed_distance_sq(seeds[0], t, h, w);
        for (std::size_t j = 1; j < seeds.size(); ++j) {
          const double d = seed_distance_sq(seeds[j], t, h, w);
          if (d < best_d) {
            best_d = d;
            best = static_cast<int>(j);
          }
        }
        emb.cluster_of[q] = best;
        // one-hot cluster direction plus small noise keeps same-cluster dot
        // products near 1 and cross-cluster products near 0
        auto& u = emb.u[q];
        u.fill(0.0);
        u[static_cast<std::size_t>(best % kEmbedRank)] = 1.0;
        for (double& x : u) x += cfg.embed_noise * rng.gaussian();
        emb.query_gain[q] =
            cfg.query_gain_base +
            cfg.query_gain_peak *
                std::exp(-best_d / (2.0 * cfg.query_gain_radius *
                                    cfg.query_gain_radius));
      }
    }
  }
  // plant each centroid's dominance: the token nearest its seed gets a
  // boosted query gain, so peak mean outgoing attention is guaranteed there
  for (const SeedPoint& s : seeds) {
    const int t = std::clamp(static_cast<int>(std::llround(s.t)), 0, cfg.frames - 1);
    const int h = std::clamp(static_cast<int>(std::llround(s.h)), 1,
                             std::max(1, cfg.height - 2));
    const int w = std::clamp(static_cast<int>(std::llround(s.w)), 1,
                             std::max(1, cfg.width - 2));
    emb.query_gain[static_cast<std::size_t>(grid.flat(t, h, w))] *=
        cfg.centroid_boost;
  }
  return emb;
}

inline double key_dot(const std::array<double, kEmbedRank>& a,
                      const std::array<double, kEmbedRank>& b) {
  double s = 0.0;
  for (int i = 0; i < kEmbedRank; ++i)
    s += a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
  return s;
}

} // namespace detail

// Deterministic scene render from seed positions. The same cfg, seeds and
// rng_seed always produce identical outputs.
inline Scene render_scene(const SceneConfig& cfg,
                          const std::vector<detail::SeedPoint>& seeds,
                          std::uint64_t rng_seed) {
  cfg.check();
  const TokenGrid grid{cfg.frames, cfg.height, cfg.width};
  const std::size_t n = static_cast<std::size_t>(grid.tokens());

  Rng rng(rng_seed);
  const detail::SceneEmbedding emb = detail::embed_tokens(cfg, seeds, rng);

  // cluster centers in feature space
  std::vector<std::vector<double>> centers(
      static_cast<std::size_t>(cfg.clusters),
      std::vector<double>(static_cast<std::size_t>(cfg.feature_dim)));
  for (auto& c : centers)
    for (double& x : c) x = rng.gaussian(0.0, 2.0);

  Scene scene;
  scene.tokens.grid = grid;
  scene.tokens.feature_dim = cfg.feature_dim;
  scene.tokens.values.resize(n * static_cast<std::size_t>(cfg.feature_dim));
  scene.tokens.branches.resize(n);
  const std::size_t cond_count = static_cast<std::size_t>(
      std::llround(cfg.branch_split * static_cast<double>(n)));
  for (std::size_t q = 0; q < n; ++q) {
    scene.tokens.branches[q] =
        q < cond_count ? BranchLabel::Cond : BranchLabel::Uncond;
    const auto& center = centers[static_cast<std::size_t>(emb.cluster_of[q])];
    for (int d = 0; d < cfg.feature_dim; ++d) {
      double v = center[static_cast<std::size_t>(d)] + rng.gaussian(0.0, 0.5);
      if (rng.uniform() < cfg.outlier_rate) v *= cfg.outlier_scale;
      scene.tokens.values[q * static_cast<std::size_t>(cfg.feature_dim) +
                          static_cast<std::size_t>(d)] = static_cast<float>(v);
    }
  }

  // centroid tokens: nearest grid token to each seed
  for (const auto& s : seeds) {
    const int t = std::clamp(static_cast<int>(std::llround(s.t)), 0, cfg.frames - 1);
    const int h = std::clamp(static_cast<int>(std::llround(s.h)), 1,
                             std::max(1, cfg.height - 2));
    const int w = std::clamp(static_cast<int>(std::llround(s.w)), 1,
                             std::max(1, cfg.width - 2));
    scene.cluster_centroids.push_back(grid.flat(t, h, w));
  }

  // attention: S[q,k] = gain * alpha_q * (u_q . u_k), i.e. Q.K^T with
  // Q = gain * alpha * u and K = u
  const auto score = [&](int q, int k) {
    return cfg.attn_gain * emb.query_gain[static_cast<std::size_t>(q)] *
           detail::key_dot(emb.u[static_cast<std::size_t>(q)],
                           emb.u[static_cast<std::size_t>(k)]);
  };

  if (cfg.factorized) {
    AttentionScores spatial;
    spatial.kind = AttentionKind::Spatial;
    spatial.grid = grid;
    const std::size_t hw = static_cast<std::size_t>(grid.frame_tokens());
    spatial.mats.assign(static_cast<std::size_t>(cfg.frames), Matrix(hw, hw));
    for (int t = 0; t < cfg.frames; ++t)
      for (int h = 0; h < cfg.height; ++h)
        for (int w = 0; w < cfg.width; ++w)
          for (int h2 = 0; h2 < cfg.height; ++h2)
            for (int w2 = 0; w2 < cfg.width; ++w2)
              spatial.mats[static_cast<std::size_t>(t)].at(
                  static_cast<std::size_t>(grid.pos(h, w)),
                  static_cast<std::size_t>(grid.pos(h2, w2))) =
                  score(grid.flat(t, h, w), grid.flat(t, h2, w2));

    AttentionScores temporal;
    temporal.kind = AttentionKind::Temporal;
    temporal.grid = grid;
    temporal.mats.assign(hw, Matrix(static_cast<std::size_t>(cfg.frames),
                                    static_cast<std::size_t>(cfg.frames)));
    for (int h = 0; h < cfg.height; ++h)
      for (int w = 0; w < cfg.width; ++w)
        for (int t = 0; t < cfg.frames; ++t)
          for (int t2 = 0; t2 < cfg.frames; ++t2)
            temporal.mats[static_cast<std::size_t>(grid.pos(h, w))].at(
                static_cast<std::size_t>(t), static_cast<std::size_t>(t2)) =
                score(grid.flat(t, h, w), grid.flat(t2, h, w));

    scene.spatial = std::move(spatial);
    scene.temporal = std::move(temporal);
  } else {
    AttentionScores attn;
    attn.kind = AttentionKind::ThreeD;
    attn.grid = grid;
    attn.mats.assign(1, Matrix(n, n));
    for (std::size_t q = 0; q < n; ++q)
      for (std::size_t k = 0; k < n; ++k)
        attn.mats[0].at(q, k) = score(static_cast<int>(q), static_cast<int>(k));
    scene.three_d = std::move(attn);
  }
  return scene;
}

inline Scene gen_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.check();
  Rng seed_rng(seed);
  const auto seeds = detail::init_seeds(cfg, seed_rng);
  return render_scene(cfg, seeds, seed ^ 0x5ce11e5ULL);
}

// ---------------------------------------------------------------------------
// Toy denoising loop
// ---------------------------------------------------------------------------

struct DriftConfig {
  double early = 1.2; // tokens per step while attention is still unstable
  double mid = 0.12;
  double late = 0.5;  // detail refinement keeps anchors moving a little
};

struct RunConfig {
  SceneConfig scene;
  std::uint64_t seed = 42;
  BlockLayout layout{32, 8};
  SelectionMode mode = SelectionMode::Grouped;
  int num_layers = 3;
  std::vector<int> decomp_targets; // layers with salient-token decomposition
  std::vector<int> seda_targets;   // layers with SeDA
  SalientPlan plan;                // scoring/tiling for salient selection
  ScoreTransform temporal_transform = ScoreTransform::Relu;
  bool seda_enabled = true;
  SedaSchedule schedule;
  int seda_tile = 4;
  int seda_window = 5;
  int seda_temporal_window = 3;
  double tau_spatial = 8.0;
  double tau_temporal = 3.0;
  double tau_3d = 5.0;
  bool seda_decompose_also = false;
  DriftConfig drift;

  void check() const {
    scene.check();
    layout.check();
    schedule.check();
    if (num_layers < 1) throw std::invalid_argument("run: num_layers >= 1");
    for (int l : decomp_targets)
      if (l < 0 || l >= num_layers)
        throw std::invalid_argument("run: decomp target out of range");
    for (int l : seda_targets)
      if (l < 0 || l >= num_layers)
        throw std::invalid_argument("run: seda target out of range");
  }
};

struct StepRow {
  int step = 0;
  ScheduleAction action = ScheduleAction::Inactive;
  double mean_sse = 0.0;
  double anchor_movement = 0.0;
  std::array<std::uint64_t, kNumRanges> range_hist{};
};

struct RunReport {
  std::vector<StepRow> rows;
  std::array<std::uint64_t, kNumDialects> did_usage{};
  std::uint64_t output_hash = 0; // FNV over all packed layer outputs
  double mean_sse = 0.0;
  int update_steps = 0;

  std::string csv() const {
    std::ostringstream out;
    out << "step,action,mean_sse,anchor_movement";
    for (int m = kMinRange; m <= kMaxRange; ++m) out << ",range_m" << m;
    out << '\n';
    for (const StepRow& r : rows) {
      const char* action = r.action == ScheduleAction::Inactive ? "inactive"
                           : r.action == ScheduleAction::Reuse  ? "reuse"
                                                                : "update";
      out << r.step << ',' << action << ',' << r.mean_sse << ','
          << r.anchor_movement;
      for (auto c : r.range_hist) out << ',' << c;
      out << '\n';
    }
    return out.str();
  }

  std::string summary() const {
    std::ostringstream out;
    out << "steps: " << rows.size() << '\n';
    out << "anchor updates: " << update_steps << '\n';
    out << "mean sse: " << mean_sse << '\n';
    out << "output hash: " << std::hex << output_hash << std::dec << '\n';
    out << "dialect usage:";
    for (std::size_t d = 0; d < did_usage.size(); ++d)
      out << ' ' << d << ':' << did_usage[d];
    out << '\n';
    return out.str();
  }
};

namespace detail {

inline std::uint64_t fnv_update(std::uint64_t h,
                                std::span<const std::uint8_t> bytes) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Per-layer channel gains stand in for distinct layer input distributions.
inline std::vector<float> layer_gains(std::uint64_t seed, int layer, int dim) {
  Rng rng(seed ^ (0xabcd1234ULL + static_cast<std::uint64_t>(layer) * 0x9e3779b97f4a7c15ULL));
  std::vector<float> g(static_cast<std::size_t>(dim));
  for (auto& x : g) x = static_cast<float>(std::exp(0.4 * rng.gaussian()));
  return g;
}

inline double drift_rate(int t, const SedaSchedule& sched, const DriftConfig& d) {
  if (t < sched.skip_steps()) return d.early;
  if (t >= sched.total_steps - sched.final_steps()) return d.late;
  return d.mid;
}

} // namespace detail

// One layer quantization combining SeDA constraints and salient-token
// decomposition, matching the per-token rules of seda_quantize and
// quantize_with_decomposition.
inline QuantizedTensor quantize_layer(
    const Tensor& act, const BlockLayout& layout, const Formatbook& fb,
    const LutSet& luts, SelectionMode mode,
    const std::set<std::size_t>* salient,          // null: no decomposition
    const AnchorSet* anchors, const SedaBook* book, // null: no SeDA
    bool seda_decompose_also, ResidualSection* residual_out) {
  QuantizedTensor qt;
  qt.shape = act.shape;
  qt.layout = layout;
  qt.formatbook_hash = luts.formatbook_hash;
  const std::uint64_t rows = act.rows();
  const std::uint64_t bpr = qt.blocks_per_row();
  qt.blocks.resize(static_cast<std::size_t>(rows * bpr));
  if (residual_out) {
    residual_out->token_ids.clear();
    residual_out->blocks.clear();
  }

  std::vector<std::uint8_t> constrained;
  if (anchors && book) constrained = anchors->constrained_mask();

  std::vector<float> buf;
  for (std::uint64_t r = 0; r < rows; ++r) {
    const bool is_constrained =
        r < constrained.size() && constrained[static_cast<std::size_t>(r)];
    const bool is_salient =
        salient && (rows == 1 || salient->count(static_cast<std::size_t>(r)));
    const bool decompose = is_constrained ? seda_decompose_also : is_salient;
    bool row_has_residual = false;
    for (std::uint64_t c = 0; c < bpr; ++c) {
      detail::gather_block(act, r, c, layout.block_size, buf);
      const std::size_t bi = static_cast<std::size_t>(r * bpr + c);
      std::optional<int> forced;
      ScaledBlock scaled;
      if (is_constrained) {
        scaled = block_scale(buf);
        forced = book->did(detail::block_range(scaled.normalized, nullptr));
      }
      QuantizedBlock primary =
          is_constrained
              ? detail::encode_scaled(scaled, *forced, luts)
              : quantize_block(buf, layout, fb, luts, mode);
      if (decompose) {
        const std::vector<float> approx = dequantize_block(primary, fb);
        std::vector<float> delta(buf.size());
        for (std::size_t i = 0; i < buf.size(); ++i)
          delta[i] = buf[i] - approx[i];
        QuantizedBlock residual;
        if (is_constrained) {
          const ScaledBlock rscaled = block_scale(delta);
          residual = detail::encode_scaled(
              rscaled,
              book->did(detail::block_range(rscaled.normalized, nullptr)),
              luts);
        } else {
          residual = quantize_block(delta, layout, fb, luts, mode);
        }
        if (residual_out) {
          if (!row_has_residual) {
            residual_out->token_ids.push_back(r);
            row_has_residual = true;
          }
          residual_out->blocks.push_back(std::move(residual));
        }
      }
      qt.blocks[bi] = std::move(primary);
    }
  }
  return qt;
}

inline RunReport run_denoise_loop(const RunConfig& cfg, const Formatbook& fb,
                                  const LutSet& luts) {
  cfg.check();
  RunReport report;
  Rng master(cfg.seed);
  auto seeds = detail::init_seeds(cfg.scene, master);

  const bool seda_on = cfg.seda_enabled && !cfg.seda_targets.empty();
  std::optional<AnchorSet> anchors;
  std::optional<AnchorSet> prev_anchors;
  std::vector<SedaBook> books(static_cast<std::size_t>(cfg.num_layers));
  std::vector<bool> book_ready(static_cast<std::size_t>(cfg.num_layers), false);

  std::vector<std::vector<float>> gains;
  for (int l = 0; l < cfg.num_layers; ++l)
    gains.push_back(detail::layer_gains(cfg.seed, l, cfg.scene.feature_dim));

  std::uint64_t hash = 0xcbf29ce484222325ULL;
  double total_sse = 0.0;
  std::uint64_t total_elems = 0;

  for (int t = 0; t < cfg.schedule.total_steps; ++t) {
    // drift: fast early, slow mid, moderate late (U-shape)
    const double rate = detail::drift_rate(t, cfg.schedule, cfg.drift);
    for (auto& s : seeds) {
      const double angle = master.uniform(0.0, 2.0 * std::numbers::pi);
      s.h += rate * std::cos(angle);
      s.w += rate * std::sin(angle);
      s.t += 0.25 * rate * (master.uniform() - 0.5);
      detail::clamp_seed(cfg.scene, s);
    }
    const Scene scene =
        render_scene(cfg.scene, seeds, cfg.seed ^ (0x51ab5ULL + static_cast<std::uint64_t>(t)));

    StepRow row;
    row.step = t;
    row.action = seda_on ? schedule_action(t, cfg.schedule) : ScheduleAction::Inactive;

    if (row.action == ScheduleAction::Update) {
      prev_anchors = anchors;
      if (cfg.scene.factorized) {
        anchors = select_anchors_factorized(*scene.spatial, *scene.temporal,
                                            cfg.seda_tile, cfg.tau_spatial,
                                            cfg.tau_temporal, cfg.seda_window);
      } else {
        anchors = select_anchors_3d(*scene.three_d, cfg.seda_tile,
                                    cfg.seda_window, cfg.seda_temporal_window,
                                    cfg.tau_3d);
      }
      if (prev_anchors)
        row.anchor_movement = anchor_movement(*prev_anchors, *anchors);
      ++report.update_steps;
    }

    // salient tokens for decomposition targets
    std::optional<std::set<std::size_t>> salient;
    if (!cfg.decomp_targets.empty()) {
      SalientPlan plan = cfg.plan;
      std::vector<double> scores;
      if (cfg.scene.factorized) {
        // temporal attention feeds the scoring, with its own transform
        plan.transform = cfg.temporal_transform;
        scores = score_tokens(*scene.temporal, plan);
      } else {
        scores = score_tokens(*scene.three_d, plan);
      }
      const auto sel = select_salient(scores, plan, scene.tokens.branches);
      salient.emplace(sel.begin(), sel.end());
    }

    const Tensor base = scene.tokens.as_tensor();
    double step_sse = 0.0;
    std::uint64_t step_elems = 0;
    for (int l = 0; l < cfg.num_layers; ++l) {
      // layer activation: per-channel gains on the token features
      Tensor act = base;
      const auto& g = gains[static_cast<std::size_t>(l)];
      for (std::size_t i = 0; i < act.data.size(); ++i)
        act.data[i] *= g[i % g.size()];

      const bool layer_seda = seda_on && anchors.has_value() &&
                              row.action != ScheduleAction::Inactive &&
                              std::count(cfg.seda_targets.begin(),
                                         cfg.seda_targets.end(), l) > 0;
      const bool layer_decomp = std::count(cfg.decomp_targets.begin(),
                                           cfg.decomp_targets.end(), l) > 0;

      if (layer_seda && row.action == ScheduleAction::Update) {
        books[static_cast<std::size_t>(l)] =
            profile_sedabook(act, *anchors, cfg.layout, fb, luts, cfg.mode);
        book_ready[static_cast<std::size_t>(l)] = true;
      }
      const bool use_seda = layer_seda && book_ready[static_cast<std::size_t>(l)];

      ResidualSection residual;
      const QuantizedTensor qt = quantize_layer(
          act, cfg.layout, fb, luts, cfg.mode,
          layer_decomp && salient ? &*salient : nullptr,
          use_seda ? &*anchors : nullptr,
          use_seda ? &books[static_cast<std::size_t>(l)] : nullptr,
          cfg.seda_decompose_also && layer_decomp,
          layer_decomp || (use_seda && cfg.seda_decompose_also) ? &residual
                                                                : nullptr);

      for (const QuantizedBlock& b : qt.blocks) {
        ++report.did_usage[b.did];
        ++row.range_hist[static_cast<std::size_t>(fb.dialect(b.did).range_max - kMinRange)];
      }

      // reconstruction error against the unquantized activation
      DecomposedTensor dt{qt, residual};
      const Tensor recon = dequantize_decomposed_tensor(dt, fb);
      for (std::size_t i = 0; i < act.data.size(); ++i) {
        const double e = static_cast<double>(act.data[i]) - recon.data[i];
        step_sse += e * e;
      }
      step_elems += act.data.size();

      const auto packed = pack(qt, residual.token_ids.empty() ? nullptr : &residual);
      hash = detail::fnv_update(hash, packed);
    }

    row.mean_sse = step_sse / static_cast<double>(step_elems);
    total_sse += step_sse;
    total_elems += step_elems;
    report.rows.push_back(row);
  }

  report.output_hash = hash;
  report.mean_sse = total_sse / static_cast<double>(total_elems);
  return report;
}

} // namespace fb4
