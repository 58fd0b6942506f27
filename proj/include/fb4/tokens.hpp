#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fb4/tensor.hpp"

namespace fb4 {

// Spatiotemporal token geometry: frames x height x width, flattened
// row-major as (t, h, w).
struct TokenGrid {
  int frames = 1;
  int height = 1;
  int width = 1;

  int tokens() const { return frames * height * width; }
  int frame_tokens() const { return height * width; }
  int flat(int t, int h, int w) const {
    return (t * height + h) * width + w;
  }
  int pos(int h, int w) const { return h * width + w; }
  void unflatten(int idx, int& t, int& h, int& w) const {
    w = idx % width;
    h = (idx / width) % height;
    t = idx / (width * height);
  }
  bool operator==(const TokenGrid&) const = default;

  void check() const {
    if (frames < 1 || height < 1 || width < 1)
      throw std::invalid_argument("token grid: dims must be positive");
  }

  // Edge tokens: the outermost ring of each frame.
  bool is_edge(int h, int w) const {
    return h == 0 || w == 0 || h == height - 1 || w == width - 1;
  }
};

// Classifier-free-guidance branch a token belongs to.
enum class BranchLabel : std::uint8_t { Cond = 0, Uncond = 1 };

// Token activations: tokens x feature_dim, with per-token branch labels.
struct TokenTensor {
  TokenGrid grid;
  int feature_dim = 0;
  std::vector<float> values;          // tokens x D, row-major
  std::vector<BranchLabel> branches;  // per token

  Tensor as_tensor() const {
    return Tensor({static_cast<std::uint64_t>(grid.tokens()),
                   static_cast<std::uint64_t>(feature_dim)},
                  values);
  }
};

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

enum class AttentionKind { Spatial, Temporal, ThreeD };

// Raw pre-softmax attention scores (Q.K^T), head-averaged.
//   Spatial:  one (H*W x H*W) matrix per frame.
//   Temporal: one (N x N) matrix per spatial position.
//   ThreeD:   one (T*H*W x T*H*W) matrix.
struct AttentionScores {
  AttentionKind kind = AttentionKind::Spatial;
  TokenGrid grid;
  std::vector<Matrix> mats;

  const Matrix& spatial(int frame) const {
    require(AttentionKind::Spatial, frame, grid.frames);
    return mats[static_cast<std::size_t>(frame)];
  }
  const Matrix& temporal(int position) const {
    require(AttentionKind::Temporal, position, grid.frame_tokens());
    return mats[static_cast<std::size_t>(position)];
  }
  const Matrix& three_d() const {
    require(AttentionKind::ThreeD, 0, 1);
    return mats[0];
  }

  void check() const {
    grid.check();
    const std::size_t hw = static_cast<std::size_t>(grid.frame_tokens());
    const std::size_t n = static_cast<std::size_t>(grid.frames);
    switch (kind) {
      case AttentionKind::Spatial:
        if (mats.size() != n) throw std::invalid_argument("attention: expected one spatial matrix per frame");
        for (const Matrix& m : mats)
          if (m.rows != hw || m.cols != hw)
            throw std::invalid_argument("attention: spatial matrix shape mismatch");
        break;
      case AttentionKind::Temporal:
        if (mats.size() != hw) throw std::invalid_argument("attention: expected one temporal matrix per position");
        for (const Matrix& m : mats)
          if (m.rows != n || m.cols != n)
            throw std::invalid_argument("attention: temporal matrix shape mismatch");
        break;
      case AttentionKind::ThreeD:
        if (mats.size() != 1 || mats[0].rows != hw * n || mats[0].cols != hw * n)
          throw std::invalid_argument("attention: 3d matrix shape mismatch");
        break;
    }
  }

private:
  void require(AttentionKind k, int idx, int limit) const {
    if (kind != k) throw std::invalid_argument("attention: wrong kind for accessor");
    if (idx < 0 || idx >= limit)
      throw std::invalid_argument("attention: index " + std::to_string(idx) +
                                  " out of range");
  }
};

} // namespace fb4
