#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fb4 {

// Dense row-major float tensor. The innermost axis is the feature axis that
// quantization blocks run along.
struct Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::uint64_t> s, std::vector<float> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (element_count() != data.size())
      throw std::invalid_argument("tensor: shape/data size mismatch");
  }

  static Tensor zeros(std::vector<std::uint64_t> s) {
    std::uint64_t n = 1;
    for (auto d : s) n *= d;
    return Tensor(std::move(s), std::vector<float>(n, 0.0f));
  }

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  // Innermost-axis length and the number of rows it repeats over.
  std::uint64_t inner() const { return shape.empty() ? 0 : shape.back(); }
  std::uint64_t rows() const {
    if (shape.empty()) return 0;
    std::uint64_t r = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
    return r;
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

} // namespace fb4
