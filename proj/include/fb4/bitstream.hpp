#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace fb4 {

// Little-endian bit stream: bit k of the stream lives at byte k/8, position
// k%8, and multi-bit fields are written least-significant bit first.
class BitWriter {
public:
  void put(std::uint32_t value, int bits) {
    for (int i = 0; i < bits; ++i) {
      const std::size_t byte = nbits_ >> 3;
      if (byte >= bytes_.size()) bytes_.push_back(0);
      if ((value >> i) & 1u)
        bytes_[byte] |= static_cast<std::uint8_t>(1u << (nbits_ & 7));
      ++nbits_;
    }
  }

  std::uint64_t bit_count() const { return nbits_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t nbits_ = 0;
};

class BitReader {
public:
  BitReader(const std::uint8_t* data, std::uint64_t nbits)
      : data_(data), nbits_(nbits) {}

  std::uint32_t get(int bits) {
    std::uint32_t value = 0;
    for (int i = 0; i < bits; ++i) {
      if (pos_ >= nbits_) throw std::runtime_error("bitstream: truncated");
      const std::uint8_t byte = data_[pos_ >> 3];
      if ((byte >> (pos_ & 7)) & 1u) value |= 1u << i;
      ++pos_;
    }
    return value;
  }

  std::uint64_t remaining() const { return nbits_ - pos_; }

private:
  const std::uint8_t* data_;
  std::uint64_t nbits_;
  std::uint64_t pos_ = 0;
};

} // namespace fb4
