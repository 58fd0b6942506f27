#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fb4/bitstream.hpp"
#include "fb4/quant.hpp"
#include "fb4/tensor.hpp"

namespace fb4 {

// Residual blocks produced by activation decomposition, keyed by the salient
// tokens (rows) they belong to. Serialized as a second FBQ1 section.
struct ResidualSection {
  std::vector<std::uint64_t> token_ids;   // ascending
  std::vector<QuantizedBlock> blocks;     // token-major, blocks_per_row each

  bool operator==(const ResidualSection&) const = default;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(raw(4)); }
  std::uint64_t u64() { return raw(8); }

  std::span<const std::uint8_t> bytes(std::uint64_t n) {
    need(n);
    auto s = data_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }

  bool exhausted() const { return pos_ == data_.size(); }

private:
  std::uint64_t raw(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)])
           << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  void need(std::uint64_t n) const {
    if (pos_ + n > data_.size())
      throw std::runtime_error("container: truncated stream");
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// Per block: DID (5 bits), exponent as 5-bit two's complement, then one
// nibble per element with the sign in the MSB above the 3-bit code.
inline void pack_blocks(std::span<const QuantizedBlock> blocks, int block_size,
                        BitWriter& bw) {
  for (const QuantizedBlock& b : blocks) {
    bw.put(b.did, 5);
    bw.put(static_cast<std::uint32_t>(b.exponent) & 0x1fu, 5);
    for (int i = 0; i < block_size; ++i) {
      const std::uint32_t nibble =
          (static_cast<std::uint32_t>(b.signs[static_cast<std::size_t>(i)]) << 3) |
          b.codes[static_cast<std::size_t>(i)];
      bw.put(nibble, 4);
    }
  }
}

inline std::vector<QuantizedBlock> unpack_blocks(BitReader& br,
                                                 std::uint64_t count,
                                                 int block_size) {
  std::vector<QuantizedBlock> blocks(static_cast<std::size_t>(count));
  for (auto& b : blocks) {
    b.did = static_cast<std::uint8_t>(br.get(5));
    const std::uint32_t raw = br.get(5);
    b.exponent = static_cast<std::int8_t>(raw >= 16 ? static_cast<int>(raw) - 32
                                                    : static_cast<int>(raw));
    b.signs.resize(static_cast<std::size_t>(block_size));
    b.codes.resize(static_cast<std::size_t>(block_size));
    for (int i = 0; i < block_size; ++i) {
      const std::uint32_t nibble = br.get(4);
      b.signs[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(nibble >> 3);
      b.codes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(nibble & 7);
    }
  }
  return blocks;
}

inline void put_block_section(std::vector<std::uint8_t>& out,
                              std::span<const QuantizedBlock> blocks,
                              int block_size) {
  BitWriter bw;
  pack_blocks(blocks, block_size, bw);
  put_u64(out, blocks.size());
  put_u64(out, bw.bit_count());
  const auto bytes = bw.take();
  out.insert(out.end(), bytes.begin(), bytes.end());
}

inline std::vector<QuantizedBlock> get_block_section(ByteReader& r,
                                                     int block_size) {
  const std::uint64_t count = r.u64();
  const std::uint64_t nbits = r.u64();
  if (count > (1ULL << 40) || nbits > (1ULL << 46))
    throw std::runtime_error("container: block section too large");
  const std::uint64_t expect =
      count * (10 + 4 * static_cast<std::uint64_t>(block_size));
  if (nbits != expect)
    throw std::runtime_error("container: block section bit count mismatch");
  const auto bytes = r.bytes((nbits + 7) / 8);
  BitReader br(bytes.data(), nbits);
  return unpack_blocks(br, count, block_size);
}

} // namespace detail

inline constexpr std::uint32_t kFbq1Magic = 0x31514246; // "FBQ1"
inline constexpr std::uint32_t kFbt1Magic = 0x31544246; // "FBT1"
inline constexpr std::uint32_t kFbq1Version = 1;

// ---------------------------------------------------------------------------
// FBQ1: quantized container.
//   magic, version, formatbook hash, block_size, num_groups, rank, dims,
//   primary block section, residual flag [+ token ids + residual section].
// Block sections carry a block count, a bit count, and the packed stream.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> pack(const QuantizedTensor& qt,
                                      const ResidualSection* residual = nullptr) {
  std::vector<std::uint8_t> out;
  detail::put_u32(out, kFbq1Magic);
  detail::put_u32(out, kFbq1Version);
  detail::put_u64(out, qt.formatbook_hash);
  detail::put_u32(out, static_cast<std::uint32_t>(qt.layout.block_size));
  detail::put_u32(out, static_cast<std::uint32_t>(qt.layout.num_groups));
  detail::put_u32(out, static_cast<std::uint32_t>(qt.shape.size()));
  for (std::uint64_t d : qt.shape) detail::put_u64(out, d);
  detail::put_block_section(out, qt.blocks, qt.layout.block_size);
  out.push_back(residual ? 1 : 0);
  if (residual) {
    detail::put_u64(out, residual->token_ids.size());
    for (std::uint64_t id : residual->token_ids) detail::put_u64(out, id);
    detail::put_block_section(out, residual->blocks, qt.layout.block_size);
  }
  return out;
}

struct UnpackResult {
  QuantizedTensor tensor;
  std::optional<ResidualSection> residual;
};

inline UnpackResult unpack(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.u32() != kFbq1Magic) throw std::runtime_error("FBQ1: bad magic");
  if (r.u32() != kFbq1Version)
    throw std::runtime_error("FBQ1: unsupported version");
  UnpackResult res;
  res.tensor.formatbook_hash = r.u64();
  res.tensor.layout.block_size = static_cast<int>(r.u32());
  res.tensor.layout.num_groups = static_cast<int>(r.u32());
  res.tensor.layout.check();
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 16) throw std::runtime_error("FBQ1: bad rank");
  res.tensor.shape.resize(rank);
  for (auto& d : res.tensor.shape) d = r.u64();
  res.tensor.blocks =
      detail::get_block_section(r, res.tensor.layout.block_size);
  if (res.tensor.blocks.size() !=
      res.tensor.rows() * res.tensor.blocks_per_row())
    throw std::runtime_error("FBQ1: block count inconsistent with shape");
  const auto flag = r.bytes(1);
  if (flag[0] == 1) {
    ResidualSection rs;
    const std::uint64_t n_tokens = r.u64();
    if (n_tokens > res.tensor.rows())
      throw std::runtime_error("FBQ1: residual token count exceeds rows");
    rs.token_ids.resize(static_cast<std::size_t>(n_tokens));
    for (auto& id : rs.token_ids) {
      id = r.u64();
      if (id >= res.tensor.rows())
        throw std::runtime_error("FBQ1: residual token id out of range");
    }
    rs.blocks = detail::get_block_section(r, res.tensor.layout.block_size);
    if (rs.blocks.size() != rs.token_ids.size() * res.tensor.blocks_per_row())
      throw std::runtime_error("FBQ1: residual block count mismatch");
    res.residual = std::move(rs);
  } else if (flag[0] != 0) {
    throw std::runtime_error("FBQ1: bad residual flag");
  }
  if (!r.exhausted()) throw std::runtime_error("FBQ1: trailing bytes");
  return res;
}

// ---------------------------------------------------------------------------
// FBT1: float tensor file. magic, rank, 64-bit dims, row-major f32, all
// little-endian.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> fbt1_bytes(const Tensor& t) {
  static_assert(std::endian::native == std::endian::little,
                "FBT1 writer assumes a little-endian host");
  std::vector<std::uint8_t> out;
  detail::put_u32(out, kFbt1Magic);
  detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (std::uint64_t d : t.shape) detail::put_u64(out, d);
  const std::size_t off = out.size();
  out.resize(off + t.data.size() * 4);
  std::memcpy(out.data() + off, t.data.data(), t.data.size() * 4);
  return out;
}

inline Tensor parse_fbt1(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.u32() != kFbt1Magic) throw std::runtime_error("FBT1: bad magic");
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 16) throw std::runtime_error("FBT1: bad rank");
  std::vector<std::uint64_t> shape(rank);
  std::uint64_t n = 1;
  for (auto& d : shape) {
    d = r.u64();
    if (d > (1ULL << 40)) throw std::runtime_error("FBT1: dim too large");
    n *= d;
    if (n > (1ULL << 40)) throw std::runtime_error("FBT1: tensor too large");
  }
  const auto payload = r.bytes(n * 4);
  std::vector<float> data(static_cast<std::size_t>(n));
  std::memcpy(data.data(), payload.data(), static_cast<std::size_t>(n) * 4);
  if (!r.exhausted()) throw std::runtime_error("FBT1: trailing bytes");
  return Tensor(std::move(shape), std::move(data));
}

inline void write_file(const std::string& path,
                       std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open: " + path);
  const std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw std::runtime_error("read failed: " + path);
  return bytes;
}

inline void write_fbt1(const std::string& path, const Tensor& t) {
  const auto b = fbt1_bytes(t);
  write_file(path, b);
}

inline Tensor read_fbt1(const std::string& path) {
  const auto b = read_file(path);
  return parse_fbt1(b);
}

} // namespace fb4
