#pragma once

// Canonical byte codec. Integers are fixed-width little-endian, byte-strings
// carry a u32 length prefix, lists carry a u32 count prefix, and fields are
// written in declaration order. Hashes over encoded bodies therefore agree
// across implementations.

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

#include "psl/bytes.hpp"

namespace psl {

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Writer {
 public:
  Writer() = default;
  explicit Writer(std::size_t reserve) { out_.reserve(reserve); }

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void boolean(bool v) { u8(v ? 1 : 0); }

  void count(std::size_t n) {
    if (n > std::numeric_limits<std::uint32_t>::max()) {
      throw CodecError("list too long for u32 count");
    }
    u32(static_cast<std::uint32_t>(n));
  }

  void bytes(ByteView b) {
    if (b.size() > std::numeric_limits<std::uint32_t>::max()) {
      throw CodecError("byte-string too long for u32 length");
    }
    u32(static_cast<std::uint32_t>(b.size()));
    raw(b);
  }
  void str(std::string_view s) {
    bytes(ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }

  /// Fixed-size field, no length prefix.
  void raw(ByteView b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void digest(const Digest& d) { raw(d); }

  std::size_t size() const { return out_.size(); }
  Bytes take() && { return std::move(out_); }
  const Bytes& view() const { return out_; }

 private:
  void put_le(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(ByteView in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  bool boolean() {
    auto v = u8();
    if (v > 1) throw CodecError("bad boolean byte");
    return v == 1;
  }

  /// Reads a list count and rejects counts that cannot possibly fit in the
  /// remaining input (every element occupies at least `min_elem` bytes).
  std::uint32_t count(std::size_t min_elem = 1) {
    auto n = u32();
    if (min_elem > 0 && static_cast<std::uint64_t>(n) * min_elem > remaining()) {
      throw CodecError("list count exceeds input");
    }
    return n;
  }

  Bytes bytes() {
    auto n = u32();
    need(n);
    Bytes b(in_.begin() + pos_, in_.begin() + pos_ + n);
    pos_ += n;
    return b;
  }
  std::string str() {
    auto b = bytes();
    return std::string(b.begin(), b.end());
  }

  template <std::size_t N>
  std::array<std::uint8_t, N> fixed() {
    need(N);
    std::array<std::uint8_t, N> a{};
    std::copy_n(in_.begin() + pos_, N, a.begin());
    pos_ += N;
    return a;
  }
  Digest digest() { return fixed<32>(); }

  std::size_t remaining() const { return in_.size() - pos_; }
  bool done() const { return pos_ == in_.size(); }
  void expect_done() const {
    if (!done()) throw CodecError("trailing bytes after body");
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw CodecError("unexpected end of input");
  }
  std::uint64_t get_le(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  ByteView in_;
  std::size_t pos_ = 0;
};

}  // namespace psl
