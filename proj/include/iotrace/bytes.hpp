#pragma once

// Little-endian byte buffers shared by every on-disk and in-signature encoding.

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "iotrace/error.hpp"

namespace iotrace {

class ByteWriter {
 public:
  ByteWriter() { buf_.reserve(64); }

  template <class T>
    requires std::is_integral_v<T>
  void put(T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    char le[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) le[i] = static_cast<char>(static_cast<std::uint8_t>(u >> (8 * i)));
    buf_.append(le, sizeof(T));
  }

  void put_bytes(std::string_view bytes) { buf_.append(bytes); }

  /// u32 length prefix followed by the raw bytes.
  void put_string(std::string_view bytes) {
    put(static_cast<std::uint32_t>(bytes.size()));
    put_bytes(bytes);
  }

  std::size_t size() const noexcept { return buf_.size(); }
  const std::string& bytes() const& noexcept { return buf_; }
  std::string take() && noexcept { return std::move(buf_); }

 private:
  std::string buf_;
};

/// Thrown by ByteReader when the input is shorter than the requested field.
/// Archive code converts it into a located CorruptArchiveError.
class DecodeError : public Error {
 public:
  DecodeError(std::size_t offset, const std::string& reason)
      : Error(Errc::CorruptArchive, reason + " at byte " + std::to_string(offset)),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data, std::size_t base_offset = 0)
      : data_(data), base_(base_offset) {}

  template <class T>
    requires std::is_integral_v<T>
  T get() {
    need(sizeof(T));
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<U>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::string_view get_string() { return get_bytes(get<std::uint32_t>()); }

  bool done() const noexcept { return pos_ == data_.size(); }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  /// Offset of the cursor relative to the start of the enclosing file.
  std::size_t offset() const noexcept { return base_ + pos_; }

  void expect_done(const char* what) const {
    if (!done()) throw DecodeError(offset(), std::string("trailing bytes after ") + what);
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw DecodeError(offset(), "unexpected end of data");
  }

  std::string_view data_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

}  // namespace iotrace
