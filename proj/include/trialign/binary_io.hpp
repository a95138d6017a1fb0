#pragma once

// Little-endian primitives shared by the embedding and checkpoint containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trialign/errors.hpp"

namespace trialign::binary {

class Writer {
 public:
  void bytes(std::string_view raw) { buffer_.append(raw); }

  template <std::unsigned_integral U>
  void uint(U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buffer_.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
    }
  }

  void f32(float value) { uint(std::bit_cast<std::uint32_t>(value)); }

  void f32s(std::span<const float> values) {
    for (float v : values) f32(v);
  }

  [[nodiscard]] const std::string& buffer() const { return buffer_; }

 private:
  std::string buffer_;
};

class Reader {
 public:
  Reader(std::string_view data, std::string context)
      : data_(data), context_(std::move(context)) {}

  std::string_view bytes(std::size_t count) {
    require(count);
    auto out = data_.substr(pos_, count);
    pos_ += count;
    return out;
  }

  template <std::unsigned_integral U>
  U uint() {
    require(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }

  void f32s(std::span<float> out) {
    if (out.size() > remaining() / 4) {
      throw FormatError(context_ + ": truncated payload (need " +
                        std::to_string(out.size() * 4) + " bytes, have " +
                        std::to_string(remaining()) + ")");
    }
    for (float& v : out) v = f32();
  }

  [[nodiscard]] std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void require(std::size_t count) const {
    if (count > remaining()) {
      throw FormatError(context_ + ": unexpected end of file at byte " + std::to_string(pos_));
    }
  }

  std::string_view data_;
  std::string context_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::string& path, std::string_view contents);

}  // namespace trialign::binary
