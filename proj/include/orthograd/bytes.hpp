#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "orthograd/common.hpp"

// Little-endian byte streams for the versioned binary formats (optimizer
// state blobs, checkpoints, replay files).  Byte order is fixed explicitly so
// payloads are portable across hosts; doubles travel as their IEEE-754 bits.

namespace orthograd::bytes {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void f64_span(std::span<const double> v) {
    for (double x : v) f64(x);
  }

  void str(const std::string& s) {
    u64(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  void raw(std::span<const std::uint8_t> data) {
    buf_.insert(buf_.end(), data.begin(), data.end());
  }

  const std::vector<std::uint8_t>& data() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> buf) : buf_(buf) {}

  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  void f64_into(std::span<double> out) {
    for (double& x : out) x = f64();
  }

  std::string str() {
    const std::uint64_t len = u64();
    need(len);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  std::vector<std::uint8_t> raw(std::uint64_t len) {
    need(len);
    std::vector<std::uint8_t> out(buf_.begin() + pos_, buf_.begin() + pos_ + len);
    pos_ += len;
    return out;
  }

  std::size_t remaining() const { return buf_.size() - pos_; }

  void expect_end() const {
    if (pos_ != buf_.size())
      throw DecodeError("payload has " + std::to_string(buf_.size() - pos_) +
                        " trailing bytes");
  }

 private:
  void need(std::size_t n) {
    if (buf_.size() - pos_ < n)
      throw DecodeError("payload truncated: need " + std::to_string(n) +
                        " bytes at offset " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

// Whole-file helpers.  Reads throw DecodeError (the caller wanted to parse
// the content); writes throw IoError.
std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> data);

}  // namespace orthograd::bytes
